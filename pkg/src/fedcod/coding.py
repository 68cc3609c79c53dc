"""Linear coding of model partitions over the reals.

Models are flat float32 vectors. A model is zero-padded to a multiple of
``k`` and reshaped into a ``(k, P)`` partition matrix; an encoded block is a
single linear combination of the ``k`` rows. Coefficients are float64,
payloads float32.
"""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, replace

import numpy as np

from .errors import IncompatibleBlocks, InvalidParameter, NotDecodable

MIN_COEFFICIENT = 1e-6
PIVOT_TOL = 1e-9
# Rows whose residual after elimination is below this fraction of their own
# norm are refused: they would blow float32 payload rounding past 1e-4.
MIN_RELATIVE_RESIDUAL = 0.03

_AGREED_ENTROPY = 0x46434F44  # "FCOD"


class OriginKind(enum.Enum):
    SERVER = "server"
    CLIENT = "client"
    AGGREGATED = "aggregated"


class Offer(enum.Enum):
    ACCEPTED = "accepted"
    REDUNDANT_REJECTED = "redundant"
    NEAR_DEPENDENT_REJECTED = "near-dependent"
    COMPLETE = "complete"


@dataclass(eq=False)
class EncodedBlock:
    round: int
    origin: int
    block_index: int
    coeffs: np.ndarray
    payload: np.ndarray
    origin_kind: OriginKind = OriginKind.CLIENT
    agr_count: int = 1

    @property
    def k(self) -> int:
        return len(self.coeffs)

    def relabel(self, **changes) -> "EncodedBlock":
        """Copy with header fields changed; arrays are shared, not copied."""
        return replace(self, **changes)


def partition_length(length: int, k: int) -> int:
    if k < 1:
        raise InvalidParameter(f"k must be >= 1, got {k}")
    return -(-length // k)


def split(model, k: int) -> np.ndarray:
    """Zero-pad ``model`` to a multiple of ``k`` and return a ``(k, P)`` float32 view."""
    if k < 1:
        raise InvalidParameter(f"k must be >= 1, got {k}")
    flat = np.asarray(model, dtype=np.float32).ravel()
    if flat.size == 0:
        raise InvalidParameter("model must be non-empty")
    size = partition_length(flat.size, k)
    padded = np.zeros(size * k, dtype=np.float32)
    padded[: flat.size] = flat
    return padded.reshape(k, size)


def join(partitions: np.ndarray, length: int) -> np.ndarray:
    return np.asarray(partitions).reshape(-1)[:length]


def encode(partitions: np.ndarray, coeffs) -> np.ndarray:
    """Return the float32 payload ``sum_j coeffs[j] * partitions[j]``."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    parts = np.asarray(partitions)
    if parts.ndim != 2 or coeffs.ndim != 1 or coeffs.size != parts.shape[0]:
        raise InvalidParameter(
            f"coefficient count {coeffs.size} does not match {parts.shape[0]} partitions"
        )
    return (coeffs @ parts).astype(np.float32)


def random_coefficients(k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws on [-1, 1]; entries smaller than 1e-6 in magnitude are redrawn."""
    if k < 1:
        raise InvalidParameter(f"k must be >= 1, got {k}")
    out = rng.uniform(-1.0, 1.0, size=k)
    small = np.abs(out) < MIN_COEFFICIENT
    while small.any():
        out[small] = rng.uniform(-1.0, 1.0, size=int(small.sum()))
        small = np.abs(out) < MIN_COEFFICIENT
    return out


def cauchy_coefficients(j: int, k: int) -> np.ndarray:
    """Row ``j`` of the Cauchy matrix ``1 / (x_j + y_i)`` with ``x_j = k + j + 0.5``, ``y_i = i``.

    Any ``k`` distinct rows are invertible in exact arithmetic, but the matrix
    is Hilbert-like: its condition number passes 1e13 at ``k = 8``, so with
    float32 payloads it only decodes accurately for ``k <= 3``.
    :func:`agreed_coefficients` is the sequence the protocol uses by default.
    """
    if j < 0 or k < 1:
        raise InvalidParameter(f"need j >= 0 and k >= 1, got j={j}, k={k}")
    x = k + j + 0.5
    return 1.0 / (x + np.arange(k, dtype=np.float64))


@functools.lru_cache(maxsize=64)
def _agreed_basis(k: int) -> np.ndarray:
    attempt = 0
    while True:
        rng = np.random.default_rng(np.random.SeedSequence(_AGREED_ENTROPY, spawn_key=(k, 0, attempt)))
        q, r = np.linalg.qr(rng.standard_normal((k, k)))
        q = q * np.sign(np.diag(r))
        if np.all(np.abs(q) >= MIN_COEFFICIENT):
            q.setflags(write=False)
            return q
        attempt += 1


@functools.lru_cache(maxsize=4096)
def _agreed_row(j: int, k: int) -> np.ndarray:
    if j < k:
        row = np.array(_agreed_basis(k)[j])
    else:
        rng = np.random.default_rng(np.random.SeedSequence(_AGREED_ENTROPY, spawn_key=(k, 1, j)))
        row = random_coefficients(k, rng)
    row.setflags(write=False)
    return row


def agreed_coefficients(j: int, k: int) -> np.ndarray:
    """The ``j``-th coefficient row of the sequence every node derives identically.

    Rows ``0..k-1`` form an orthogonal matrix, so the ``r = 0`` plan always
    decodes in any arrival order; rows from ``k`` on are seeded uniform draws.
    The result depends only on ``(j, k)``; the returned array is read-only.
    """
    if j < 0 or k < 1:
        raise InvalidParameter(f"need j >= 0 and k >= 1, got j={j}, k={k}")
    return _agreed_row(j, k)


COEFFICIENT_SCHEMES = {
    "agreed": agreed_coefficients,
    "cauchy": cauchy_coefficients,
}


class Decoder:
    """Incremental receiver for one generation of ``k`` partitions.

    Rank decisions use a reduced echelon copy of the accepted coefficient
    rows; payloads are only touched by :meth:`finish`.
    """

    def __init__(self, k: int, pivot_tol: float = PIVOT_TOL,
                 min_residual: float = MIN_RELATIVE_RESIDUAL):
        if k < 1:
            raise InvalidParameter(f"k must be >= 1, got {k}")
        self.k = k
        self.pivot_tol = pivot_tol
        self.min_residual = min_residual
        self.rows: list[np.ndarray] = []
        self.payloads: list[np.ndarray] = []
        self._echelon: list[tuple[int, np.ndarray]] = []

    @property
    def rank(self) -> int:
        return len(self.rows)

    @property
    def complete(self) -> bool:
        return self.rank == self.k

    def offer(self, block: EncodedBlock) -> Offer:
        return self.offer_row(block.coeffs, block.payload)

    def offer_row(self, coeffs, payload) -> Offer:
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != (self.k,):
            raise InvalidParameter(f"expected {self.k} coefficients, got {coeffs.shape}")
        if self.payloads and len(payload) != len(self.payloads[0]):
            raise InvalidParameter("payload length differs from earlier blocks")
        if self.complete:
            return Offer.REDUNDANT_REJECTED
        residual = coeffs.copy()
        for col, row in self._echelon:
            if residual[col] != 0.0:
                residual -= residual[col] * row
        pivot = int(np.argmax(np.abs(residual)))
        if abs(residual[pivot]) <= self.pivot_tol:
            return Offer.REDUNDANT_REJECTED
        if np.linalg.norm(residual) < self.min_residual * np.linalg.norm(coeffs):
            return Offer.NEAR_DEPENDENT_REJECTED
        self._echelon.append((pivot, residual / residual[pivot]))
        self.rows.append(coeffs)
        self.payloads.append(np.asarray(payload, dtype=np.float32))
        return Offer.COMPLETE if self.complete else Offer.ACCEPTED

    def finish(self, original_length: int) -> np.ndarray:
        """Solve for the ``k`` partitions and return the un-padded model (float32)."""
        if not self.complete:
            raise NotDecodable(f"rank {self.rank} < k={self.k}")
        a = np.array(self.rows, dtype=np.float64)
        b = np.array(self.payloads, dtype=np.float64)
        x = solve_partial_pivot(a, b, self.pivot_tol)
        return x.reshape(-1)[:original_length].astype(np.float32)


def solve_partial_pivot(a: np.ndarray, b: np.ndarray, tol: float = PIVOT_TOL) -> np.ndarray:
    """Gaussian elimination with partial pivoting for ``a @ x = b``; ``b`` may be 2-D."""
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n:
        raise InvalidParameter("solve needs a square system")
    for col in range(n):
        p = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[p, col]) <= tol:
            raise NotDecodable(f"singular at column {col}")
        if p != col:
            a[[col, p]] = a[[p, col]]
            b[[col, p]] = b[[p, col]]
        factors = a[col + 1:, col] / a[col, col]
        if factors.size:
            a[col + 1:, col:] -= np.outer(factors, a[col, col:])
            b[col + 1:] -= np.multiply.outer(factors, b[col])
    x = np.empty_like(b)
    for col in range(n - 1, -1, -1):
        acc = b[col] - a[col, col + 1:] @ x[col + 1:] if col + 1 < n else b[col]
        x[col] = acc / a[col, col]
    return x


def aggregate_blocks(a: EncodedBlock, b: EncodedBlock) -> EncodedBlock:
    """Sum two same-index blocks that share a coefficient row."""
    if a.block_index != b.block_index or a.round != b.round:
        raise IncompatibleBlocks(
            f"index/round mismatch: ({a.round}, {a.block_index}) vs ({b.round}, {b.block_index})"
        )
    if a.k != b.k or not np.array_equal(a.coeffs, b.coeffs):
        raise IncompatibleBlocks(f"coefficient rows differ for index {a.block_index}")
    if a.payload.shape != b.payload.shape:
        raise IncompatibleBlocks("payload lengths differ")
    return EncodedBlock(
        round=a.round,
        origin=a.origin,
        block_index=a.block_index,
        coeffs=a.coeffs,
        payload=a.payload + b.payload,
        origin_kind=OriginKind.AGGREGATED,
        agr_count=a.agr_count + b.agr_count,
    )


def recode(rows, payloads, rng: np.random.Generator):
    """Fresh random combination of already-received rows (network-coding relay)."""
    weights = random_coefficients(len(rows), rng)
    coeffs = weights @ np.asarray(rows, dtype=np.float64)
    payload = (weights @ np.asarray(payloads, dtype=np.float64)).astype(np.float32)
    return coeffs, payload
