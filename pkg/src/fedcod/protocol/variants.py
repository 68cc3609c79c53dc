from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from ..coding import COEFFICIENT_SCHEMES, partition_length
from ..errors import InvalidParameter

SERVER = 0xFFFF


class Variant(str, enum.Enum):
    BASELINE = "baseline"
    HIERFL = "hierfl"
    D1_NC = "d1-nc"
    D2_C = "d2-c"
    U1_C = "u1-c"
    U2_AGR = "u2-agr"
    U3_AGR = "u3-agr"
    FEDCOD = "fedcod"
    FEDCOD_ADAPTIVE = "fedcod-adaptive"


class Download(enum.Enum):
    DIRECT = "direct"      # whole model, server -> every client
    TREE = "tree"          # whole model via cluster centers
    RECODE = "recode"      # coded; clients forward fresh recombinations
    FORWARD = "forward"    # coded; clients forward server blocks verbatim


class Upload(enum.Enum):
    DIRECT = "direct"
    TREE = "tree"
    RELAY = "relay"            # coded, per-client decode, neighbours relay spares
    AGR_NOWAIT = "agr-nowait"
    AGR_WAIT = "agr-wait"


MODES = {
    Variant.BASELINE: (Download.DIRECT, Upload.DIRECT),
    Variant.HIERFL: (Download.TREE, Upload.TREE),
    Variant.D1_NC: (Download.RECODE, Upload.DIRECT),
    Variant.D2_C: (Download.FORWARD, Upload.DIRECT),
    Variant.U1_C: (Download.DIRECT, Upload.RELAY),
    Variant.U2_AGR: (Download.DIRECT, Upload.AGR_NOWAIT),
    Variant.U3_AGR: (Download.DIRECT, Upload.AGR_WAIT),
    Variant.FEDCOD: (Download.FORWARD, Upload.AGR_WAIT),
    Variant.FEDCOD_ADAPTIVE: (Download.FORWARD, Upload.AGR_WAIT),
}


def parse_variant(name) -> Variant:
    if isinstance(name, Variant):
        return name
    try:
        return Variant(str(name).strip().lower())
    except ValueError:
        known = ", ".join(v.value for v in Variant)
        raise InvalidParameter(f"unknown variant {name!r} (known: {known})") from None


def download_mode(variant: Variant) -> Download:
    return MODES[variant][0]


def upload_mode(variant: Variant) -> Upload:
    return MODES[variant][1]


def is_agr(variant: Variant) -> bool:
    return upload_mode(variant) in (Upload.AGR_WAIT, Upload.AGR_NOWAIT)


def uses_redundancy(variant: Variant) -> bool:
    return upload_mode(variant) in (Upload.RELAY, Upload.AGR_WAIT, Upload.AGR_NOWAIT)


@dataclass(frozen=True)
class RoundSpec:
    """Everything the nodes agree on before a round starts."""

    round: int
    variant: Variant
    n: int
    k: int
    r: int
    model_length: int
    weights: tuple
    coefficients: str = "agreed"
    agr_window: float = 0.0
    coding_cost: float = 0.0
    routes: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if self.k < 1 or self.n < 1 or self.r < 0:
            raise InvalidParameter(f"bad round shape n={self.n} k={self.k} r={self.r}")
        if len(self.weights) != self.n:
            raise InvalidParameter("one aggregation weight per client required")
        if self.coefficients not in COEFFICIENT_SCHEMES:
            raise InvalidParameter(f"unknown coefficient scheme {self.coefficients!r}")

    @property
    def download(self) -> Download:
        return download_mode(self.variant)

    @property
    def upload(self) -> Upload:
        return upload_mode(self.variant)

    @property
    def part_len(self) -> int:
        return partition_length(self.model_length, self.k)

    def row(self, j: int):
        return COEFFICIENT_SCHEMES[self.coefficients](j, self.k)
