"""Fixed big-endian frame layout for blocks and control messages.

Header (23 bytes)::

    magic     4s  b"FCOD"
    version   B   1
    msg_type  B   MsgType
    round     I
    origin    H
    index     H   block index (RoundStart: redundancy r)
    k         H
    flags     B   bit0 server origin, bit1 aggregated
    agr_count H
    payload   I   payload length in bytes

followed by ``k`` float64 coefficients (Block frames only) and the float32
payload. The coefficient count is not sent separately: a Block carries
exactly ``k`` coefficients and control frames carry none.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from .coding import EncodedBlock, OriginKind
from .errors import IncompleteFrame, InvalidFrame, MalformedFrame, UnsupportedFrame

MAGIC = b"FCOD"
VERSION = 1
HEADER = struct.Struct(">4sBBIHHHBHI")
HEADER_SIZE = HEADER.size
assert HEADER_SIZE == 23

FLAG_SERVER_ORIGIN = 0x01
FLAG_AGGREGATED = 0x02


class MsgType(enum.IntEnum):
    BLOCK = 1
    ROUND_START = 2
    DOWNLOAD_COMPLETE = 3
    UPLOAD_COMPLETE = 4
    DECODE_ACK = 5


@dataclass(eq=False)
class Frame:
    msg_type: MsgType
    round: int = 0
    origin: int = 0
    block_index: int = 0
    k: int = 0
    flags: int = 0
    agr_count: int = 1
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))
    payload: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))

    @property
    def size(self) -> int:
        return HEADER_SIZE + 8 * len(self.coefficients) + 4 * len(self.payload)

    @property
    def is_block(self) -> bool:
        return self.msg_type == MsgType.BLOCK

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.msg_type == other.msg_type
            and (self.round, self.origin, self.block_index, self.k, self.flags, self.agr_count)
            == (other.round, other.origin, other.block_index, other.k, other.flags, other.agr_count)
            and np.array_equal(np.asarray(self.coefficients, dtype=np.float64),
                               np.asarray(other.coefficients, dtype=np.float64))
            and np.array_equal(np.asarray(self.payload, dtype=np.float32),
                               np.asarray(other.payload, dtype=np.float32))
        )

    def __repr__(self):
        return (f"Frame({self.msg_type.name}, round={self.round}, origin={self.origin}, "
                f"index={self.block_index}, k={self.k}, flags={self.flags}, "
                f"agr={self.agr_count}, payload={len(self.payload)})")


def control(msg_type: MsgType, round: int, origin: int, k: int = 0, block_index: int = 0) -> Frame:
    return Frame(MsgType(msg_type), round=round, origin=origin, block_index=block_index, k=k)


def _check(frame: Frame) -> None:
    try:
        msg_type = MsgType(frame.msg_type)
    except ValueError:
        raise InvalidFrame(f"unknown message type {frame.msg_type!r}") from None
    limits = (("round", 0xFFFFFFFF), ("origin", 0xFFFF), ("block_index", 0xFFFF),
              ("k", 0xFFFF), ("flags", 0xFF), ("agr_count", 0xFFFF))
    for name, hi in limits:
        value = getattr(frame, name)
        if not isinstance(value, (int, np.integer)) or not 0 <= value <= hi:
            raise InvalidFrame(f"{name}={value!r} outside [0, {hi}]")
    if msg_type == MsgType.BLOCK:
        if len(frame.coefficients) != frame.k:
            raise InvalidFrame(f"block carries {len(frame.coefficients)} coefficients for k={frame.k}")
        if frame.k < 1:
            raise InvalidFrame("block needs k >= 1")
    elif len(frame.coefficients) or len(frame.payload):
        raise InvalidFrame(f"{msg_type.name} frames carry no coefficients or payload")
    if 4 * len(frame.payload) > 0xFFFFFFFF:
        raise InvalidFrame("payload too long")


def frame_encode(frame: Frame) -> bytes:
    _check(frame)
    payload = np.asarray(frame.payload, dtype=">f4")
    coeffs = np.asarray(frame.coefficients, dtype=">f8")
    head = HEADER.pack(MAGIC, VERSION, int(frame.msg_type), int(frame.round), int(frame.origin),
                       int(frame.block_index), int(frame.k), int(frame.flags),
                       int(frame.agr_count), payload.size * 4)
    return head + coeffs.tobytes() + payload.tobytes()


def frame_decode(data: bytes) -> Frame:
    data = bytes(data)
    if len(data) < HEADER_SIZE:
        raise IncompleteFrame(f"{len(data)} bytes, header needs {HEADER_SIZE}")
    (magic, version, msg_type, round_, origin, index, k, flags, agr_count,
     payload_len) = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise UnsupportedFrame(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedFrame(f"unsupported version {version}")
    try:
        msg_type = MsgType(msg_type)
    except ValueError:
        raise UnsupportedFrame(f"unknown message type {msg_type}") from None
    if payload_len % 4:
        raise MalformedFrame(f"payload length {payload_len} not a multiple of 4")
    n_coeffs = k if msg_type == MsgType.BLOCK else 0
    if msg_type != MsgType.BLOCK and payload_len:
        raise MalformedFrame(f"{msg_type.name} frame declares a payload")
    expected = HEADER_SIZE + 8 * n_coeffs + payload_len
    if len(data) < expected:
        raise IncompleteFrame(f"{len(data)} bytes, frame declares {expected}")
    if len(data) > expected:
        raise MalformedFrame(f"{len(data) - expected} trailing bytes")
    end = HEADER_SIZE + 8 * n_coeffs
    coeffs = np.frombuffer(data, dtype=">f8", count=n_coeffs, offset=HEADER_SIZE).astype(np.float64)
    payload = np.frombuffer(data, dtype=">f4", offset=end).astype(np.float32)
    return Frame(msg_type, round=round_, origin=origin, block_index=index, k=k, flags=flags,
                 agr_count=agr_count, coefficients=coeffs, payload=payload)


def frame_size_of(item) -> int:
    """On-wire size of a Frame, an EncodedBlock, or ``None`` (a bare control frame)."""
    if item is None:
        return HEADER_SIZE
    if isinstance(item, Frame):
        return item.size
    return HEADER_SIZE + 8 * len(item.coeffs) + 4 * len(item.payload)


def block_to_frame(block: EncodedBlock) -> Frame:
    flags = 0
    if block.origin_kind == OriginKind.SERVER:
        flags |= FLAG_SERVER_ORIGIN
    elif block.origin_kind == OriginKind.AGGREGATED:
        flags |= FLAG_AGGREGATED
    return Frame(MsgType.BLOCK, round=block.round, origin=block.origin,
                 block_index=block.block_index, k=block.k, flags=flags,
                 agr_count=block.agr_count, coefficients=block.coeffs, payload=block.payload)


def frame_to_block(frame: Frame) -> EncodedBlock:
    if frame.msg_type != MsgType.BLOCK:
        raise InvalidFrame(f"{frame.msg_type.name} frame is not a block")
    if frame.flags & FLAG_SERVER_ORIGIN:
        kind = OriginKind.SERVER
    elif frame.flags & FLAG_AGGREGATED:
        kind = OriginKind.AGGREGATED
    else:
        kind = OriginKind.CLIENT
    return EncodedBlock(round=frame.round, origin=frame.origin, block_index=frame.block_index,
                        coeffs=np.asarray(frame.coefficients, dtype=np.float64),
                        payload=np.asarray(frame.payload, dtype=np.float32),
                        origin_kind=kind, agr_count=frame.agr_count)
