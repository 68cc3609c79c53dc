"""Fluid link model: piecewise-constant bandwidth and fair-shared NIC caps.

Rates are in Mbps, sizes in bytes, times in seconds. Each directed link
carries at most one frame per lane (control, data) at a time; everything
else waits in the sender's queues.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidConfig

FAULT_FLOOR = 0.1
DEFAULT_NIC_CAP = 10_000.0
DEFAULT_RESAMPLE = 10.0
_BW_STREAM = 0xB4D


@dataclass
class LinkModel:
    src: int
    dst: int
    mean_bw: float
    var_bw: float = 0.0
    resample_interval: float = DEFAULT_RESAMPLE
    fault_schedule: list = field(default_factory=list)
    fault_floor: float = FAULT_FLOOR
    latency: float = 0.0

    def __post_init__(self):
        if not self.mean_bw > 0:
            raise InvalidConfig(f"link {self.src}->{self.dst}: mean bandwidth must be positive")
        if self.var_bw < 0 or self.resample_interval <= 0 or self.latency < 0:
            raise InvalidConfig(f"link {self.src}->{self.dst}: bad variance/interval/latency")
        self.fault_schedule = [(float(a), float(b)) for a, b in self.fault_schedule]

    @property
    def bounds(self):
        return 0.01 * self.mean_bw, 10.0 * self.mean_bw

    def in_fault(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.fault_schedule)


def _interval_draw(link: LinkModel, slot: int, seed: int) -> float:
    if link.var_bw == 0:
        return link.mean_bw
    ss = np.random.SeedSequence(seed, spawn_key=(_BW_STREAM, link.src, link.dst, slot))
    value = np.random.default_rng(ss).normal(link.mean_bw, math.sqrt(link.var_bw))
    lo, hi = link.bounds
    return float(min(max(value, lo), hi))


def sample_bandwidth(link: LinkModel, t: float, seed: int) -> float:
    """Bandwidth of ``link`` at time ``t``.

    The value is a function of ``(seed, link, t // resample_interval)`` only,
    so it is piecewise constant and independent of query order.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if link.in_fault(t):
        return link.fault_floor
    return _interval_draw(link, int(t // link.resample_interval), seed)


class BandwidthProcess:
    """Cached bandwidth lookups for one link plus a runtime fault switch."""

    def __init__(self, link: LinkModel, seed: int):
        self.link = link
        self.seed = seed
        self.forced_fault = False
        self._cache: dict[int, float] = {}

    def rate(self, t: float) -> float:
        link = self.link
        if self.forced_fault or link.in_fault(t):
            return link.fault_floor
        slot = int(t // link.resample_interval)
        value = self._cache.get(slot)
        if value is None:
            value = self._cache[slot] = _interval_draw(link, slot, self.seed)
        return value

    def next_change(self, t: float) -> float:
        link = self.link
        nxt = math.inf
        if link.var_bw > 0:
            step = link.resample_interval
            nxt = (math.floor(t / step) + 1) * step
            if nxt <= t:
                nxt += step
        for a, b in link.fault_schedule:
            if a > t:
                nxt = min(nxt, a)
            if b > t:
                nxt = min(nxt, b)
        return nxt


class ScheduleProcess:
    """Explicit piecewise bandwidth ``[(start, mbps), ...]``; handy for tests."""

    def __init__(self, steps):
        self.steps = sorted((float(t), float(v)) for t, v in steps)
        self.forced_fault = False
        self.link = None

    def rate(self, t: float) -> float:
        value = self.steps[0][1]
        for start, v in self.steps:
            if start <= t:
                value = v
        return value

    def next_change(self, t: float) -> float:
        for start, _ in self.steps:
            if start > t:
                return start
        return math.inf


class Transfer:
    __slots__ = ("src", "dst", "lane", "frame", "size", "remaining", "rate", "start", "tag")

    def __init__(self, src, dst, lane, frame, size, start, tag=None):
        self.src = src
        self.dst = dst
        self.lane = lane
        self.frame = frame
        self.size = size
        self.remaining = 8.0 * size
        self.rate = 0.0
        self.start = start
        self.tag = tag

    @property
    def bytes_sent(self) -> int:
        return self.size - math.ceil(self.remaining / 8.0 - 1e-9)


class FluidNetwork:
    """Active transfers progress at ``min(link share, egress share, ingress share)``."""

    EPS_BITS = 1e-3

    def __init__(self, processes: dict, caps: dict | None = None, now: float = 0.0):
        self.processes = processes
        self.caps = caps or {}
        self.now = now
        self.active: list[Transfer] = []
        self.lanes: dict[tuple, Transfer] = {}

    def cap(self, node, direction: int) -> float:
        c = self.caps.get(node)
        if c is None:
            return DEFAULT_NIC_CAP
        return c[direction]

    def busy(self, src, dst, lane) -> bool:
        return (src, dst, lane) in self.lanes

    def start(self, src, dst, lane, frame, size, tag=None) -> Transfer:
        if size <= 0:
            raise ValueError("frame size must be positive")
        if (src, dst) not in self.processes:
            raise InvalidConfig(f"no link {src}->{dst}")
        tr = Transfer(src, dst, lane, frame, size, self.now, tag)
        self.active.append(tr)
        self.lanes[(src, dst, lane)] = tr
        self.recompute()
        return tr

    def remove(self, tr: Transfer) -> None:
        self.active.remove(tr)
        del self.lanes[(tr.src, tr.dst, tr.lane)]
        self.recompute()

    def recompute(self) -> None:
        per_link: dict = {}
        out_n: dict = {}
        in_n: dict = {}
        for tr in self.active:
            key = (tr.src, tr.dst)
            per_link[key] = per_link.get(key, 0) + 1
            out_n[tr.src] = out_n.get(tr.src, 0) + 1
            in_n[tr.dst] = in_n.get(tr.dst, 0) + 1
        t = self.now
        for tr in self.active:
            bw = self.processes[(tr.src, tr.dst)].rate(t) / per_link[(tr.src, tr.dst)]
            tr.rate = min(bw, self.cap(tr.src, 0) / out_n[tr.src],
                          self.cap(tr.dst, 1) / in_n[tr.dst])

    def next_completion(self) -> float:
        best = math.inf
        for tr in self.active:
            if tr.rate > 0:
                best = min(best, self.now + tr.remaining / (tr.rate * 1e6))
        return best

    def next_rate_change(self) -> float:
        best = math.inf
        seen = set()
        for tr in self.active:
            key = (tr.src, tr.dst)
            if key not in seen:
                seen.add(key)
                best = min(best, self.processes[key].next_change(self.now))
        return best

    def advance(self, t: float) -> list[Transfer]:
        """Move the clock to ``t`` and return the transfers that finished."""
        dt = t - self.now
        if dt < 0:
            raise ValueError("time went backwards")
        done = []
        for tr in self.active:
            tr.remaining -= tr.rate * 1e6 * dt
            if tr.remaining <= self.EPS_BITS:
                tr.remaining = 0.0
                done.append(tr)
        self.now = t
        for tr in done:
            self.active.remove(tr)
            del self.lanes[(tr.src, tr.dst, tr.lane)]
        self.recompute()
        return done


def transfer(frame_bytes: int, process, node_caps=None, start_t: float = 0.0,
             src=0, dst=1) -> float:
    """End time of a lone transfer of ``frame_bytes`` starting at ``start_t``."""
    if frame_bytes <= 0:
        raise ValueError("frame_bytes must be positive")
    if isinstance(process, LinkModel):
        process = BandwidthProcess(process, 0)
    net = FluidNetwork({(src, dst): process}, node_caps, now=start_t)
    net.start(src, dst, "data", None, frame_bytes)
    while net.active:
        t = min(net.next_completion(), net.next_rate_change())
        if math.isinf(t):
            raise RuntimeError("transfer cannot progress")
        net.advance(t)
    return net.now
