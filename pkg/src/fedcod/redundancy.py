"""Adaptive redundancy controller.

The server feeds it one communication time per round and reads back ``r``,
the number of encoded blocks each client produces beyond ``k``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

from .errors import InvalidConfig


class Phase(enum.Enum):
    COLD_START = "cold-start"
    STEADY = "steady"
    RECOVERING = "recovering"


@dataclass(frozen=True)
class RedundancyState:
    k: int
    r: int
    r_lb: int
    r_max: int
    lam: float
    window: int
    phase: Phase = Phase.COLD_START
    t_last: Optional[float] = None
    stable_rounds: int = 0
    reduce_step: int = 1
    recovery_factor: int = 2

    @property
    def ratio(self) -> float:
        return self.r / self.k


def controller_init(k: int, r_init: Optional[int] = None, r_lb_init: Optional[int] = None,
                    lam: float = 1.1, r_max: Optional[int] = None, window: int = 5,
                    reduce_step: int = 1, recovery_factor: int = 2) -> RedundancyState:
    """Start in cold-start with high redundancy (``r = k`` unless given)."""
    if k < 1:
        raise InvalidConfig(f"k must be >= 1, got {k}")
    r_init = k if r_init is None else r_init
    r_lb_init = math.ceil(k / 4) if r_lb_init is None else r_lb_init
    r_max = 2 * k if r_max is None else r_max
    if not 0 <= r_lb_init <= r_init <= r_max:
        raise InvalidConfig(f"need 0 <= r_lb ({r_lb_init}) <= r ({r_init}) <= r_max ({r_max})")
    if not lam > 1:
        raise InvalidConfig(f"lambda must exceed 1, got {lam}")
    if window < 1 or reduce_step < 1 or recovery_factor < 2:
        raise InvalidConfig("window and reduce_step must be >= 1, recovery_factor >= 2")
    return RedundancyState(k=k, r=r_init, r_lb=r_lb_init, r_max=r_max, lam=lam, window=window,
                           reduce_step=reduce_step, recovery_factor=recovery_factor)


def controller_update(state: RedundancyState, t_cur: float) -> RedundancyState:
    if not t_cur > 0:
        raise InvalidConfig(f"communication time must be positive, got {t_cur}")
    s = state
    if s.t_last is None:
        return replace(s, t_last=t_cur, phase=Phase.STEADY)

    r, r_lb, phase, stable = s.r, s.r_lb, s.phase, s.stable_rounds
    if phase == Phase.RECOVERING:
        if t_cur < s.t_last / s.lam:
            r = min(max(r, 1) * s.recovery_factor, s.r_max)
        else:
            phase = Phase.STEADY
    elif t_cur <= s.lam * s.t_last:
        r = max(r - s.reduce_step, r_lb)
        stable += 1
        if stable >= s.window:
            r_lb = max(r_lb - 1, 0)
            stable = 0
    else:
        r = min(max(r, 1) * s.recovery_factor, s.r_max)
        r_lb = min(max(r_lb * 2, r_lb + 1), s.r_max)
        r = max(r, r_lb)
        phase = Phase.RECOVERING
        stable = 0
    return replace(s, r=r, r_lb=r_lb, phase=phase, stable_rounds=stable, t_last=t_cur)
