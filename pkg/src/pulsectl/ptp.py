"""Two-node simplified PTP exchange over integer tick timestamps.

The primary sends Sync at t1 (primary clock), the secondary receives it at
t2 (secondary clock), answers with Delay_Req at t3 (secondary clock), and
the primary receives that at t4 (primary clock). Both clocks run at the
same rate; only a constant offset separates them.
"""

from __future__ import annotations

import csv
import enum
import io
import random
from dataclasses import dataclass, replace


class Role(enum.Enum):
    PRIMARY = "primary"
    SECONDARY = "secondary"


@dataclass(frozen=True)
class ClockNode:
    true_offset: int = 0
    role: Role = Role.SECONDARY

    def __post_init__(self):
        if self.role is Role.PRIMARY and self.true_offset != 0:
            raise ValueError("the primary clock defines zero offset")


@dataclass(frozen=True)
class PtpExchange:
    t1: int
    t2: int
    t3: int
    t4: int
    d_ps: int = 0
    d_sp: int = 0
    p: int = 0

    @property
    def timestamps(self) -> tuple[int, int, int, int]:
        return (self.t1, self.t2, self.t3, self.t4)


def _half(x: int) -> int:
    # round toward zero
    q = abs(x) // 2
    return q if x >= 0 else -q


def simulate_exchange(offset: int, d_ps: int, d_sp: int, p: int, t1: int = 0) -> PtpExchange:
    """Timestamps seen when the secondary clock leads the primary by ``offset``."""
    for name, v in (("d_ps", d_ps), ("d_sp", d_sp), ("p", p)):
        if v < 0:
            raise ValueError(f"{name} must be non-negative, got {v}")
    t2 = t1 + d_ps + offset
    t3 = t2 + p
    t4 = t3 + d_sp - offset
    return PtpExchange(t1, t2, t3, t4, d_ps, d_sp, p)


def compute_delay(x: PtpExchange) -> int:
    return _half((x.t4 - x.t1) - (x.t3 - x.t2))


def compute_offset(x: PtpExchange) -> int:
    return _half((x.t2 - x.t1) - (x.t4 - x.t3))


def apply_correction(secondary: ClockNode, offset_estimate: int) -> ClockNode:
    return replace(secondary, true_offset=secondary.true_offset - offset_estimate)


@dataclass(frozen=True)
class Trial:
    trial: int
    true_offset: int
    estimated_offset: int
    residual: int
    corrected_offset: int
    d_ps: int
    d_sp: int
    delay_estimate: int


def run_trials(trials: int, offset_range: tuple[int, int], delay_range: tuple[int, int],
               proc_range: tuple[int, int] = (0, 0), asymmetry: int | None = 0,
               seed: int = 0) -> list[Trial]:
    """Randomized exchanges; ``residual`` is estimated minus true offset.

    ``asymmetry`` fixes ``d_ps - d_sp``; ``None`` draws both delays
    independently from ``delay_range``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    for name, (lo, hi) in (("offset", offset_range), ("delay", delay_range), ("proc", proc_range)):
        if lo > hi:
            raise ValueError(f"{name} range is empty: [{lo}, {hi}]")
    if delay_range[0] < 0 or proc_range[0] < 0:
        raise ValueError("delays and processing gap must be non-negative")
    rng = random.Random(seed)
    out = []
    for k in range(trials):
        offset = rng.randint(*offset_range)
        p = rng.randint(*proc_range)
        d_sp = rng.randint(*delay_range)
        if asymmetry is None:
            d_ps = rng.randint(*delay_range)
        else:
            d_ps = d_sp + asymmetry
            if d_ps < 0:
                d_sp, d_ps = d_sp - d_ps, 0
        t1 = rng.randint(0, 1 << 40)
        x = simulate_exchange(offset, d_ps, d_sp, p, t1)
        est = compute_offset(x)
        node = apply_correction(ClockNode(offset), est)
        out.append(Trial(k, offset, est, est - offset, node.true_offset, d_ps, d_sp, compute_delay(x)))
    return out


def trials_csv(trials: list[Trial]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "true_offset", "estimated_offset", "residual"])
    for t in trials:
        w.writerow([t.trial, t.true_offset, t.estimated_offset, t.residual])
    w.writerow(["# max_abs_residual", max(abs(t.residual) for t in trials), "", ""])
    return buf.getvalue()
