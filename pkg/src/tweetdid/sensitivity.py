"""
Relative-magnitudes sensitivity for the first post-period effect.

Post-treatment departures from parallel trends are bounded by ``Mbar``
times the largest pre-treatment violation ``b``. The interval used here
adds the worst-case bias ``Mbar * b`` on both sides of the conventional
interval. That fixed-bias construction is conservative: it is never
narrower than the conditional or FLCI intervals, so a conclusion that is
"robust at Mbar" here remains robust there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .estimators import EventStudyResult

DEFAULT_GRID = (0.0, 0.5, 1.0, 1.5, 2.0)
METHOD = "conservative fixed-bias"


def max_pre_violation(es: EventStudyResult, mode: str = "consecutive") -> float:
    """Largest pre-period violation ``b``.

    ``consecutive`` takes the largest absolute change between adjacent
    pre-period coefficients, with the baseline counted as 0. ``raw`` takes
    the largest absolute pre-period coefficient.
    """
    pre = sorted(es.pre, key=lambda c: c.relative_period)
    if not pre:
        raise ValueError("event study has no pre-period coefficients")
    path = np.array([c.estimate for c in pre] + [0.0])
    if mode == "consecutive":
        return float(np.max(np.abs(np.diff(path))))
    if mode == "raw":
        return float(np.max(np.abs(path[:-1])))
    raise ValueError(f"unknown mode {mode!r}")


def robust_ci(delta0: float, se: float, b: float, mbar: float, level: float = 0.95) -> tuple[float, float]:
    """``[delta0 - mbar*b - z*se, delta0 + mbar*b + z*se]``.

    >>> [round(x, 4) for x in robust_ci(0.1, 0.02, 0.05, 1.0)]
    [0.0108, 0.1892]
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if se <= 0:
        raise ValueError("se must be positive")
    if mbar < 0 or b < 0:
        raise ValueError("mbar and b must be non-negative")
    z = stats.norm.ppf(0.5 + level / 2)
    half = mbar * b + z * se
    return delta0 - half, delta0 + half


@dataclass(frozen=True)
class SensitivityResult:
    mbar_grid: tuple[float, ...]
    intervals: tuple[tuple[float, float], ...]
    max_pre_violation: float
    breakdown_mbar: float | None
    delta0: float
    se: float
    level: float = 0.95
    method: str = METHOD

    @property
    def excludes_zero(self) -> tuple[bool, ...]:
        return tuple(not (lo <= 0 <= hi) for lo, hi in self.intervals)

    @property
    def not_robust(self) -> bool:
        """Significant at Mbar = 0 but not at the next grid value."""
        ex = self.excludes_zero
        return ex[0] and (len(ex) < 2 or not ex[1])

    def records(self) -> list[tuple[float, float, float, bool]]:
        return [(m, lo, hi, e) for m, (lo, hi), e in zip(self.mbar_grid, self.intervals, self.excludes_zero)]

    def verdict(self) -> str:
        if self.breakdown_mbar is None:
            return "not significant at Mbar=0"
        if self.not_robust:
            return "not robust to any violations of parallel trends"
        return f"robust up to Mbar={self.breakdown_mbar:g}"


def breakdown_scan(
    es: EventStudyResult,
    grid: Sequence[float] = DEFAULT_GRID,
    level: float = 0.95,
    mode: str = "consecutive",
    rel: int = 0,
) -> SensitivityResult:
    """Robust CIs for the effect at relative period ``rel`` over an Mbar grid.

    The breakdown value is the largest grid Mbar whose CI still excludes 0.
    Since widths grow with Mbar, the CIs that exclude 0 always form a prefix
    of the grid.
    """
    grid = tuple(float(m) for m in grid)
    if not grid or grid[0] != 0.0 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly ascending and start at 0")
    c = es.coefficient(rel)
    return scan(c.estimate, c.se, max_pre_violation(es, mode), grid, level)


def scan(delta0: float, se: float, b: float, grid: Sequence[float] = DEFAULT_GRID, level: float = 0.95) -> SensitivityResult:
    grid = tuple(float(m) for m in grid)
    cis = tuple(robust_ci(delta0, se, b, m, level) for m in grid)
    breakdown = None
    for m, (lo, hi) in zip(grid, cis):
        if lo <= 0 <= hi:
            break
        breakdown = m
    return SensitivityResult(grid, cis, b, breakdown, delta0, se, level)
