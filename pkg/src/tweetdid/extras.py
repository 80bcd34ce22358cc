"""
Benjamini-Hochberg adjustment, covariate balance, placebo groups and
group-period outcome shares.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .panel import Panel, ValidationError

SMD_THRESHOLD = 0.1


@dataclass(frozen=True)
class PValueFamily:
    labels: tuple[str, ...]
    p: tuple[float, ...]
    m: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        if len(self.labels) != len(self.p):
            raise ValueError("labels and p-values differ in length")
        if not self.p:
            raise ValueError("p-value family is empty")
        if any(not (0.0 <= x <= 1.0) for x in self.p):
            raise ValueError("p-values must lie in [0, 1]")
        if self.m is None:
            object.__setattr__(self, "m", len(self.p))
        elif self.m < len(self.p):
            raise ValueError("family size m is smaller than the number of p-values")

    @classmethod
    def of(cls, p: Sequence[float], labels: Sequence[str] | None = None, m: int | None = None) -> "PValueFamily":
        labels = labels if labels is not None else [str(i) for i in range(len(p))]
        return cls(tuple(labels), tuple(p), m)


def bh_adjust(family: PValueFamily | Sequence[float]) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order.

    >>> bh_adjust([0.01, 0.02, 0.03, 0.04]).tolist()
    [0.04, 0.04, 0.04, 0.04]
    """
    if not isinstance(family, PValueFamily):
        family = PValueFamily.of(family)
    p = np.asarray(family.p)
    order = np.argsort(p, kind="stable")
    ranks = np.arange(1, len(p) + 1)
    scaled = np.minimum(1.0, p[order] * (family.m / ranks))
    adj_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty_like(p)
    out[order] = adj_sorted
    return out


def balance_check(
    covariates: pd.DataFrame,
    groups: Mapping[str, int] | pd.Series,
    threshold: float = SMD_THRESHOLD,
) -> pd.DataFrame:
    """Compare municipality covariates between treated (1) and control (0).

    ``covariates`` is indexed by municipality. SMD divides the mean
    difference by the pooled SD and the p-value is from the pooled two-sample
    t-test. A covariate with zero pooled SD gets ``smd = 0``, ``p = nan``
    and ``degenerate = True`` and is never flagged.
    """
    groups = pd.Series(groups) if not isinstance(groups, pd.Series) else groups
    groups.index = groups.index.astype(str)
    cov = covariates.copy()
    cov.index = cov.index.astype(str)
    missing = sorted(set(cov.index) - set(groups.index))
    if missing:
        raise ValidationError(f"municipalities without group assignment: {missing[:5]}")
    g = groups.reindex(cov.index).astype(int).to_numpy()
    if (g == 1).sum() < 2 or (g == 0).sum() < 2:
        raise ValidationError("balance check needs at least 2 municipalities per group")
    rows = []
    for name in cov.columns:
        x = pd.to_numeric(cov[name], errors="raise").to_numpy(dtype=float)
        xt, xc = x[g == 1], x[g == 0]
        nt, nc = len(xt), len(xc)
        pooled = math.sqrt(((nt - 1) * xt.var(ddof=1) + (nc - 1) * xc.var(ddof=1)) / (nt + nc - 2))
        diff = xt.mean() - xc.mean()
        degenerate = pooled == 0.0
        if degenerate:
            smd, p = 0.0, math.nan
        else:
            smd = diff / pooled
            p = float(stats.ttest_ind(xt, xc, equal_var=True).pvalue)
        rows.append(
            {
                "covariate": name,
                "mean_t": xt.mean(),
                "mean_c": xc.mean(),
                "diff": diff,
                "smd": smd,
                "p": p,
                "flag": (not degenerate) and abs(smd) > threshold,
                "degenerate": degenerate,
            }
        )
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class MortalityProfile:
    municipality: str
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"{self.municipality}: non-finite excess mortality")
        object.__setattr__(self, "values", vals)


def load_mortality(path: str | Path) -> list[MortalityProfile]:
    """Read ``municipality,month,excess_mortality`` records.

    Months are ordered by first appearance in the file; every municipality
    must report every month.
    """
    table: dict[str, dict[str, float]] = {}
    months: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for n, row in enumerate(csv.DictReader(fh), start=2):
            try:
                muni, month, v = row["municipality"], row["month"], float(row["excess_mortality"])
            except (KeyError, TypeError, ValueError):
                raise ValidationError(f"mortality file row {n}: malformed record") from None
            if month not in months:
                months.append(month)
            table.setdefault(muni, {})[month] = v
    out = []
    for muni in sorted(table):
        if set(table[muni]) != set(months):
            raise ValidationError(f"municipality {muni!r} lacks months {sorted(set(months) - set(table[muni]))}")
        out.append(MortalityProfile(muni, tuple(table[muni][m] for m in months)))
    return out


def reference_profile(profiles: Sequence[MortalityProfile], members: Sequence[str]) -> np.ndarray:
    """Average profile over ``members`` (e.g. the red-zone municipalities)."""
    members = set(members)
    vals = [p.values for p in profiles if p.municipality in members]
    if not vals:
        raise ValidationError("no profiles for the reference group")
    return np.mean(np.array(vals), axis=0)


@dataclass(frozen=True)
class PlaceboGroups:
    treated: tuple[str, ...]
    control: tuple[str, ...]
    distances: Mapping[str, float]


def placebo_groups(profiles: Sequence[MortalityProfile], reference, k: int) -> PlaceboGroups:
    """The ``k`` profiles closest to ``reference`` and the ``k`` most distant.

    Distances are Euclidean; ties break on municipality name.
    """
    ref = np.asarray(reference, dtype=float)
    if k < 1:
        raise ValueError("k must be positive")
    if 2 * k > len(profiles):
        raise ValueError(f"need at least {2 * k} profiles, got {len(profiles)}")
    names = [p.municipality for p in profiles]
    if len(set(names)) != len(names):
        raise ValueError("duplicate municipality in profiles")
    dist = {}
    for p in profiles:
        v = np.asarray(p.values)
        if v.shape != ref.shape:
            raise ValueError(f"{p.municipality}: profile dimension {v.shape} differs from reference {ref.shape}")
        dist[p.municipality] = float(np.linalg.norm(v - ref))
    ranked = sorted(dist, key=lambda m: (dist[m], m))
    return PlaceboGroups(tuple(ranked[:k]), tuple(reversed(ranked[-k:])), dist)


def placebo_panel(panel: Panel, groups: PlaceboGroups) -> Panel:
    """Rows from the placebo municipalities with the group indicator reassigned."""
    muni = panel.column("municipality")
    keep = np.isin(muni, groups.treated + groups.control)
    sub = panel.subset(keep)
    return sub.with_groups(np.isin(sub.column("municipality"), groups.treated).astype(np.int8))


def group_shares(
    panel: Panel,
    outcome: str,
    topic: str | None = None,
    level: float = 0.95,
    exact: bool = False,
) -> pd.DataFrame:
    """Mean outcome share per (group, period) with a confidence interval.

    The default interval is the normal approximation, clipped to [0, 1];
    ``exact=True`` gives Clopper-Pearson. Empty cells are omitted and listed
    in ``result.attrs["notes"]``.
    """
    y = panel.outcome(outcome, topic)
    group = panel.column("group")
    period = panel.column("period")
    z = stats.norm.ppf(0.5 + level / 2)
    rows, notes = [], []
    for g in (1, 0):
        for t in sorted(set(int(p) for p in panel.periods)):
            cell = y[(group == g) & (period == t)]
            n = len(cell)
            if n == 0:
                notes.append(f"empty cell: group={g} period={t}")
                continue
            k = int(cell.sum())
            share = k / n
            if exact:
                ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
                lo, hi = ci.low, ci.high
            else:
                half = z * math.sqrt(share * (1 - share) / n)
                lo, hi = max(0.0, share - half), min(1.0, share + half)
            rows.append({"group": g, "period": t, "n": n, "share": share, "lo": lo, "hi": hi})
    out = pd.DataFrame(rows, columns=["group", "period", "n", "share", "lo", "hi"])
    out.attrs["notes"] = notes
    return out
