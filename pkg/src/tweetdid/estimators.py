"""
Difference-in-differences estimators for repeated cross-sections.

* :func:`att_two_period` -- closed-form 2x2 DiD of group-period means.
* :func:`did_regression` -- the three-period regression with period dummies
  and treatment-group interactions, optionally with user fixed effects.
* :func:`att_gt` -- group-time ATT against not-yet-treated units, with a
  municipality cluster bootstrap.
* :func:`event_study` -- leads and lags around a baseline period plus a
  joint Wald test of the pre-period coefficients.
* :func:`spillover_rings` -- the regression augmented with post-period
  distance-band dummies for control units.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .ols import FitResult, ModelSpec, fit_model, inference_table, ring_label
from .panel import NEVER_TREATED, Panel

N_BOOT = 999


class IdentificationError(ValueError):
    pass


class NotIdentifiedError(IdentificationError):
    pass


@dataclass(frozen=True)
class AttEstimate:
    estimand: str
    estimate: float
    se: float
    ci: tuple[float, float]
    g: float | None = None
    t: int | None = None
    n_treated: int = 0
    n_control: int = 0
    p: float | None = None
    label: str = ""
    note: str = ""

    @property
    def lo(self) -> float:
        return self.ci[0]

    @property
    def hi(self) -> float:
        return self.ci[1]


def _cell_mean(y, mask, users=None) -> float:
    """Mean over tweets, or over user means when ``users`` is given."""
    if users is None:
        return float(np.mean(y[mask]))
    codes, _ = pd.factorize(users[mask])
    sums = np.bincount(codes, weights=y[mask])
    counts = np.bincount(codes)
    return float(np.mean(sums / counts))


def _did_of_means(y, period, treated, control, t, base, users=None, names=("treated", "control")):
    cells = {}
    for who, mask in zip(names, (treated, control)):
        for p in (t, base):
            sel = mask & (period == p)
            if not sel.any():
                raise IdentificationError(f"empty cell: {who} group in period {p}")
            cells[(who, p)] = _cell_mean(y, sel, users)
    a, b = names
    return (cells[(a, t)] - cells[(a, base)]) - (cells[(b, t)] - cells[(b, base)])


def _users(panel: Panel, unit: str):
    if unit == "tweet":
        return None
    if unit == "user":
        return panel.column("user_id")
    raise ValueError(f"unit must be 'tweet' or 'user', got {unit!r}")


def _t_ci(est: float, se: float, df: int, level: float = 0.95) -> tuple[float, float]:
    crit = stats.t.ppf(0.5 + level / 2, df)
    return est - crit * se, est + crit * se


def att_two_period(
    panel: Panel,
    outcome: str,
    topic: str | None = None,
    pre: int | None = None,
    post: int | None = None,
    unit: str = "tweet",
    cluster_key: str = "municipality",
) -> AttEstimate:
    """Two-group two-period DiD of group-period means.

    The point estimate is the treated group's pre-to-post change minus the
    control group's. The SE is the clustered SE of the interaction in the
    regression on the same two periods.
    """
    g = panel.schedule.first_cohort
    post = int(g) if post is None else post
    pre = _preceding(panel, post) if pre is None else pre
    y = panel.outcome(outcome, topic)
    period = panel.column("period")
    group = panel.column("group") == 1
    est = _did_of_means(y, period, group, ~group, post, pre, _users(panel, unit))

    sub = panel.restrict_periods([pre, post])
    spec = ModelSpec(outcome, ("intercept", "group", "period", "interaction"), baseline=pre, topic=topic)
    se, df = np.nan, 0
    if sub.n_clusters(cluster_key) >= 2:
        fit = fit_model(sub, spec, "cluster", cluster_key)
        se = fit.std_error(f"group x period={post}")
        df = fit.df_inference
    in_post = period == post
    return AttEstimate(
        estimand="ATT(1)",
        estimate=est,
        se=se,
        ci=_t_ci(est, se, df) if df > 0 else (np.nan, np.nan),
        g=g,
        t=post,
        n_treated=int((group & in_post).sum()),
        n_control=int((~group & in_post).sum()),
    )


def _did_terms(fe: str) -> tuple[str, ...]:
    if fe == "none":
        return ("intercept", "group", "period", "interaction")
    return ("intercept", "period", "interaction")


def did_fit(
    panel: Panel,
    outcome: str,
    fe: str = "within",
    vcov: str = "cluster",
    topic: str | None = None,
    cluster_key: str = "municipality",
    fe_key: str = "user_id",
) -> FitResult:
    periods = panel.periods
    if len(periods) < 2:
        raise IdentificationError("DiD regression needs at least two periods")
    spec = ModelSpec(outcome, _did_terms(fe), fe_mode=fe, fe_key=fe_key, baseline=int(periods.min()), topic=topic)
    return fit_model(panel, spec, vcov, cluster_key)


def did_regression(
    panel: Panel,
    outcome: str,
    fe: str = "within",
    vcov: str = "cluster",
    topic: str | None = None,
    cluster_key: str = "municipality",
) -> list[AttEstimate]:
    """Interaction (delta_t) and period (lambda_t) coefficients of the DiD regression.

    Only the first interaction is an ATT. Later interactions compare two
    treated cohorts and are returned with a ``descriptive`` note.
    """
    fit = did_fit(panel, outcome, fe, vcov, topic, cluster_key)
    tab = inference_table(fit).set_index("term")
    period = panel.column("period")
    group = panel.column("group") == 1
    first = panel.schedule.first_cohort
    out = []
    posts = [int(p) for p in panel.periods if p != panel.periods.min()]
    for kind in ("interaction", "period"):
        for p in posts:
            name = f"group x period={p}" if kind == "interaction" else f"period={p}"
            if name not in tab.index:
                continue
            row = tab.loc[name]
            note = ""
            if kind == "interaction" and p != first:
                note = "descriptive: compares two treated cohorts, not an ATT"
            out.append(
                AttEstimate(
                    estimand=f"delta_{p}" if kind == "interaction" else f"lambda_{p}",
                    estimate=float(row["estimate"]),
                    se=float(row["se"]),
                    ci=(float(row["lo"]), float(row["hi"])),
                    t=p,
                    n_treated=int((group & (period == p)).sum()),
                    n_control=int((~group & (period == p)).sum()),
                    p=float(row["p"]),
                    label=name,
                    note=note,
                )
            )
    return out


def _preceding(panel: Panel, g: int) -> int:
    """Last observed period before ``g`` (``g - 1`` on consecutive labels)."""
    before = [int(p) for p in panel.periods if p < g]
    if not before:
        raise NotIdentifiedError(f"no pre-treatment period before {g}")
    return max(before)


def _gt_masks(panel: Panel, g: int, t: int):
    cohort = panel.column("cohort")
    if t < g:
        raise NotIdentifiedError(f"ATT({g},{t}): t precedes the cohort's first treated period")
    if not np.any(cohort == g):
        raise IdentificationError(f"no units in cohort {g}")
    last = panel.schedule.last_cohort
    has_never = np.any(cohort == NEVER_TREATED)
    if not has_never and (g >= last or t >= last):
        raise NotIdentifiedError(
            f"ATT({g},{t}) is not identified: no not-yet-treated units remain (last cohort {last:g})"
        )
    treated = cohort == g
    control = cohort > t
    return treated, control


def att_gt(
    panel: Panel,
    g: int,
    t: int,
    outcome: str | None = None,
    topic: str | None = None,
    unit: str = "tweet",
    n_boot: int = N_BOOT,
    seed: int | np.random.SeedSequence | None = 0,
    cluster_key: str = "municipality",
    level: float = 0.95,
) -> AttEstimate:
    """Group-time ATT comparing cohort ``g`` with units not yet treated at ``t``.

    Both groups' changes run from the last period before ``g`` to ``t``. Inference is a
    nonparametric bootstrap over municipalities: SE is the bootstrap standard
    deviation and the CI uses percentiles.
    """
    outcome = outcome or panel.outcomes[0]
    treated, control = _gt_masks(panel, g, t)
    base = _preceding(panel, g)
    y = panel.outcome(outcome, topic)
    period = panel.column("period")
    users = _users(panel, unit)
    est = _did_of_means(y, period, treated, control, t, base, users)

    se, ci = np.nan, (np.nan, np.nan)
    clusters = panel.column(cluster_key)
    if n_boot > 0:
        draws = _cluster_bootstrap(y, period, treated, control, t, base, clusters, users, n_boot, seed)
        if draws.size >= 2:
            se = float(np.std(draws, ddof=1))
            alpha = 1 - level
            ci = (float(np.quantile(draws, alpha / 2)), float(np.quantile(draws, 1 - alpha / 2)))
    return AttEstimate(
        estimand="ATT(g,t)",
        estimate=est,
        se=se,
        ci=ci,
        g=g,
        t=t,
        n_treated=int((treated & (period == t)).sum()),
        n_control=int((control & (period == t)).sum()),
    )


def _cluster_bootstrap(y, period, treated, control, t, base, clusters, users, n_boot, seed):
    codes, uniq = pd.factorize(clusters, sort=True)
    n_cl = len(uniq)
    cells = [(treated, t), (treated, base), (control, t), (control, base)]
    sums = np.zeros((n_cl, 4))
    counts = np.zeros((n_cl, 4))
    for j, (mask, p) in enumerate(cells):
        sel = mask & (period == p)
        if users is None:
            sums[:, j] = np.bincount(codes[sel], weights=y[sel], minlength=n_cl)
            counts[:, j] = np.bincount(codes[sel], minlength=n_cl)
        else:
            # user means first, then each user counts once in its cluster
            ucodes, _ = pd.factorize(pd.Series(users[sel]) + "\x00" + pd.Series(codes[sel]).astype(str))
            usum = np.bincount(ucodes, weights=y[sel])
            ucnt = np.bincount(ucodes)
            ucl = np.zeros(len(usum), dtype=int)
            ucl[ucodes] = codes[sel]
            sums[:, j] = np.bincount(ucl, weights=usum / ucnt, minlength=n_cl)
            counts[:, j] = np.bincount(ucl, minlength=n_cl)
    rng = np.random.default_rng(seed)
    w = rng.multinomial(n_cl, np.full(n_cl, 1.0 / n_cl), size=n_boot).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        m = (w @ sums) / (w @ counts)
    draws = (m[:, 0] - m[:, 1]) - (m[:, 2] - m[:, 3])
    return draws[np.isfinite(draws)]


@dataclass(frozen=True)
class EventCoefficient:
    relative_period: int
    period: int
    estimate: float
    se: float
    lo: float
    hi: float
    p: float


@dataclass(frozen=True)
class EventStudyResult:
    """Per-relative-period interaction coefficients around a baseline.

    Pre-periods carry ``l = -m..-1`` counting back from the baseline, the
    first post period is ``l = 0``. The baseline itself is normalised to 0.
    """

    baseline: int
    coefficients: tuple[EventCoefficient, ...]
    wald: float
    wald_df: int
    wald_p: float
    fit: FitResult | None = field(default=None, repr=False, compare=False)
    baseline_label: str = "baseline"

    @property
    def pre(self) -> list[EventCoefficient]:
        return [c for c in self.coefficients if c.relative_period < 0]

    @property
    def post(self) -> list[EventCoefficient]:
        return [c for c in self.coefficients if c.relative_period >= 0]

    def coefficient(self, rel: int) -> EventCoefficient:
        for c in self.coefficients:
            if c.relative_period == rel:
                return c
        raise KeyError(rel)

    def records(self) -> list[tuple]:
        """Plot rows ``(relative_period, estimate, lo95, hi95)``; baseline included as 0."""
        rows = [(c.relative_period, c.estimate, c.lo, c.hi) for c in self.pre]
        rows.append((self.baseline_label, 0.0, 0.0, 0.0))
        rows += [(c.relative_period, c.estimate, c.lo, c.hi) for c in self.post]
        return rows


def event_study(
    panel: Panel,
    outcome: str,
    baseline: int,
    leads: int,
    lags: int,
    fe: str = "within",
    vcov: str = "cluster",
    topic: str | None = None,
    cluster_key: str = "municipality",
) -> EventStudyResult:
    """Leads-and-lags regression of the outcome on period x group interactions.

    Uses periods ``baseline - leads`` through ``baseline + lags + 1``.
    The joint pre-trend test is a Wald chi-square on the ``leads`` pre-period
    coefficients with the chosen covariance.
    """
    periods = set(int(p) for p in panel.periods)
    if baseline not in periods:
        raise IdentificationError(f"baseline period {baseline} not present")
    window = list(range(baseline - leads, baseline + lags + 2))
    missing = [p for p in window if p not in periods]
    if missing:
        raise IdentificationError(f"insufficient periods: {missing} missing for {leads} leads and {lags} lags")
    sub = panel.restrict_periods(window)
    spec = ModelSpec(outcome, _did_terms(fe), fe_mode=fe, baseline=baseline, topic=topic)
    fit = fit_model(sub, spec, vcov, cluster_key)
    tab = inference_table(fit).set_index("term")
    coefs = []
    for p in window:
        if p == baseline:
            continue
        name = f"group x period={p}"
        rel = p - baseline if p < baseline else p - baseline - 1
        if name not in tab.index:
            raise IdentificationError(f"coefficient for period {p} not identified (dropped as collinear)")
        r = tab.loc[name]
        coefs.append(
            EventCoefficient(rel, p, float(r["estimate"]), float(r["se"]), float(r["lo"]), float(r["hi"]), float(r["p"]))
        )
    pre_idx = [fit.index(f"group x period={p}") for p in window if p < baseline]
    if pre_idx:
        b = fit.coef[pre_idx]
        v = fit.vcov[np.ix_(pre_idx, pre_idx)]
        wald = float(b @ np.linalg.solve(v, b))
        wald_p = float(stats.chi2.sf(wald, len(pre_idx)))
    else:
        wald, wald_p = np.nan, np.nan
    return EventStudyResult(baseline, tuple(coefs), wald, len(pre_idx), wald_p, fit)


@dataclass(frozen=True)
class SpilloverResult:
    estimates: tuple[AttEstimate, ...]
    dropped: tuple[str, ...]
    naive_delta: float
    spill_control: float
    spill_treated: float = 0.0
    spill_treated_assumed: bool = True

    @property
    def att(self) -> float:
        """ATT implied by the decomposition ``naive = ATT + spill_treated - spill_control``."""
        return self.naive_delta - self.spill_treated + self.spill_control

    def get(self, estimand: str) -> AttEstimate:
        for e in self.estimates:
            if e.estimand == estimand or e.label == estimand:
                return e
        raise KeyError(estimand)


def spillover_rings(
    panel: Panel,
    outcome: str,
    rings,
    fe: str = "within",
    vcov: str = "cluster",
    topic: str | None = None,
    cluster_key: str = "municipality",
) -> SpilloverResult:
    """DiD regression plus post-period dummies for control units in distance bands.

    Each ring coefficient (eta) measures the spillover on control units in
    that band. Ring columns that are collinear with the rest of the design,
    e.g. ring users observed only after treatment under user fixed effects,
    are dropped with a warning instead of failing the fit.
    """
    if not panel.has_distance:
        raise ValueError("spillover rings need a distance_km column")
    rings = tuple((float(lo), float(hi)) for lo, hi in rings)
    for (a, b), (c, d) in zip(sorted(rings), sorted(rings)[1:]):
        if c < b:
            raise ValueError("ring bands overlap")
    first = int(panel.schedule.first_cohort)
    base = int(panel.periods.min())
    spec = ModelSpec(
        outcome,
        _did_terms(fe) + ("ring",),
        fe_mode=fe,
        baseline=base,
        topic=topic,
        rings=rings,
        post_from=first,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_model(panel, spec, vcov, cluster_key)
    dropped = tuple(fit.dropped)
    if any(d.startswith("ring(") for d in dropped):
        warnings.warn(
            f"ring dummies collinear with post-period controls, dropped: {[d for d in dropped if d.startswith('ring(')]}",
            stacklevel=2,
        )
    for w in caught:
        if "ring(" not in str(w.message):
            warnings.warn(w.message, stacklevel=2)
    tab = inference_table(fit).set_index("term")
    period = panel.column("period")
    group = panel.column("group") == 1
    dist = panel.column("distance_km").astype(float)
    out = []
    for p in [int(p) for p in panel.periods if p != base]:
        name = f"group x period={p}"
        if name in tab.index:
            r = tab.loc[name]
            out.append(
                AttEstimate(
                    f"delta_{p}", float(r["estimate"]), float(r["se"]), (float(r["lo"]), float(r["hi"])),
                    t=p, p=float(r["p"]), label=name,
                    note="" if p == first else "descriptive: compares two treated cohorts, not an ATT",
                )
            )
    spill_control = 0.0
    ctrl_post = ~group & (period == first)
    for lo, hi in rings:
        name = ring_label((lo, hi))
        if name not in tab.index:
            continue
        r = tab.loc[name]
        eta = float(r["estimate"])
        share = float(np.mean((dist[ctrl_post] > lo) & (dist[ctrl_post] <= hi))) if ctrl_post.any() else 0.0
        spill_control += share * eta
        out.append(
            AttEstimate("eta", eta, float(r["se"]), (float(r["lo"]), float(r["hi"])), p=float(r["p"]), label=name)
        )
    naive = did_fit(panel, outcome, fe, vcov, topic, cluster_key).coefficient(f"group x period={first}")
    return SpilloverResult(tuple(out), dropped, naive, spill_control)
