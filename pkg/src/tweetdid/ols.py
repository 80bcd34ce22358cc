"""
Least squares with fixed effects and sandwich covariance estimators.

Design matrices are built from a :class:`~tweetdid.panel.Panel` and a
:class:`ModelSpec`. Fits use a Householder QR factorisation; the normal
equations are never inverted directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
import scipy.linalg as sla
from scipy import stats

from .panel import Panel, ValidationError

COLLINEARITY_TOL = 1e-10

TERMS = ("intercept", "group", "period", "interaction", "ring")


class SpecificationError(ValueError):
    pass


class RankDeficientError(SpecificationError):
    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        super().__init__(f"design is rank deficient; dependent columns: {self.columns}")


@dataclass(frozen=True)
class ModelSpec:
    """Regression specification over a panel.

    ``terms`` is an ordered selection from ``intercept`` (alpha), ``group``
    (treatment-group effect), ``period`` (one dummy per non-baseline period),
    ``interaction`` (period dummy times group, one per non-baseline period)
    and ``ring`` (post-period control-unit distance bands). ``fe_mode``
    absorbs a fixed effect on ``fe_key`` by demeaning (``within``) or with
    explicit indicators (``dummy``).
    """

    outcome: str
    terms: tuple[str, ...] = ("intercept", "group", "period", "interaction")
    fe_mode: str = "none"
    fe_key: str = "user_id"
    baseline: int | None = None
    topic: str | None = None
    rings: tuple[tuple[float, float], ...] = ()
    post_from: int | None = None

    def __post_init__(self):
        if self.fe_mode not in ("none", "dummy", "within"):
            raise SpecificationError(f"unknown fe_mode {self.fe_mode!r}")
        if len(set(self.terms)) != len(self.terms):
            raise SpecificationError("duplicate terms in specification")
        unknown = set(self.terms) - set(TERMS)
        if unknown:
            raise SpecificationError(f"unknown terms {sorted(unknown)}")
        if "ring" in self.terms and not self.rings:
            raise SpecificationError("ring term requires ring bands")


@dataclass
class Design:
    X: np.ndarray
    y: np.ndarray
    names: list[str]
    dropped: list[str] = field(default_factory=list)
    n_absorbed: int = 0
    fe_mode: str = "none"


def ring_label(band: tuple[float, float]) -> str:
    lo, hi = band
    return f"ring({lo:g},{hi:g}]"


def demean(values: np.ndarray, codes: np.ndarray, n_groups: int) -> np.ndarray:
    """Subtract group means column-wise (``values`` is 1-D or 2-D)."""
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    if values.ndim == 1:
        means = np.bincount(codes, weights=values, minlength=n_groups) / counts
        return values - means[codes]
    out = np.empty_like(values, dtype=float)
    for j in range(values.shape[1]):
        means = np.bincount(codes, weights=values[:, j], minlength=n_groups) / counts
        out[:, j] = values[:, j] - means[codes]
    return out


def _raw_columns(panel: Panel, spec: ModelSpec) -> tuple[list[np.ndarray], list[str]]:
    period = panel.column("period")
    group = panel.column("group").astype(float)
    periods = np.unique(period)
    base = spec.baseline if spec.baseline is not None else int(periods.min())
    others = [int(p) for p in periods if p != base]
    cols, names = [], []
    for term in spec.terms:
        if term == "intercept":
            cols.append(np.ones(len(panel)))
            names.append("const")
        elif term == "group":
            cols.append(group)
            names.append("group")
        elif term == "period":
            if not others:
                raise SpecificationError("period dummies requested but panel has a single period")
            for p in others:
                cols.append((period == p).astype(float))
                names.append(f"period={p}")
        elif term == "interaction":
            if not others:
                raise SpecificationError("interactions requested but panel has a single period")
            for p in others:
                cols.append((period == p) * group)
                names.append(f"group x period={p}")
        elif term == "ring":
            if not panel.has_distance:
                raise SpecificationError("ring term needs a distance_km column")
            dist = panel.column("distance_km").astype(float)
            post_from = spec.post_from if spec.post_from is not None else base + 1
            post = period >= post_from
            control = group == 0
            for lo, hi in spec.rings:
                inband = (dist > lo) & (dist <= hi)
                cols.append((control & post & inband).astype(float))
                names.append(ring_label((lo, hi)))
    return cols, names


def collinear_columns(X: np.ndarray, tol: float = COLLINEARITY_TOL) -> list[int]:
    """Indices of columns lying in the span of the columns before them.

    Uses the diagonal of an unpivoted QR: ``|R_kk|`` is the distance of
    column ``k`` from the span of columns ``0..k-1``.
    """
    if X.shape[1] == 0:
        return []
    r = np.abs(np.diag(sla.qr(X, mode="r")[0][: X.shape[1]]))
    if r.size == 0 or r.max() == 0:
        return list(range(X.shape[1]))
    return [int(k) for k in np.flatnonzero(r < tol * r.max())]


def build_design(panel: Panel, spec: ModelSpec) -> Design:
    """Assemble the response and regressors for ``spec``.

    Under ``fe_mode="within"`` the outcome and regressors are demeaned by the
    fixed-effect key and the grand mean is added back, so an intercept stays
    in the model and equals ``mean(y) - mean(X) @ beta``. Columns that are
    exact linear combinations of earlier ones are dropped and listed in
    ``Design.dropped`` in declaration order. Under ``dummy`` mode the user
    indicators are screened before every term except the intercept.
    """
    if len(panel) == 0:
        raise ValidationError("panel is empty")
    y = panel.outcome(spec.outcome, spec.topic)
    cols, names = _raw_columns(panel, spec)
    X = np.column_stack(cols) if cols else np.empty((len(panel), 0))
    n_absorbed = 0
    if spec.fe_mode != "none":
        codes, uniques = pd.factorize(panel.column(spec.fe_key), sort=True)
        n_fe = len(uniques)
        if spec.fe_mode == "within":
            # the intercept column maps to itself: 0 after demeaning, 1 after add-back
            X = demean(X, codes, n_fe) + X.mean(axis=0)
            y = demean(y, codes, n_fe) + y.mean()
            n_absorbed = n_fe - 1
        else:
            dummies = np.zeros((len(panel), n_fe - 1))
            rows = np.flatnonzero(codes > 0)
            dummies[rows, codes[rows] - 1] = 1.0
            X = np.column_stack([X, dummies])
            names = names + [f"fe[{u}]" for u in uniques[1:]]
    # indicators are screened right after the intercept, so a model term that
    # the fixed effect absorbs is the one dropped, as under the within transform
    order = list(range(X.shape[1]))
    if spec.fe_mode == "dummy":
        lead = [k for k in range(len(cols)) if names[k] == "const"]
        order = lead + list(range(len(cols), X.shape[1])) + [k for k in range(len(cols)) if k not in lead]
    drop = sorted(order[j] for j in collinear_columns(X[:, order]))
    dropped = [names[k] for k in drop]
    if drop:
        keep = [k for k in range(X.shape[1]) if k not in set(drop)]
        X = X[:, keep]
        names = [names[k] for k in keep]
    return Design(X, y, names, dropped, n_absorbed, spec.fe_mode)


@dataclass(frozen=True)
class FitResult:
    names: list[str]
    coef: np.ndarray
    resid: np.ndarray
    X: np.ndarray
    y: np.ndarray
    xtx_inv: np.ndarray
    vcov: np.ndarray
    vcov_tag: str = "classical"
    df_resid: int = 0
    n_clusters: int | None = None
    dropped: tuple[str, ...] = ()
    n_absorbed: int = 0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    @property
    def fitted(self) -> np.ndarray:
        return self.X @ self.coef

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"term {name!r} not in fit (dropped: {list(self.dropped)})") from None

    def coefficient(self, name: str) -> float:
        return float(self.coef[self.index(name)])

    def std_error(self, name: str) -> float:
        return float(self.se[self.index(name)])

    @property
    def df_inference(self) -> int:
        if self.vcov_tag == "cluster":
            return self.n_clusters - 1
        return self.df_resid


def fit_ols(
    X: np.ndarray,
    y: np.ndarray,
    names: Sequence[str] | None = None,
    n_absorbed: int = 0,
    dropped: Sequence[str] = (),
    tol: float = COLLINEARITY_TOL,
) -> FitResult:
    """Least-squares fit via QR with the classical covariance ``s^2 (X'X)^-1``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(k)]
    if n < k:
        raise SpecificationError(f"N={n} smaller than K={k}")
    bad = collinear_columns(X, tol)
    if bad:
        raise RankDeficientError([names[j] for j in bad])
    q, r = np.linalg.qr(X, mode="reduced")
    coef = sla.solve_triangular(r, q.T @ y)
    resid = y - X @ coef
    rinv = sla.solve_triangular(r, np.eye(k))
    xtx_inv = rinv @ rinv.T
    df_resid = n - k - n_absorbed
    sigma2 = resid @ resid / df_resid if df_resid > 0 else np.nan
    return FitResult(
        names=names,
        coef=coef,
        resid=resid,
        X=X,
        y=y,
        xtx_inv=xtx_inv,
        vcov=sigma2 * xtx_inv,
        df_resid=df_resid,
        dropped=tuple(dropped),
        n_absorbed=n_absorbed,
    )


def fit_design(design: Design) -> FitResult:
    return fit_ols(design.X, design.y, design.names, design.n_absorbed, design.dropped)


def vcov_white(fit: FitResult) -> np.ndarray:
    """HC1 sandwich: ``N/(N-K) * B (sum e_i^2 x_i x_i') B`` with ``B = (X'X)^-1``."""
    xe = fit.X * fit.resid[:, None]
    meat = xe.T @ xe
    n, k = fit.n, fit.k
    v = fit.xtx_inv @ meat @ fit.xtx_inv * (n / (n - k))
    return (v + v.T) / 2


def cluster_meat(X: np.ndarray, resid: np.ndarray, clusters) -> tuple[np.ndarray, int]:
    codes, uniques = pd.factorize(np.asarray(clusters), sort=True)
    g = len(uniques)
    scores = np.zeros((g, X.shape[1]))
    np.add.at(scores, codes, X * resid[:, None])
    return scores.T @ scores, g


def vcov_cluster(fit: FitResult, clusters) -> np.ndarray:
    """Liang-Zeger covariance with ``c = G/(G-1) * (N-1)/(N-K)``."""
    clusters = np.asarray(clusters)
    if len(clusters) != fit.n:
        raise ValueError("cluster assignment length does not match the fit")
    meat, g = cluster_meat(fit.X, fit.resid, clusters)
    if g < 2:
        raise SpecificationError("cluster-robust covariance needs at least 2 clusters; use White SEs instead")
    n, k = fit.n, fit.k
    c = g / (g - 1) * (n - 1) / (n - k)
    v = fit.xtx_inv @ meat @ fit.xtx_inv * c
    return (v + v.T) / 2


def with_vcov(fit: FitResult, kind: str = "cluster", clusters=None) -> FitResult:
    """Return a copy of ``fit`` carrying the requested covariance."""
    if kind == "classical":
        s2 = fit.resid @ fit.resid / fit.df_resid
        return replace(fit, vcov=s2 * fit.xtx_inv, vcov_tag="classical", n_clusters=None)
    if kind == "white":
        return replace(fit, vcov=vcov_white(fit), vcov_tag="white", n_clusters=None)
    if kind == "cluster":
        if clusters is None:
            raise ValueError("clustered covariance requires a cluster assignment")
        g = len(pd.unique(np.asarray(clusters)))
        return replace(fit, vcov=vcov_cluster(fit, clusters), vcov_tag="cluster", n_clusters=g)
    raise ValueError(f"unknown covariance {kind!r}")


def normal_ci(estimate: float, se: float, level: float = 0.95) -> tuple[float, float]:
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    z = stats.norm.ppf(0.5 + level / 2)
    return estimate - z * se, estimate + z * se


def inference_table(fit: FitResult, level: float = 0.95) -> pd.DataFrame:
    """Estimate, SE, t, two-sided p and CI per coefficient.

    p-values use Student t with ``G - 1`` degrees of freedom for clustered
    covariance and the residual degrees of freedom otherwise. A zero SE gives
    ``p = 0`` and sets ``se_zero``.
    """
    df = fit.df_inference
    se = fit.se
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, fit.coef / np.where(se > 0, se, 1.0), np.nan)
    p = np.where(se > 0, 2 * stats.t.sf(np.abs(t), df), 0.0)
    crit = stats.t.ppf(0.5 + level / 2, df)
    zero = se <= 0
    if zero.any():
        warnings.warn(f"zero standard error for {[fit.names[i] for i in np.flatnonzero(zero)]}", stacklevel=2)
    return pd.DataFrame(
        {
            "term": fit.names,
            "estimate": fit.coef,
            "se": se,
            "t": t,
            "p": p,
            "lo": fit.coef - crit * se,
            "hi": fit.coef + crit * se,
            "vcov_tag": fit.vcov_tag,
            "n": fit.n,
            "k": fit.k,
            "g": fit.n_clusters if fit.n_clusters is not None else np.nan,
            "se_zero": zero,
        }
    )


def fit_model(panel: Panel, spec: ModelSpec, vcov: str = "cluster", cluster_key: str = "municipality") -> FitResult:
    """Build, fit and attach the requested covariance in one step."""
    design = build_design(panel, spec)
    if design.dropped:
        warnings.warn(f"collinear columns dropped: {design.dropped}", stacklevel=2)
    fit = fit_design(design)
    clusters = panel.column(cluster_key) if vcov == "cluster" else None
    return with_vcov(fit, vcov, clusters)
