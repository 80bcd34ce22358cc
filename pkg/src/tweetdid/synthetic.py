"""
Synthetic panels with known ground truth, and a Monte Carlo driver.

Outcomes follow a linear probability model. For user ``u`` in municipality
``c`` during period ``t``::

    p = p0[zone] + shock[t] + tau(g, t) * 1[t >= g]
        + slope * t * D + anticipation * 1[t == g - 1]
        + eta[r] * 1[control, ring r, t >= g_first]
        + a_c + b_ct + e_u

with ``D`` the first-cohort indicator and ``a_c``, ``b_ct``, ``e_u`` normal
municipality, municipality-period and user effects. Probabilities are
clamped to [0.01, 0.99]; a config that clamps more than 5% of cells is
rejected.

Replicate ``r`` of seed ``s`` draws from
``SeedSequence(entropy=s, spawn_key=(r,))`` fed to PCG64, so a replicate's
data do not depend on how many replicates are run.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import date, timedelta
from typing import Callable, Mapping

import numpy as np
import pandas as pd

from .estimators import att_gt, att_two_period, did_fit, event_study, spillover_rings
from .panel import ConfigError, Panel, PeriodScheme, TreatmentSchedule

RNG_ALGORITHM = "numpy.PCG64 via SeedSequence(entropy=seed, spawn_key=(replicate,))"
P_MIN, P_MAX = 0.01, 0.99
CLAMP_TOLERANCE = 0.05
OUTCOME = "y"


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the synthetic data-generating process.

    ``tau`` is either one effect for every treated cell or a mapping from
    ``"g,t"`` to the effect of cohort ``g`` in period ``t``. Municipalities
    are assigned to zones round-robin in ``cohorts`` order.
    """

    seed: int = 0
    n_periods: int = 3
    cohorts: Mapping[str, float | None] = field(default_factory=lambda: {"red": 1, "orange": 2})
    n_clusters: int = 100
    users_per_cluster: int = 10
    tweets_per_user_period: int = 10
    p0: Mapping[str, float] = field(default_factory=lambda: {"red": 0.3, "orange": 0.3})
    period_shocks: tuple[float, ...] = ()
    tau: float | Mapping[str, float] = 0.0
    trend_slope: float = 0.0
    anticipation: float = 0.0
    rings: tuple[tuple[float, float], ...] = ()
    ring_eta: tuple[float, ...] = ()
    ring_share: tuple[float, ...] = ()
    cluster_sd: float = 0.02
    cluster_period_sd: float = 0.01
    user_sd: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "cohorts", {str(k): (None if v is None else v) for k, v in dict(self.cohorts).items()})
        object.__setattr__(self, "p0", {str(k): float(v) for k, v in dict(self.p0).items()})
        object.__setattr__(self, "period_shocks", tuple(float(x) for x in self.period_shocks))
        object.__setattr__(self, "rings", tuple((float(a), float(b)) for a, b in self.rings))
        object.__setattr__(self, "ring_eta", tuple(float(x) for x in self.ring_eta))
        object.__setattr__(self, "ring_share", tuple(float(x) for x in self.ring_share))
        if not isinstance(self.tau, (int, float)):
            object.__setattr__(self, "tau", {str(k): float(v) for k, v in dict(self.tau).items()})
        else:
            object.__setattr__(self, "tau", float(self.tau))
        if self.n_periods < 2:
            raise ConfigError("need at least two periods")
        if min(self.n_clusters, self.users_per_cluster, self.tweets_per_user_period) < 1:
            raise ConfigError("cluster, user and tweet counts must be positive")
        if self.n_clusters < len(self.cohorts):
            raise ConfigError("fewer municipalities than zones")
        missing = set(self.cohorts) - set(self.p0)
        if missing:
            raise ConfigError(f"no baseline probability for zones {sorted(missing)}")
        if self.period_shocks and len(self.period_shocks) != self.n_periods:
            raise ConfigError("period_shocks needs one value per period")
        if not (len(self.rings) == len(self.ring_eta) == len(self.ring_share)):
            raise ConfigError("rings, ring_eta and ring_share must have equal length")
        if sum(self.ring_share) > 1 + 1e-12 or any(s < 0 for s in self.ring_share):
            raise ConfigError("ring shares must be non-negative and sum to at most 1")
        if min(self.cluster_sd, self.cluster_period_sd, self.user_sd) < 0:
            raise ConfigError("noise SDs must be non-negative")

    @property
    def schedule(self) -> TreatmentSchedule:
        return TreatmentSchedule({z: (math.inf if g is None else g) for z, g in self.cohorts.items()})

    @property
    def scheme(self) -> PeriodScheme:
        start = date(2020, 1, 1)
        cuts = tuple(start + timedelta(days=7 * k) for k in range(1, self.n_periods))
        return PeriodScheme(cuts, start=start, end=start + timedelta(days=7 * self.n_periods - 1))

    @property
    def n_rows(self) -> int:
        return self.n_clusters * self.users_per_cluster * self.n_periods * self.tweets_per_user_period

    def tau_of(self, g: float, t: int) -> float:
        if t < g:
            return 0.0
        if isinstance(self.tau, float):
            return self.tau
        return self.tau.get(f"{int(g)},{int(t)}", 0.0)

    def replace(self, **changes) -> "DgpConfig":
        d = self.to_dict()
        d.update(changes)
        return DgpConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cohorts"] = dict(self.cohorts)
        d["p0"] = dict(self.p0)
        d["tau"] = self.tau if isinstance(self.tau, float) else dict(self.tau)
        d["period_shocks"] = list(self.period_shocks)
        d["rings"] = [list(r) for r in self.rings]
        d["ring_eta"] = list(self.ring_eta)
        d["ring_share"] = list(self.ring_share)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DgpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown DGP keys: {sorted(unknown)}")
        return cls(**dict(d))


@dataclass(frozen=True)
class GroundTruth:
    config: DgpConfig
    replicate: int | None
    n_cells: int
    n_clamped: int
    rng: str = RNG_ALGORITHM

    def att(self, g: float, t: int) -> float:
        return self.config.tau_of(g, t)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "replicate": self.replicate,
            "n_cells": self.n_cells,
            "n_clamped": self.n_clamped,
            "rng": self.rng,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GroundTruth":
        return cls(DgpConfig.from_dict(d["config"]), d["replicate"], d["n_cells"], d["n_clamped"], d["rng"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _rng(seed: int, replicate: int | None) -> np.random.Generator:
    key = () if replicate is None else (int(replicate),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=key)))


def generate_panel(cfg: DgpConfig, replicate: int | None = None) -> tuple[Panel, GroundTruth]:
    """Draw one panel; the outcome column is ``"y"``."""
    rng = _rng(cfg.seed, replicate)
    zones = list(cfg.cohorts)
    sched = cfg.schedule
    first = sched.first_cohort
    n_c, n_u, n_t, n_w = cfg.n_clusters, cfg.users_per_cluster, cfg.n_periods, cfg.tweets_per_user_period

    cl_zone = np.array([zones[c % len(zones)] for c in range(n_c)])
    cl_cohort = np.array([sched.zone_first_treated[z] for z in cl_zone])
    a_c = rng.normal(0.0, cfg.cluster_sd, n_c)
    b_ct = rng.normal(0.0, cfg.cluster_period_sd, (n_c, n_t))

    users = np.arange(n_c * n_u)
    u_cl = users // n_u
    u_cohort = cl_cohort[u_cl]
    u_group = (u_cohort == first).astype(float)
    e_u = rng.normal(0.0, cfg.user_sd, len(users))

    # control users fall in a ring with probability ring_share[r]
    dist = np.zeros(len(users))
    ring_of = np.full(len(users), -1)
    ctrl = u_group == 0
    if cfg.rings:
        draw = rng.random(len(users))
        edges = np.cumsum((0.0,) + cfg.ring_share)
        far = max(hi for _, hi in cfg.rings)
        for r, (lo, hi) in enumerate(cfg.rings):
            hit = ctrl & (draw >= edges[r]) & (draw < edges[r + 1])
            ring_of[hit] = r
        pos = rng.random(len(users))
        for r, (lo, hi) in enumerate(cfg.rings):
            sel = ring_of == r
            dist[sel] = hi - pos[sel] * (hi - lo)
        rest = ctrl & (ring_of < 0)
        dist[rest] = far + 1.0 + 50.0 * pos[rest]
    else:
        dist[ctrl] = 50.0

    shocks = np.asarray(cfg.period_shocks or (0.0,) * n_t)
    p0 = np.array([cfg.p0[cl_zone[c]] for c in u_cl])
    t = np.arange(n_t)
    prob = (p0 + e_u + a_c[u_cl])[:, None] + shocks[None, :] + b_ct[u_cl]
    prob += cfg.trend_slope * t[None, :] * u_group[:, None]
    for g in np.unique(u_cohort):
        sel = u_cohort == g
        if g != math.inf:
            eff = np.array([cfg.tau_of(g, tt) for tt in t])
            prob[sel] += eff[None, :]
            if 0 <= g - 1 < n_t:
                prob[np.ix_(sel, [int(g) - 1])] += cfg.anticipation
    for r, eta in enumerate(cfg.ring_eta):
        sel = ring_of == r
        prob[np.ix_(sel, t >= first)] += eta

    clamped = (prob < P_MIN) | (prob > P_MAX)
    n_clamped = int(clamped.sum())
    if n_clamped > CLAMP_TOLERANCE * prob.size:
        raise ConfigError(f"{n_clamped} of {prob.size} cell probabilities clamped (> {CLAMP_TOLERANCE:.0%})")
    prob = np.clip(prob, P_MIN, P_MAX)

    y = (rng.random((len(users), n_t, n_w)) < prob[:, :, None]).astype(np.int8)

    uu, tt, ww = np.meshgrid(users, t, np.arange(n_w), indexing="ij")
    uu, tt, ww = uu.ravel(), tt.ravel(), ww.ravel()
    start = np.datetime64(cfg.scheme.start, "D")
    frame = pd.DataFrame(
        {
            "tweet_id": pd.Series(np.arange(len(uu))).map("t{:d}".format),
            "user_id": pd.Series(uu).map("u{:d}".format),
            "municipality": pd.Series(u_cl[uu]).map("m{:03d}".format),
            "date": start + (7 * tt + ww % 7).astype("timedelta64[D]"),
            "zone": cl_zone[u_cl[uu]],
            "distance_km": dist[uu],
            "period": tt.astype(np.int64),
            "cohort": u_cohort[uu],
            "treated": (tt >= u_cohort[uu]).astype(np.int8),
            "group": u_group[uu].astype(np.int8),
            OUTCOME: y.ravel(),
        }
    )
    panel = Panel(frame, cfg.scheme, sched, (OUTCOME,))
    return panel, GroundTruth(cfg, replicate, prob.size, n_clamped)


@dataclass(frozen=True)
class Draw:
    """One replicate's estimate, SE, CI, null rejection and target."""

    estimate: float
    se: float
    lo: float
    hi: float
    reject: bool
    target: float


def _est_did_delta1(panel, truth, fe="none", level=0.95, **_):
    from .ols import inference_table

    g = int(truth.config.schedule.first_cohort)
    fit = did_fit(panel, OUTCOME, fe=fe)
    row = inference_table(fit, level).set_index("term").loc[f"group x period={g}"]
    return Draw(row["estimate"], row["se"], row["lo"], row["hi"], bool(row["p"] < 1 - level), truth.att(g, g))


def _est_att_two_period(panel, truth, **_):
    e = att_two_period(panel, OUTCOME)
    return Draw(e.estimate, e.se, e.lo, e.hi, not (e.lo <= 0 <= e.hi), truth.att(e.g, e.t))


def _est_att_gt(panel, truth, g=None, t=None, n_boot=199, **_):
    g = int(truth.config.schedule.first_cohort) if g is None else g
    t = g if t is None else t
    seed = np.random.SeedSequence(entropy=truth.config.seed, spawn_key=(truth.replicate or 0, 1))
    e = att_gt(panel, g, t, OUTCOME, n_boot=n_boot, seed=seed)
    return Draw(e.estimate, e.se, e.lo, e.hi, not (e.lo <= 0 <= e.hi), truth.att(g, t))


def _est_pretrend(panel, truth, baseline=None, fe="none", level=0.95, **_):
    """Joint pre-trend test. Estimate and target refer to delta at l = -1."""
    cfg = truth.config
    baseline = int(cfg.schedule.first_cohort) - 1 if baseline is None else baseline
    lags = cfg.n_periods - baseline - 2
    es = event_study(panel, OUTCOME, baseline, baseline, lags, fe=fe)
    c = es.coefficient(-1)
    target = -cfg.trend_slope - cfg.anticipation
    return Draw(c.estimate, c.se, c.lo, c.hi, bool(es.wald_p < 1 - level), target)


def _spill(panel, truth, fe):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return spillover_rings(panel, OUTCOME, truth.config.rings, fe=fe)


def _est_spillover_eta(panel, truth, ring=0, fe="none", **_):
    res = _spill(panel, truth, fe)
    from .ols import ring_label

    e = res.get(ring_label(truth.config.rings[ring]))
    return Draw(e.estimate, e.se, e.lo, e.hi, bool(e.p < 0.05), truth.config.ring_eta[ring])


def _est_spillover_delta1(panel, truth, fe="none", **_):
    res = _spill(panel, truth, fe)
    g = int(truth.config.schedule.first_cohort)
    e = res.get(f"delta_{g}")
    return Draw(e.estimate, e.se, e.lo, e.hi, bool(e.p < 0.05), truth.att(g, g))


ESTIMATORS: dict[str, Callable[..., Draw]] = {
    "did_delta1": _est_did_delta1,
    "att_two_period": _est_att_two_period,
    "att_gt": _est_att_gt,
    "pretrend": _est_pretrend,
    "spillover_eta": _est_spillover_eta,
    "spillover_delta1": _est_spillover_delta1,
}


@dataclass(frozen=True)
class MonteCarloResult:
    estimator: str
    reps: int
    draws: tuple[Draw | None, ...]
    failures: tuple[tuple[int, str], ...]
    truth: GroundTruth

    def _ok(self) -> list[Draw]:
        return [d for d in self.draws if d is not None]

    @property
    def n_ok(self) -> int:
        return len(self._ok())

    @property
    def estimates(self) -> np.ndarray:
        return np.array([d.estimate for d in self._ok()])

    @property
    def target(self) -> float:
        ok = self._ok()
        return ok[0].target if ok else math.nan

    @property
    def mean(self) -> float:
        return float(np.mean(self.estimates))

    @property
    def bias(self) -> float:
        return self.mean - self.target

    @property
    def mc_se(self) -> float:
        """Monte Carlo standard error of the mean estimate."""
        est = self.estimates
        return float(np.std(est, ddof=1) / math.sqrt(len(est))) if len(est) > 1 else math.nan

    @property
    def coverage(self) -> float:
        ok = self._ok()
        return float(np.mean([d.lo <= d.target <= d.hi for d in ok]))

    @property
    def rejection_rate(self) -> float:
        return float(np.mean([d.reject for d in self._ok()]))

    def summary(self) -> dict:
        return {
            "estimator": self.estimator,
            "reps": self.reps,
            "n_ok": self.n_ok,
            "n_failed": len(self.failures),
            "target": self.target,
            "mean": self.mean,
            "bias": self.bias,
            "mc_se": self.mc_se,
            "coverage": self.coverage,
            "rejection_rate": self.rejection_rate,
        }


def _run_one(args):
    cfg, estimator, r, options = args
    try:
        panel, truth = generate_panel(cfg, r)
        return ESTIMATORS[estimator](panel, truth, **options), None
    except Exception as exc:  # recorded per replicate, never aborts the run
        return None, f"{type(exc).__name__}: {exc}"


def monte_carlo(
    cfg: DgpConfig, estimator: str, reps: int, n_jobs: int = 1, **options
) -> MonteCarloResult:
    """Run ``estimator`` on ``reps`` independent panels.

    Replicates failing with an exception are recorded in ``failures`` and left
    out of the aggregates. Results are ordered by replicate index regardless
    of ``n_jobs``.
    """
    if reps < 2:
        raise ValueError("reps must be at least 2")
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; choose from {sorted(ESTIMATORS)}")
    tasks = [(cfg, estimator, r, options) for r in range(reps)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one, tasks, chunksize=max(1, reps // (4 * n_jobs))))
    else:
        results = [_run_one(t) for t in tasks]
    draws = tuple(d for d, _ in results)
    failures = tuple((r, msg) for r, (_, msg) in enumerate(results) if msg is not None)
    return MonteCarloResult(estimator, reps, draws, failures, GroundTruth(cfg, None, 0, 0))


_FILLER = ("oggi", "ancora", "tutti", "casa", "domani", "sempre", "notizie", "gente", "qui", "adesso", "bene", "vero")
DEMO_DICTIONARIES = {
    "economics": ("economia", "lavoro", "borsa", "crisi economica", "mercati"),
    "health": ("virus", "ospedale", "contagio", "mascherina", "terapia intensiva"),
    "politics": ("governo", "parlamento", "decreto", "ministro", "opposizione"),
    "policy": ("quarantena", "zona rossa", "chiusura", "scuole chiuse", "ordinanza"),
}
DEMO_EMOTIONS = ("uncertainty", "negative")


def write_demo_inputs(dest, seed: int = 0, n_municipalities: int = 40, users_per_municipality: int = 6,
                      tweets_per_user: int = 24) -> dict:
    """Write a small raw corpus plus side files and a matching run config.

    Produces ``tweets.csv`` (raw records with text and distance), ``labels.csv``
    (precomputed emotion labels), one term list per topic under
    ``dictionaries/``, ``mortality.csv``, ``covariates.csv`` and
    ``config.json``. Returns the config as a dict.
    """
    from pathlib import Path

    dest = Path(dest)
    (dest / "dictionaries").mkdir(parents=True, exist_ok=True)
    rng = _rng(seed, None)
    start, end = date(2020, 1, 1), date(2020, 3, 22)
    span = (end - start).days + 1
    n_red = max(2, n_municipalities // 4)
    cuts = (date(2020, 2, 23), date(2020, 3, 9))

    rows, labels = [], []
    tid = 0
    for m in range(n_municipalities):
        red = m < n_red
        muni = f"m{m:03d}"
        dist_m = rng.uniform(0, 12) if red else rng.uniform(12, 90)
        for u in range(users_per_municipality):
            user = f"{muni}u{u}"
            for _ in range(tweets_per_user):
                day = start + timedelta(days=int(rng.integers(0, span)))
                period = sum(day >= c for c in cuts)
                words = list(rng.choice(_FILLER, size=int(rng.integers(2, 7))))
                for terms in DEMO_DICTIONARIES.values():
                    if rng.random() < 0.3:
                        words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(terms)))
                extra = rng.random()
                if extra < 0.15:
                    words.append("https://t.co/x" + str(tid))
                elif extra < 0.25:
                    words.insert(0, "@utente" + str(int(rng.integers(100))))
                elif extra < 0.32:
                    words.append("#" + str(rng.choice(_FILLER)))
                text = " ".join(words) if rng.random() > 0.02 else "@utente :)"
                tweet = f"t{tid:06d}"
                tid += 1
                rows.append((tweet, user, muni, day.isoformat(), "red" if red else "orange", text, f"{dist_m:.3f}"))
                for e, emo in enumerate(DEMO_EMOTIONS):
                    p = 0.15 + 0.05 * e + 0.02 * period + (0.06 if red and period >= 1 else 0.0)
                    lab = int(rng.random() < p)
                    conf = float(np.round(rng.uniform(0.5, 1.0), 4))
                    labels.append((tweet, emo, lab, conf))

    with open(dest / "tweets.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tweet_id", "user_id", "municipality", "date", "zone", "text", "distance_km"])
        w.writerows(rows)
    with open(dest / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tweet_id", "emotion", "label", "confidence"])
        w.writerows(labels)
    for topic, terms in DEMO_DICTIONARIES.items():
        (dest / "dictionaries" / f"{topic}.txt").write_text("\n".join(terms) + "\n", encoding="utf-8")
    with open(dest / "mortality.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["municipality", "month", "excess_mortality"])
        for m in range(n_municipalities):
            for month in ("2020-01", "2020-02"):
                w.writerow([f"m{m:03d}", month, f"{rng.normal(0.0, 1.0):.4f}"])
    with open(dest / "covariates.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["municipality", "population", "median_age", "share_elderly"])
        for m in range(n_municipalities):
            w.writerow([f"m{m:03d}", f"{rng.lognormal(9, 1):.0f}", f"{rng.normal(46, 3):.2f}", f"{rng.uniform(0.18, 0.3):.4f}"])

    config = {
        "seed": seed,
        "out": "out",
        "profile": "default",
        "paths": {
            "panel": "tweets.csv",
            "labels": "labels.csv",
            "dictionaries": [f"dictionaries/{t}.txt" for t in DEMO_DICTIONARIES],
            "mortality": "mortality.csv",
            "covariates": "covariates.csv",
        },
        "emotions": list(DEMO_EMOTIONS),
        "model": {"fe": "within", "vcov": "cluster", "cluster_key": "municipality"},
        "event_study": {"profile": "event_study", "baseline": 1, "leads": 1, "lags": 1},
        "sensitivity": {"grid": [0, 0.5, 1, 1.5, 2], "mode": "consecutive"},
        "bh": {"family": "row"},
        "placebo": {"k": 5},
        "simulate": {"estimator": "did_delta1", "reps": 20,
                     "dgp": {"n_periods": 2, "n_clusters": 20, "users_per_cluster": 5, "tweets_per_user_period": 10}},
    }
    (dest / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return config
