"""
Command-line pipeline: ``tweetdid <subcommand> --config run.json``.

Every subcommand reads one JSON run config (paths are relative to the
config file), computes all of its outputs in memory and only then writes
them, so a failing run leaves no partial files. Each table starts with a
``#`` metadata line carrying the tool version, seed and config hash; JSON
reports hold the same fields under ``meta``.

Exit codes: 0 success, 1 data or estimation error, 2 usage error or
missing input path.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .estimators import did_fit, event_study
from .extras import (
    PValueFamily,
    balance_check,
    bh_adjust,
    load_mortality,
    placebo_groups,
    placebo_panel,
    reference_profile,
)
from .ols import inference_table
from .panel import (
    EVENT_STUDY_SCHEDULE,
    EVENT_STUDY_SCHEME,
    DEFAULT_SCHEDULE,
    DEFAULT_SCHEME,
    TOPIC_PREFIX,
    Panel,
    PanelError,
    PeriodScheme,
    TreatmentSchedule,
    load_panel,
)
from .sensitivity import DEFAULT_GRID, breakdown_scan
from .synthetic import DgpConfig, GroundTruth, monte_carlo
from .text import LabelFileClassifier, load_dictionary, normalize, tag_topics

PROFILES = {
    "default": (DEFAULT_SCHEME, DEFAULT_SCHEDULE),
    "event_study": (EVENT_STUDY_SCHEME, EVENT_STUDY_SCHEDULE),
}
ALL = "all"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    raw: dict
    base: Path
    seed: int
    out: Path
    threads: int = 1
    outputs: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path, seed: int | None = None, out: str | None = None, threads: int = 1) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
        if seed is not None:
            raw["seed"] = seed
        raw.setdefault("seed", 0)
        base = path.parent
        out_dir = Path(out) if out is not None else base / raw.get("out", "out")
        return cls(raw, base, int(raw["seed"]), out_dir, threads)

    @property
    def sha256(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name) or {})

    def path(self, key: str, required: bool = True) -> Path | None:
        value = self.section("paths").get(key)
        if value is None:
            if required:
                raise UsageError(f"config lacks paths.{key}")
            return None
        p = self.base / value
        if not p.exists():
            raise UsageError(f"input path not found: {p}")
        return p

    def scheme(self, section: str | None = None) -> tuple[PeriodScheme, TreatmentSchedule]:
        src = self.section(section) if section else self.raw
        profile = src.get("profile", self.raw.get("profile", "default"))
        if profile not in PROFILES:
            raise UsageError(f"unknown profile {profile!r}")
        scheme, schedule = PROFILES[profile]
        if "scheme" in src:
            scheme = PeriodScheme.from_dict(src["scheme"])
        if "schedule" in src:
            schedule = TreatmentSchedule.from_dict(src["schedule"])
        return scheme, schedule

    def header(self, **extra) -> str:
        parts = ["tool=tweetdid", f"version={__version__}", f"seed={self.seed}", f"config_sha256={self.sha256}"]
        parts += [f"{k}={v}" for k, v in extra.items()]
        return "# " + " ".join(parts) + "\n"

    def emit(self, name: str, body, **extra):
        if isinstance(body, dict):
            # JSON reports carry the metadata as a "meta" member instead of a comment line
            meta = {"tool": "tweetdid", "version": __version__, "seed": self.seed, "config_sha256": self.sha256, **extra}
            self.outputs[name] = json.dumps({"meta": meta, **body}, indent=2, sort_keys=True) + "\n"
        else:
            self.outputs[name] = self.header(**extra) + body

    def flush(self):
        self.out.mkdir(parents=True, exist_ok=True)
        for name, text in self.outputs.items():
            (self.out / name).write_text(text, encoding="utf-8", newline="\n")

    def artifact(self) -> Path:
        explicit = self.section("paths").get("panel_artifact")
        p = self.base / explicit if explicit else self.out / "panel.csv"
        if not p.is_file():
            raise UsageError(f"panel artifact not found: {p} (run ingest first)")
        return p


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if x == 0:
            return "0"
        return f"{x:.10g}"
    return str(x)


def _table(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _panel_text(panel: Panel) -> str:
    return panel.to_csv()


def _read_artifact(cfg: RunConfig, section: str | None = None) -> Panel:
    scheme, schedule = cfg.scheme(section)
    return load_panel(cfg.artifact(), scheme, schedule)


def _groupings(panel: Panel) -> list[str | None]:
    return [None] + list(panel.topics)


def _outcomes(cfg: RunConfig, panel: Panel) -> list[str]:
    wanted = cfg.raw.get("outcomes") or cfg.raw.get("emotions") or list(panel.outcomes)
    missing = [o for o in wanted if o not in panel.outcomes]
    if missing:
        raise PanelError(f"outcomes not in panel: {missing}")
    return list(wanted)


# subcommands -------------------------------------------------------------


def cmd_ingest(cfg: RunConfig):
    src = cfg.path("panel")
    scheme, schedule = cfg.scheme()
    panel = load_panel(src, scheme, schedule)
    cfg.emit("panel.csv", _panel_text(panel))
    cfg.emit("ingest_report.json", panel.report.to_dict())


def cmd_classify(cfg: RunConfig):
    panel = _read_artifact(cfg)
    if "text" not in panel.frame.columns:
        raise PanelError("panel has no text column to classify")
    dict_paths = cfg.section("paths").get("dictionaries") or []
    if not dict_paths:
        raise UsageError("config lacks paths.dictionaries")
    dicts = []
    for rel in dict_paths:
        p = cfg.base / rel
        if not p.exists():
            raise UsageError(f"input path not found: {p}")
        dicts.append(load_dictionary(p))
    texts = panel.frame["text"].fillna("").astype(str).tolist()
    normed = [normalize(t) for t in texts]
    keep = np.array([not n.drop for n in normed])
    flags = {d.topic: np.array([tag_topics(n, [d])[d.topic] for n in normed], dtype=np.int8) for d in dicts}
    columns = {TOPIC_PREFIX + t: v for t, v in flags.items()}

    label_path = cfg.path("labels", required=False)
    if label_path is not None:
        clf = LabelFileClassifier.from_csv(label_path)
        ids = panel.column("tweet_id").tolist()
        for emo in cfg.raw.get("emotions") or clf.emotions:
            try:
                labels = clf.classify(ids, None, emo)
            except KeyError as exc:
                raise PanelError(f"label file lacks tweet {exc.args[0][0]!r} for emotion {emo!r}") from None
            columns[emo] = np.array([c.label for c in labels], dtype=np.int8)

    merged = panel.with_columns(**columns).subset(keep)
    cfg.emit("panel.csv", _panel_text(merged))
    topics = sorted(flags)
    rows = [(tid, *[int(flags[t][i]) for t in topics]) for i, tid in enumerate(panel.column("tweet_id")) if keep[i]]
    cfg.emit("topics.csv", _table(["tweet_id"] + topics, rows))
    report = {"n_in": len(panel), "n_dropped_empty": int((~keep).sum()), "n_out": int(keep.sum()), "topics": topics}
    cfg.emit("classify_report.json", report)


_TERM_LABELS = {"const": "constant"}


def _term_label(name: str) -> str:
    if name in _TERM_LABELS:
        return _TERM_LABELS[name]
    if name.startswith("group x period="):
        return "red x post=" + name.split("=", 1)[1]
    if name.startswith("period="):
        return "post=" + name.split("=", 1)[1]
    return name


def cmd_estimate(cfg: RunConfig):
    panel = _read_artifact(cfg)
    model = cfg.section("model")
    fe, vcov, ckey = model.get("fe", "within"), model.get("vcov", "cluster"), model.get("cluster_key", "municipality")
    first = int(panel.schedule.first_cohort)
    family = cfg.section("bh").get("family", "row")
    if family not in ("row", "interactions"):
        raise UsageError(f"unknown bh.family {family!r} (expected 'row' or 'interactions')")
    rows, family_rows = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for outcome in _outcomes(cfg, panel):
            for topic in _groupings(panel):
                fit = did_fit(panel, outcome, fe, vcov, topic, ckey)
                tab = inference_table(fit)
                col = f"{outcome}:{topic or ALL}"
                for r in tab.itertuples():
                    note = ""
                    if r.term.startswith("group x period=") and r.term != f"group x period={first}":
                        note = "descriptive"
                    rows.append((outcome, topic or ALL, _term_label(r.term), r.estimate, r.se, r.t, r.p, fit.n, r.g, note))
                    in_family = r.term == f"group x period={first}" if family == "row" else r.term.startswith("group x period=")
                    if in_family:
                        family_rows.append((col, _term_label(r.term), min(1.0, max(0.0, float(r.p)))))
    cfg.emit(
        "estimates.csv",
        _table(["outcome", "grouping", "term", "estimate", "se", "t", "p", "n", "clusters", "note"], rows),
        fe=fe,
        vcov=vcov,
    )
    if family_rows:
        adj = bh_adjust(PValueFamily.of([p for *_, p in family_rows], [f"{c}|{t}" for c, t, _ in family_rows]))
        cfg.emit(
            "bh.csv",
            _table(["column", "term", "p_raw", "p_bh"], [(c, t, p, a) for (c, t, p), a in zip(family_rows, adj)]),
            family=family,
        )


def _event_studies(cfg: RunConfig):
    panel = _read_artifact(cfg, "event_study")
    es_cfg = cfg.section("event_study")
    model = cfg.section("model")
    baseline = int(es_cfg.get("baseline", 1))
    leads, lags = int(es_cfg.get("leads", 1)), int(es_cfg.get("lags", 1))
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for outcome in _outcomes(cfg, panel):
            for topic in _groupings(panel):
                es = event_study(
                    panel, outcome, baseline, leads, lags,
                    fe=model.get("fe", "within"), vcov=model.get("vcov", "cluster"),
                    topic=topic, cluster_key=model.get("cluster_key", "municipality"),
                )
                out.append((outcome, topic or ALL, es))
    return out


def cmd_event_study(cfg: RunConfig):
    rows, tests = [], []
    for outcome, grouping, es in _event_studies(cfg):
        for rel, est, lo, hi in es.records():
            rows.append((outcome, grouping, rel, est, lo, hi))
        tests.append((outcome, grouping, es.wald, es.wald_df, es.wald_p))
    cfg.emit("event_study.csv", _table(["outcome", "grouping", "relative_period", "estimate", "lo95", "hi95"], rows))
    cfg.emit("pretrend_tests.csv", _table(["outcome", "grouping", "wald", "df", "p"], tests))


def cmd_sensitivity(cfg: RunConfig):
    sec = cfg.section("sensitivity")
    grid = tuple(sec.get("grid", DEFAULT_GRID))
    mode = sec.get("mode", "consecutive")
    rows, summary = [], []
    for outcome, grouping, es in _event_studies(cfg):
        res = breakdown_scan(es, grid, mode=mode)
        for m, lo, hi, ex in res.records():
            rows.append((outcome, grouping, m, lo, hi, ex))
        bd = "none" if res.breakdown_mbar is None else res.breakdown_mbar
        summary.append((outcome, grouping, res.delta0, res.se, res.max_pre_violation, bd, res.verdict()))
    cfg.emit("sensitivity.csv", _table(["outcome", "grouping", "mbar", "lo", "hi", "excludes_zero"], rows), method="conservative-fixed-bias")
    cfg.emit(
        "sensitivity_summary.csv",
        _table(["outcome", "grouping", "delta0", "se", "b", "breakdown_mbar", "verdict"], summary),
        method="conservative-fixed-bias",
    )


def cmd_placebo(cfg: RunConfig):
    panel = _read_artifact(cfg)
    profiles = load_mortality(cfg.path("mortality"))
    sec = cfg.section("placebo")
    k = int(sec.get("k", 10))
    group = panel.column("group")
    muni = panel.column("municipality")
    treated_munis = sorted(set(muni[group == 1]))
    reference = sec.get("reference") or treated_munis
    ref = reference_profile(profiles, reference)
    candidates = [p for p in profiles if p.municipality not in set(treated_munis) and p.municipality in set(muni)]
    groups = placebo_groups(candidates, ref, k)
    pp = placebo_panel(panel, groups).restrict_periods([0, 1])
    model = cfg.section("model")
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for outcome in _outcomes(cfg, pp):
            for topic in _groupings(pp):
                fit = did_fit(pp, outcome, model.get("fe", "within"), model.get("vcov", "cluster"), topic,
                              model.get("cluster_key", "municipality"))
                r = inference_table(fit).set_index("term").loc["group x period=1"]
                rows.append((outcome, topic or ALL, r["estimate"], r["se"], r["p"], r["lo"], r["hi"],
                             bool(r["lo"] <= 0 <= r["hi"]), "expected null"))
    cfg.emit(
        "placebo.csv",
        _table(["outcome", "grouping", "estimate", "se", "p", "lo", "hi", "covers_zero", "tag"], rows),
    )
    grp_rows = [(m, "placebo_treated", groups.distances[m]) for m in groups.treated]
    grp_rows += [(m, "placebo_control", groups.distances[m]) for m in groups.control]
    cfg.emit("placebo_groups.csv", _table(["municipality", "role", "distance"], grp_rows))


def cmd_simulate(cfg: RunConfig):
    sec = cfg.section("simulate")
    dgp = dict(sec.get("dgp") or {})
    dgp["seed"] = cfg.seed
    dcfg = DgpConfig.from_dict(dgp)
    estimator = sec.get("estimator", "did_delta1")
    reps = int(sec.get("reps", 200))
    options = dict(sec.get("options") or {})
    res = monte_carlo(dcfg, estimator, reps, n_jobs=cfg.threads, **options)
    s = res.summary()
    s["abs_bias_lt_3mcse"] = abs(s["bias"]) < 3 * s["mc_se"]
    truth = GroundTruth(dcfg, None, 0, 0).to_json()
    cfg.emit("simulate.csv", _table(list(s), [list(s.values())]), ground_truth=truth)
    fails = [(r, msg) for r, msg in res.failures]
    cfg.emit("simulate_failures.csv", _table(["replicate", "error"], fails))


def cmd_balance(cfg: RunConfig):
    panel = _read_artifact(cfg)
    cov = pd.read_csv(cfg.path("covariates"), dtype={"municipality": str}).set_index("municipality")
    groups = pd.Series(panel.column("group"), index=panel.column("municipality")).groupby(level=0).first()
    cov = cov.loc[[m for m in cov.index if m in groups.index]]
    tab = balance_check(cov, groups)
    rows = tab[["covariate", "mean_t", "mean_c", "smd", "p", "flag"]].itertuples(index=False)
    cfg.emit("balance.csv", _table(["covariate", "mean_t", "mean_c", "smd", "p", "flag"], rows))


COMMANDS = {
    "ingest": cmd_ingest,
    "classify": cmd_classify,
    "estimate": cmd_estimate,
    "event-study": cmd_event_study,
    "sensitivity": cmd_sensitivity,
    "placebo": cmd_placebo,
    "simulate": cmd_simulate,
    "balance": cmd_balance,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="JSON run config")
    common.add_argument("--seed", type=int, default=None, metavar="N", help="override the config seed")
    common.add_argument("--out", default=None, metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, default=1, metavar="N", help="worker processes for simulation")
    parser = argparse.ArgumentParser(prog="tweetdid", description="Difference-in-differences pipeline for tweet panels")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.seed, args.out, args.threads)
        COMMANDS[args.command](cfg)
        cfg.flush()
    except UsageError as exc:
        print(f"tweetdid {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"tweetdid {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
