"""
Tweet-level panel construction.

Raw records are repeated cross-sections of tweets. Each row is assigned a
time period from calendar cutoffs, a first-treated cohort from its zone, and
the treatment status ``1[t >= g]``. Rows falling inside exclusion windows are
dropped and counted.
"""

from __future__ import annotations

import csv
import itertools
import io
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

NEVER_TREATED = math.inf

BASE_COLUMNS = ("tweet_id", "user_id", "municipality", "date", "zone")
OPTIONAL_COLUMNS = ("text", "distance_km")
DERIVED_COLUMNS = ("period", "cohort", "treated", "group")
TOPIC_PREFIX = "topic_"


class PanelError(ValueError):
    """Base class for panel construction failures."""


class ParseError(PanelError):
    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


class ValidationError(PanelError):
    pass


class ConfigError(PanelError):
    pass


class ExcludedDate(PanelError):
    """Raised by :func:`assign_period` for dates inside an exclusion window."""


def _as_date(value) -> date:
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value))


@dataclass(frozen=True)
class PeriodScheme:
    """Calendar cutoffs splitting the study window into periods.

    ``cutoffs[k]`` is the first day of period ``k + 1``; the cutoff date itself
    belongs to the later period.
    """

    cutoffs: tuple[date, ...]
    exclusion_windows: tuple[tuple[date, date], ...] = ()
    start: date | None = None
    end: date | None = None
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        cutoffs = tuple(_as_date(c) for c in self.cutoffs)
        windows = tuple((_as_date(a), _as_date(b)) for a, b in self.exclusion_windows)
        object.__setattr__(self, "cutoffs", cutoffs)
        object.__setattr__(self, "exclusion_windows", windows)
        if self.start is not None:
            object.__setattr__(self, "start", _as_date(self.start))
        if self.end is not None:
            object.__setattr__(self, "end", _as_date(self.end))
        if any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
            raise ConfigError("cutoffs must be strictly increasing")
        for lo, hi in windows:
            if hi < lo:
                raise ConfigError(f"exclusion window {lo}..{hi} is reversed")
            if (self.start is not None and lo < self.start) or (
                self.end is not None and hi > self.end
            ):
                raise ConfigError(f"exclusion window {lo}..{hi} outside study window")
        if self.start is not None and self.end is not None and self.end < self.start:
            raise ConfigError("study window end precedes start")
        if self.labels is not None and len(self.labels) != len(cutoffs) + 1:
            raise ConfigError("need one label per period")

    @property
    def n_periods(self) -> int:
        return len(self.cutoffs) + 1

    def in_window(self, d: date) -> bool:
        if self.start is not None and d < self.start:
            return False
        if self.end is not None and d > self.end:
            return False
        return True

    def is_excluded(self, d: date) -> bool:
        return any(lo <= d <= hi for lo, hi in self.exclusion_windows)

    def to_dict(self) -> dict:
        return {
            "cutoffs": [c.isoformat() for c in self.cutoffs],
            "exclusion_windows": [[a.isoformat(), b.isoformat()] for a, b in self.exclusion_windows],
            "start": self.start.isoformat() if self.start else None,
            "end": self.end.isoformat() if self.end else None,
            "labels": list(self.labels) if self.labels else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PeriodScheme":
        labels = d.get("labels")
        return cls(
            cutoffs=tuple(d["cutoffs"]),
            exclusion_windows=tuple(tuple(w) for w in d.get("exclusion_windows", ())),
            start=d.get("start"),
            end=d.get("end"),
            labels=tuple(labels) if labels else None,
        )


@dataclass(frozen=True)
class TreatmentSchedule:
    """First-treated period per zone. ``math.inf`` marks never-treated zones."""

    zone_first_treated: Mapping[str, float]

    def __post_init__(self):
        clean = {}
        for zone, g in dict(self.zone_first_treated).items():
            g = NEVER_TREATED if g is None or g == "inf" else float(g)
            if not (g == NEVER_TREATED or (g.is_integer() and g >= 0)):
                raise ConfigError(f"cohort for zone {zone!r} must be a period index or inf")
            clean[str(zone)] = g
        if not clean:
            raise ConfigError("treatment schedule is empty")
        object.__setattr__(self, "zone_first_treated", clean)

    @property
    def first_cohort(self) -> float:
        return min(self.zone_first_treated.values())

    @property
    def last_cohort(self) -> float:
        finite = [g for g in self.zone_first_treated.values() if g != NEVER_TREATED]
        return max(finite) if finite else NEVER_TREATED

    def to_dict(self) -> dict:
        return {z: (None if g == NEVER_TREATED else int(g)) for z, g in self.zone_first_treated.items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TreatmentSchedule":
        return cls({z: NEVER_TREATED if g is None or g == "inf" else g for z, g in d.items()})


# default profile: red zone locked down Feb 23 2020, national extension Mar 9
DEFAULT_SCHEME = PeriodScheme(
    cutoffs=(date(2020, 2, 23), date(2020, 3, 9)),
    exclusion_windows=(
        (date(2020, 2, 20), date(2020, 2, 22)),
        (date(2020, 3, 7), date(2020, 3, 8)),
    ),
    start=date(2020, 1, 1),
    end=date(2020, 3, 22),
    labels=("pre", "post", "post-post"),
)
DEFAULT_SCHEDULE = TreatmentSchedule({"red": 1, "orange": 2})

# January / Feb 1-19 (baseline) / Feb 23-Mar 6 / Mar 9-21
EVENT_STUDY_SCHEME = PeriodScheme(
    cutoffs=(date(2020, 2, 1), date(2020, 2, 23), date(2020, 3, 9)),
    exclusion_windows=(
        (date(2020, 2, 20), date(2020, 2, 22)),
        (date(2020, 3, 7), date(2020, 3, 8)),
    ),
    start=date(2020, 1, 1),
    end=date(2020, 3, 21),
    labels=("january", "baseline", "post", "post-post"),
)
EVENT_STUDY_SCHEDULE = TreatmentSchedule({"red": 2, "orange": 3})


def assign_period(d, scheme: PeriodScheme) -> int:
    """Period index of a calendar date.

    Raises :class:`ExcludedDate` for dates in an exclusion window and
    :class:`ValidationError` for dates outside the study window.
    """
    d = _as_date(d)
    if not scheme.in_window(d):
        raise ValidationError(f"{d} outside study window")
    if scheme.is_excluded(d):
        raise ExcludedDate(f"{d} falls in an exclusion window")
    for t, cut in enumerate(scheme.cutoffs):
        if d < cut:
            return t
    return len(scheme.cutoffs)


def cohort_of(zone: str, schedule: TreatmentSchedule) -> float:
    try:
        return schedule.zone_first_treated[zone]
    except KeyError:
        raise ConfigError(f"zone {zone!r} has no entry in the treatment schedule") from None


@dataclass(frozen=True)
class Observation:
    tweet_id: str
    user_id: str
    municipality: str
    date: date
    zone: str
    outcomes: Mapping[str, int] = field(default_factory=dict)
    topic_flags: Mapping[str, int] = field(default_factory=dict)
    text: str | None = None
    distance_km: float | None = None


@dataclass
class LoadReport:
    n_read: int = 0
    n_retained: int = 0
    n_excluded: int = 0
    n_rejected: int = 0
    excluded_by_window: dict = field(default_factory=dict)
    rejected: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_read": self.n_read,
            "n_retained": self.n_retained,
            "n_excluded": self.n_excluded,
            "n_rejected": self.n_rejected,
            "excluded_by_window": dict(self.excluded_by_window),
            "rejected": [list(r) for r in self.rejected],
        }


class Panel:
    """Validated tweet-level panel with periods, cohorts and treatment status.

    The underlying frame is treated as read-only; every transformation
    returns a new Panel.
    """

    def __init__(
        self,
        frame: pd.DataFrame,
        scheme: PeriodScheme,
        schedule: TreatmentSchedule,
        outcomes: Sequence[str],
        topics: Sequence[str] = (),
        report: LoadReport | None = None,
    ):
        self._frame = frame
        self.scheme = scheme
        self.schedule = schedule
        self.outcomes = tuple(outcomes)
        self.topics = tuple(topics)
        self.report = report

    # construction ---------------------------------------------------------

    @classmethod
    def from_frame(
        cls,
        frame: pd.DataFrame,
        scheme: PeriodScheme,
        schedule: TreatmentSchedule,
        outcomes: Sequence[str] | None = None,
        topics: Sequence[str] | None = None,
        report: LoadReport | None = None,
    ) -> "Panel":
        """Validate a frame of raw records and derive period/cohort/treatment.

        Rows outside the study window are rejected and rows inside exclusion
        windows dropped; both are counted in the returned panel's report.
        """
        missing = [c for c in BASE_COLUMNS if c not in frame.columns]
        if missing:
            raise ValidationError(f"missing columns: {missing}")
        extra = [c for c in frame.columns if c not in BASE_COLUMNS + OPTIONAL_COLUMNS + DERIVED_COLUMNS]
        if topics is None:
            topics = [c[len(TOPIC_PREFIX):] for c in extra if c.startswith(TOPIC_PREFIX)]
        if outcomes is None:
            outcomes = [c for c in extra if not c.startswith(TOPIC_PREFIX)]
        for name in outcomes:
            if name not in frame.columns:
                raise ValidationError(f"outcome column {name!r} missing")
        for name in topics:
            if TOPIC_PREFIX + name not in frame.columns:
                raise ValidationError(f"topic column {TOPIC_PREFIX + name!r} missing")

        report = report or LoadReport(n_read=len(frame))
        df = frame.reset_index(drop=True).copy()
        for col in ("tweet_id", "user_id", "municipality", "zone"):
            df[col] = df[col].astype(str)
        df["date"] = pd.to_datetime(df["date"]).values.astype("datetime64[D]")

        dup = df["tweet_id"].duplicated(keep=False)
        if dup.any():
            ids = sorted(df.loc[dup, "tweet_id"].unique())[:5]
            raise ValidationError(f"duplicate tweet_id: {ids}")

        for name in list(outcomes) + [TOPIC_PREFIX + t for t in topics]:
            vals = pd.to_numeric(df[name], errors="coerce")
            bad = ~vals.isin([0, 1])
            if bad.any():
                i = int(np.flatnonzero(bad.to_numpy())[0])
                raise ValidationError(f"column {name!r} row {i + 1}: value {df[name].iloc[i]!r} is not 0/1")
            df[name] = vals.astype(np.int8)

        days = df["date"].to_numpy()
        keep = np.ones(len(df), dtype=bool)
        if scheme.start is not None or scheme.end is not None:
            lo = np.datetime64(scheme.start or date.min, "D")
            hi = np.datetime64(scheme.end or date.max, "D")
            outside = (days < lo) | (days > hi)
            for i in np.flatnonzero(outside):
                report.rejected.append((int(i) + 1, df["tweet_id"].iat[i], "date outside study window"))
            report.n_rejected += int(outside.sum())
            keep &= ~outside
        for lo_d, hi_d in scheme.exclusion_windows:
            hit = keep & (days >= np.datetime64(lo_d, "D")) & (days <= np.datetime64(hi_d, "D"))
            key = f"{lo_d.isoformat()}/{hi_d.isoformat()}"
            report.excluded_by_window[key] = report.excluded_by_window.get(key, 0) + int(hit.sum())
            report.n_excluded += int(hit.sum())
            keep &= ~hit
        df = df.loc[keep].reset_index(drop=True)

        cuts = np.array([np.datetime64(c, "D") for c in scheme.cutoffs], dtype="datetime64[D]")
        df["period"] = np.searchsorted(cuts, df["date"].to_numpy(), side="right").astype(np.int64)
        unknown = sorted(set(df["zone"]) - set(schedule.zone_first_treated))
        if unknown:
            raise ConfigError(f"zones without schedule entry: {unknown}")
        df["cohort"] = df["zone"].map(schedule.zone_first_treated).astype(float)
        df["treated"] = (df["period"] >= df["cohort"]).astype(np.int8)
        df["group"] = (df["cohort"] == schedule.first_cohort).astype(np.int8)
        report.n_retained = len(df)

        order = list(BASE_COLUMNS) + [c for c in OPTIONAL_COLUMNS if c in df.columns]
        order += list(DERIVED_COLUMNS) + list(outcomes) + [TOPIC_PREFIX + t for t in topics]
        return cls(df[order], scheme, schedule, outcomes, topics, report)

    @classmethod
    def from_observations(
        cls,
        observations: Iterable[Observation],
        scheme: PeriodScheme,
        schedule: TreatmentSchedule,
    ) -> "Panel":
        rows = []
        for ob in observations:
            row = {
                "tweet_id": ob.tweet_id,
                "user_id": ob.user_id,
                "municipality": ob.municipality,
                "date": ob.date,
                "zone": ob.zone,
                "text": ob.text,
                "distance_km": ob.distance_km,
            }
            row.update(ob.outcomes)
            row.update({TOPIC_PREFIX + k: v for k, v in ob.topic_flags.items()})
            rows.append(row)
        frame = pd.DataFrame(rows)
        for col in ("text", "distance_km"):
            if col in frame and frame[col].isna().all():
                frame = frame.drop(columns=col)
        if frame.empty:
            frame = pd.DataFrame(columns=list(BASE_COLUMNS))
        return cls.from_frame(frame, scheme, schedule)

    # access ---------------------------------------------------------------

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame

    def __len__(self) -> int:
        return len(self._frame)

    def __repr__(self) -> str:
        return (
            f"Panel(n={len(self)}, periods={self.periods.tolist()}, "
            f"outcomes={list(self.outcomes)}, topics={list(self.topics)})"
        )

    @property
    def periods(self) -> np.ndarray:
        return np.unique(self._frame["period"].to_numpy())

    @property
    def has_distance(self) -> bool:
        return "distance_km" in self._frame.columns and self._frame["distance_km"].notna().any()

    def column(self, name: str) -> np.ndarray:
        return self._frame[name].to_numpy()

    def outcome(self, name: str, topic: str | None = None) -> np.ndarray:
        """Outcome vector; with ``topic`` the outcome AND the topic flag."""
        if name not in self._frame.columns:
            raise ValidationError(f"outcome {name!r} not in panel")
        y = self._frame[name].to_numpy().astype(float)
        if topic is not None:
            y = y * self._frame[TOPIC_PREFIX + topic].to_numpy()
        return y

    def observations(self) -> Iterator[Observation]:
        df = self._frame
        for rec in df.to_dict("records"):
            yield Observation(
                tweet_id=rec["tweet_id"],
                user_id=rec["user_id"],
                municipality=rec["municipality"],
                date=pd.Timestamp(rec["date"]).date(),
                zone=rec["zone"],
                outcomes={k: int(rec[k]) for k in self.outcomes},
                topic_flags={k: int(rec[TOPIC_PREFIX + k]) for k in self.topics},
                text=rec.get("text"),
                distance_km=rec.get("distance_km"),
            )

    def n_clusters(self, key: str = "municipality") -> int:
        return int(self._frame[key].nunique())

    # transformations --------------------------------------------------------

    def _replace(self, frame: pd.DataFrame, **kw) -> "Panel":
        args = dict(
            scheme=self.scheme,
            schedule=self.schedule,
            outcomes=self.outcomes,
            topics=self.topics,
            report=self.report,
        )
        args.update(kw)
        return Panel(frame.reset_index(drop=True), **args)

    def subset(self, mask) -> "Panel":
        return self._replace(self._frame.loc[np.asarray(mask, dtype=bool)])

    def restrict_periods(self, periods: Iterable[int]) -> "Panel":
        periods = list(periods)
        return self.subset(self._frame["period"].isin(periods).to_numpy())

    def relabel_periods(self, mapping: Mapping[int, int]) -> "Panel":
        """Apply an order-preserving relabelling to periods and cohorts."""
        df = self._frame.copy()
        df["period"] = df["period"].map(mapping).astype(np.int64)
        df["cohort"] = df["cohort"].map(lambda g: g if g == NEVER_TREATED else float(mapping[int(g)]))
        sched = TreatmentSchedule(
            {
                z: (g if g == NEVER_TREATED or int(g) not in mapping else mapping[int(g)])
                for z, g in self.schedule.zone_first_treated.items()
            }
        )
        return self._replace(df, schedule=sched)

    def with_columns(self, **columns) -> "Panel":
        df = self._frame.copy()
        outcomes = list(self.outcomes)
        topics = list(self.topics)
        for name, values in columns.items():
            df[name] = values
            if name.startswith(TOPIC_PREFIX):
                if name[len(TOPIC_PREFIX):] not in topics:
                    topics.append(name[len(TOPIC_PREFIX):])
            elif name not in BASE_COLUMNS + OPTIONAL_COLUMNS + DERIVED_COLUMNS and name not in outcomes:
                outcomes.append(name)
        return self._replace(df, outcomes=outcomes, topics=topics)

    def with_groups(self, group: np.ndarray) -> "Panel":
        """Override the treatment-group indicator (used for placebo designs)."""
        df = self._frame.copy()
        df["group"] = np.asarray(group, dtype=np.int8)
        return self._replace(df)

    # serialization ----------------------------------------------------------

    def to_csv(self, dest: str | Path | IO[str] | None = None) -> str | None:
        df = self._frame.copy()
        df["date"] = pd.to_datetime(df["date"]).dt.strftime("%Y-%m-%d")
        df["cohort"] = df["cohort"].map(lambda g: "inf" if g == NEVER_TREATED else str(int(g)))
        text = df.to_csv(index=False, lineterminator="\n", float_format="%.10g")
        if dest is None:
            return text
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            Path(dest).write_text(text, encoding="utf-8")
        return None


def _read_records(source) -> tuple[list[str], list[list[str]]]:
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        handle = open(source, newline="", encoding="utf-8")
        close = True
    elif isinstance(source, str):
        handle = io.StringIO(source)
        close = True
    else:
        handle = source
        close = False
    try:
        # leading "#" lines carry run metadata and are not part of the table
        lines = itertools.dropwhile(lambda ln: ln.startswith("#"), handle)
        reader = csv.reader(lines)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "missing header row") from None
        rows = list(reader)
    finally:
        if close:
            handle.close()
    return [h.strip() for h in header], rows


def load_panel(
    source,
    scheme: PeriodScheme = DEFAULT_SCHEME,
    schedule: TreatmentSchedule = DEFAULT_SCHEDULE,
    outcomes: Sequence[str] | None = None,
    topics: Sequence[str] | None = None,
) -> Panel:
    """Read comma-separated tweet records into a :class:`Panel`.

    ``source`` is a path, a CSV string, or an open text stream with a header
    row. Row numbers in errors count the header as row 1.
    """
    header, rows = _read_records(source)
    missing = [c for c in BASE_COLUMNS if c not in header]
    if missing:
        raise ParseError(1, f"header lacks columns {missing}")
    width = len(header)
    idx = {h: i for i, h in enumerate(header)}
    for n, row in enumerate(rows, start=2):
        if len(row) != width:
            raise ParseError(n, f"expected {width} fields, found {len(row)}")
        try:
            date.fromisoformat(row[idx["date"]].strip())
        except ValueError:
            raise ParseError(n, f"bad date {row[idx['date']]!r}") from None
        if not row[idx["tweet_id"]].strip():
            raise ParseError(n, "empty tweet_id")
    frame = pd.DataFrame(rows, columns=header)
    if "distance_km" in frame:
        frame["distance_km"] = pd.to_numeric(frame["distance_km"].replace("", np.nan))
    for col in ("period", "cohort", "treated", "group"):
        if col in frame:
            frame = frame.drop(columns=col)
    report = LoadReport(n_read=len(frame))
    panel = Panel.from_frame(frame, scheme, schedule, outcomes=outcomes, topics=topics, report=report)
    # rejected rows are reported with file row numbers
    report.rejected = [(r + 1, tid, why) for r, tid, why in report.rejected]
    return panel
