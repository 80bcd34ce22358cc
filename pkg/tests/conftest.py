import sys

import numpy as np
import pandas as pd
import pytest

from tweetdid.panel import DEFAULT_SCHEDULE, DEFAULT_SCHEME, Panel

# one representative calendar date per period of the default scheme
PERIOD_DATES = {0: "2020-02-10", 1: "2020-03-01", 2: "2020-03-15"}


def make_panel(records, scheme=DEFAULT_SCHEME, schedule=DEFAULT_SCHEDULE, distance=None):
    """Panel from (user, municipality, zone, period, y) tuples."""
    rows = []
    for i, rec in enumerate(records):
        user, muni, zone, period, y = rec[:5]
        row = {
            "tweet_id": f"t{i:05d}",
            "user_id": user,
            "municipality": muni,
            "date": PERIOD_DATES[period],
            "zone": zone,
            "y": y,
        }
        if distance is not None:
            row["distance_km"] = distance[i]
        rows.append(row)
    return Panel.from_frame(pd.DataFrame(rows), scheme, schedule, outcomes=["y"])


def random_panel(rng, n_munis=8, users=3, tweets=4, periods=(0, 1, 2)):
    recs = []
    for m in range(n_munis):
        zone = "red" if m < n_munis // 2 else "orange"
        for u in range(users):
            for t in periods:
                for _ in range(tweets):
                    recs.append((f"m{m}u{u}", f"m{m}", zone, t, int(rng.random() < 0.3 + 0.1 * t)))
    return make_panel(recs)


@pytest.fixture
def rng():
    return np.random.default_rng(20200223)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in mod.CRITERIA:
        if name in mod.RESULTS:
            terminalreporter.write_line(mod.format_line(name, *mod.RESULTS[name]))
