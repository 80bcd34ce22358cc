import math

import numpy as np
import pytest

from tweetdid.estimators import event_study
from tweetdid.panel import ConfigError
from tweetdid.sensitivity import max_pre_violation
from tweetdid.synthetic import DgpConfig, GroundTruth, generate_panel, monte_carlo, write_demo_inputs


def small(**kw):
    base = dict(n_clusters=10, users_per_cluster=4, tweets_per_user_period=5)
    base.update(kw)
    return DgpConfig(**base)


def test_same_seed_byte_identical():
    a, _ = generate_panel(small(seed=5, tau=0.05))
    b, _ = generate_panel(small(seed=5, tau=0.05))
    c, _ = generate_panel(small(seed=6, tau=0.05))
    assert a.to_csv() == b.to_csv() != c.to_csv()


def test_ground_truth_round_trip():
    cfg = small(seed=3, tau={"1,1": 0.05, "1,2": 0.07, "2,2": 0.02}, trend_slope=0.01, anticipation=0.005,
                rings=((0, 20), (20, 40)), ring_eta=(0.03, 0.01), ring_share=(0.3, 0.2), period_shocks=(0, 0.01, 0.02))
    _, truth = generate_panel(cfg, replicate=4)
    back = GroundTruth.from_dict(truth.to_dict())
    assert back == truth
    assert back.att(1, 2) == 0.07 and back.att(2, 1) == 0.0 and back.replicate == 4
    assert DgpConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        DgpConfig.from_dict({"sigma": 1})


def test_replicate_independent_of_rep_count():
    cfg = small(seed=9)
    r3 = monte_carlo(cfg, "did_delta1", 3)
    r6 = monte_carlo(cfg, "did_delta1", 6)
    assert r3.draws == r6.draws[:3]


def test_clamp_guard():
    with pytest.raises(ConfigError, match="clamped"):
        generate_panel(small(p0={"red": 0.98, "orange": 0.98}, tau=0.05))
    _, truth = generate_panel(small(p0={"red": 0.02, "orange": 0.5}, cluster_sd=0.0, cluster_period_sd=0.0))
    assert truth.n_clamped == 0


def test_config_validation():
    with pytest.raises(ConfigError):
        small(n_periods=1)
    with pytest.raises(ConfigError):
        small(rings=((0, 20),), ring_eta=(0.1,), ring_share=())
    with pytest.raises(ConfigError):
        small(p0={"red": 0.3})


def test_injected_effects_exact_in_probabilities():
    cfg = DgpConfig(seed=0, n_periods=3, tau=0.1, cluster_sd=0, cluster_period_sd=0, n_clusters=2,
                    users_per_cluster=1, tweets_per_user_period=40_000)
    panel, _ = generate_panel(cfg)
    y, g, t = panel.outcome("y"), panel.column("group"), panel.column("period")
    assert abs(y[(g == 1) & (t == 1)].mean() - 0.4) < 0.01
    assert abs(y[(g == 0) & (t == 2)].mean() - 0.4) < 0.01
    assert abs(y[(g == 0) & (t == 1)].mean() - 0.3) < 0.01


def test_min_reps_and_failures():
    res = monte_carlo(small(), "did_delta1", 2)
    s = res.summary()
    assert s["n_ok"] == 2 and all(math.isfinite(s[k]) for k in ("mean", "bias", "mc_se"))
    with pytest.raises(ValueError):
        monte_carlo(small(), "did_delta1", 1)
    broken = monte_carlo(small(n_periods=2), "att_gt", 3, t=2)
    assert len(broken.failures) == 3 and broken.n_ok == 0


def test_parallel_matches_serial():
    cfg = small(seed=2, tau=0.05)
    assert monte_carlo(cfg, "did_delta1", 4, n_jobs=2).draws == monte_carlo(cfg, "did_delta1", 4).draws


def test_pre_violation_converges_to_slope():
    cfg = DgpConfig(seed=1, n_periods=4, cohorts={"red": 3, "orange": None}, trend_slope=0.03, cluster_sd=0,
                    cluster_period_sd=0, n_clusters=4, users_per_cluster=5, tweets_per_user_period=20_000,
                    p0={"red": 0.2, "orange": 0.2})
    panel, _ = generate_panel(cfg)
    es = event_study(panel, "y", baseline=2, leads=2, lags=0, fe="none")
    assert max_pre_violation(es) == pytest.approx(0.03, abs=0.003)


@pytest.mark.slow
def test_null_dgp_centered():
    res = monte_carlo(DgpConfig(seed=17, n_periods=2, n_clusters=40, tweets_per_user_period=5), "did_delta1", 500)
    assert abs(res.bias) < 3 * res.mc_se


def test_demo_inputs(tmp_path):
    cfg = write_demo_inputs(tmp_path, seed=1, n_municipalities=8, users_per_municipality=2, tweets_per_user=5)
    assert (tmp_path / "tweets.csv").read_text().count("\n") == 8 * 2 * 5 + 1
    assert sorted(p.name for p in (tmp_path / "dictionaries").iterdir()) == [
        "economics.txt", "health.txt", "policy.txt", "politics.txt"]
    assert cfg["paths"]["panel"] == "tweets.csv"
