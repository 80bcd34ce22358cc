"""How well do the estimators recover what the simulator planted?

Small replication counts keep this quick; the acceptance suite runs the
full-size versions.
"""

# %%
from tweetdid import DgpConfig, monte_carlo

base = DgpConfig(seed=2, n_periods=2, tau=0.05, n_clusters=100, users_per_cluster=10, tweets_per_user_period=10)
print("rows per replicate:", base.n_rows)

for name, cfg, est, reps in [
    ("delta_1, tau=0.05", base, "did_delta1", 100),
    ("delta_1, no effect", base.replace(tau=0.0), "did_delta1", 100),
    ("ATT(1,1) bootstrap", base, "att_gt", 40),
]:
    s = monte_carlo(cfg, est, reps, **({"n_boot": 99} if est == "att_gt" else {})).summary()
    print(f"{name:<22} mean {s['mean']:+.4f}  bias {s['bias']:+.5f}  mc_se {s['mc_se']:.5f}  "
          f"coverage {s['coverage']:.2f}  rejects {s['rejection_rate']:.2f}")

# %% Pre-trend test: size under parallel trends, power against a 0.02 per-period drift.
pre = DgpConfig(seed=4, n_periods=5, cohorts={"red": 4, "orange": None}, tweets_per_user_period=4,
                p0={"red": 0.1, "orange": 0.1})
for slope in (0.0, 0.02):
    r = monte_carlo(pre.replace(trend_slope=slope), "pretrend", 100)
    print(f"slope {slope}: rejection rate {r.rejection_rate:.2f} over {r.n_ok} panels")

# %% Replicates draw from disjoint seed streams, so the first ten never change with the total.
a = monte_carlo(base, "did_delta1", 10).estimates
b = monte_carlo(base, "did_delta1", 30).estimates[:10]
print("first ten identical:", bool((a == b).all()))
