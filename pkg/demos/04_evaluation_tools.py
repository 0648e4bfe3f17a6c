"""Reference-based metrics and paired-comparison study analysis.

First the image metrics on controlled corruptions (their closed forms make
good sanity anchors), then a synthetic two-alternative forced-choice study:
votes drawn from a known probit model, scaled back with Thurstone Case V, and
bracketed by a bootstrap over observers.
"""

import numpy as np

from spotlight.imagecore import LINEAR, PixelMap
from spotlight.metrics import (
    pixel_metrics,
    preference_matrix_from_votes,
    report_markdown,
    simulate_votes,
    thurstone_case_v,
)

rng = np.random.default_rng(3)
ref = PixelMap(rng.uniform(0, 0.9, (64, 64, 3)).astype(np.float32), LINEAR)

# A constant offset has closed-form metrics: RMSE = offset, PSNR = -20 log10(offset).
rows = []
for offset in (0.1, 0.05, 0.01):
    pred = PixelMap(ref.data + np.float32(offset), LINEAR)
    r = pixel_metrics(ref, pred)
    rows.append([f"offset {offset}", r.psnr, r.ssim, r.rmse, r.mae])
noisy = PixelMap(np.clip(ref.data + rng.normal(0, 0.05, ref.data.shape), 0, 1).astype(np.float32), LINEAR)
r = pixel_metrics(ref, noisy)
rows.append(["gaussian s=0.05", r.psnr, r.ssim, r.rmse, r.mae])
print(report_markdown(["corruption", "psnr", "ssim", "rmse", "mae"], rows))

# Synthetic study: three "methods" with known quality gaps. Each simulated
# observer compares every pair once; Case V recovers the scale ordering.
truth = {"ours": 0.55, "baseline_a": 0.0, "baseline_b": -0.35}
votes = simulate_votes(truth, observers=40, seed=7)
pref = preference_matrix_from_votes(votes)
print(f"{pref.observers} observers, {int(pref.counts.sum())} votes")

result = thurstone_case_v(pref, bootstrap=500, seed=1, votes=votes)
order = np.argsort(-result.z)
table = [
    [result.methods[i], result.z[i], result.ci_low[i], result.ci_high[i]]
    for i in order
]
print(report_markdown(["method", "z", "ci_low", "ci_high"], table))
print("recovered ranking:", result.ranking())
