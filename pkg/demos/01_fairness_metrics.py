"""
Measuring group fairness on binned predictions
==============================================

Fairness here is judged inside label bins: for each bin of the target, compare
how often members of each sensitive group receive a prediction in that same
bin. Differences are summed over bins and group pairs.
"""

import numpy as np

from gferm import Dataset, assign_bins, categorical_grid, make_grid
from gferm import metrics

# A small regression problem: two groups, the second one systematically
# under-predicted.
rng = np.random.default_rng(0)
n = 400
s = rng.integers(0, 2, n).astype(float)
y = rng.uniform(0.0, 1.0, n)
pred = y + rng.normal(scale=0.08, size=n) - 0.1 * s

data = Dataset(np.zeros((n, 1)), s, y)
binned = assign_bins(data, make_grid(y, 5, "uniform"), categorical_grid(2))
print("cell counts (label bin x group):")
print(binned.counts)

# Per-cell probability that the prediction stays in the label bin.
table = metrics.conditional_probabilities(pred, binned)
print("\nP(prediction in bin k | label in bin k, group q):")
print(np.round(table.values, 3))

# The gap sum adds |P_kp - P_kq| over every ordered pair of groups.
print("\nraw gap sum      :", round(metrics.dgf(pred, binned), 4))
print("normalized (KQ^2):", round(metrics.dgf(pred, binned, normalize=True), 4))

# Replacing the indicator by the linear loss (prediction minus label) gives
# the convex surrogate used for training; delta-hat measures how far apart
# the two are.
dh = metrics.delta_hat(pred, binned)
print("delta-hat        :", round(dh["normalized"], 4))

# With binary labels and two label bins split at zero, the zero-one version
# of the loss gap is the equalized-odds gap.
yb = np.where(y > 0.5, 1.0, -1.0)
pb = np.where(pred > 0.5 - 0.05 * s, 1.0, -1.0)
bb = assign_bins(Dataset(np.zeros((n, 1)), s, yb),
                 make_grid(cut_points=[-1.5, 0.0, 1.5], strategy="explicit"), categorical_grid(2))
eo = metrics.lgf(pb, bb, metrics.ZERO_ONE_BIN, epsilon=0.05, normalization="KQ(Q-1)")
print("\nequalized-odds gap:", round(eo["value"], 4), "fair at 0.05:", eo["is_fair"])
