"""
Choosing hyperparameters for accuracy or for fairness
=====================================================

Nested cross-validation picks (lambda, gamma) on inner folds. The naive rule
takes the lowest error; the fairness-aware rule first keeps every combination
whose error is within a band of the best (error <= best / 0.9) and then takes
the one with the smallest fairness gap.
"""

from gferm import SyntheticSpec, generate_synthetic
from gferm.datasets import default_s_grid
from gferm.selection import ExperimentSetup, HyperGrid, SelectionPolicy, run_experiment

data = generate_synthetic(SyntheticSpec(n=400, d=4, group_effect=1.0, seed=5))
s_grid = default_s_grid(data.s)
grid = HyperGrid(lambdas=(0.01, 0.1, 1.0, 10.0), gammas=(0.01, 0.1, 1.0))

for fair in (False, True):
    for policy in ("naive", "nvp"):
        setup = ExperimentSetup(kernel="gaussian", fair=fair, epsilon_hat=0.0, K=5,
                                policy=SelectionPolicy(policy), grid=grid, folds=3,
                                inner_folds=3, repetitions=1, seed=0)
        rep = run_experiment(data, s_grid, setup)
        mape, dgf = rep.aggregate("mape"), rep.aggregate("dgf")
        print(f"{'fair' if fair else 'free':4s} {policy:5s}  MAPE {mape['mean']:.3f} ± {mape['std']:.3f}"
              f"   DGF {dgf['mean']:.4f} ± {dgf['std']:.4f}   picked {rep.hyperparameter_counts()}")
