"""Kernel regression under a group-fairness constraint, with fairness metrics and model selection."""

from .datasets import (ColumnSpec, DataError, SyntheticSpec, generate_synthetic, load_csv,
                       prepare_crime)
from .grid import (BinnedDataset, Dataset, DiscretizationGrid, GridError, Sample, assign_bins,
                   categorical_grid, make_grid)
from .kernels import ConstraintSystem, KernelSpec, build_constraints, constraint_values, gram
from .metrics import (LossSpec, conditional_probabilities, conditional_risks, delta_hat, dgf, lgf,
                      mape, pairwise_gap_sum)
from .selection import (ExperimentReport, ExperimentSetup, HyperGrid, SelectionPolicy,
                        run_experiment)
from .solver import FairModel, SolverConfig, SolverError, fit, fit_path, predict, project_l1_ball

__version__ = "0.1.0"
