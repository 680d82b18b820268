"""Data-driven online economic control of district heating networks.

Network models and steady-state economics live in :mod:`dhs`, the
incremental augmented system in :mod:`augment`, exact LQR quantities in
:mod:`lqr`, the online policy optimizer in :mod:`deepo`, comparison
controllers in :mod:`baselines` and closed-loop simulation in :mod:`simlab`.
"""

from .augment import AugmentedSystem, build_augmented, build_error_maps
from .deepo import AdamHyper, adam_step, gd_step, rank1_update, warm_start
from .dhs import (EconomicSpec, Edge, EdgeKind, HeatNetwork, Node, build_continuous,
                  build_kirchhoff, discretize, solve_equilibrium)
from .lqr import DataBatch, LqrWeights, lqr_cost, model_lqr
from .simlab import MismatchSpec, NoiseSpec, run_closed_loop

__version__ = '0.1.0'
