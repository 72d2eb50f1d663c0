"""Optimal low-thrust transfers by the indirect method, optimal-control
datasets built around a nominal transfer, and neural networks trained to
reproduce the optimal state feedback.

Canonical units throughout: 1 AU, the initial spacecraft mass and the solar
gravitational parameter are all 1.
"""

from .astro import BoundaryOrbit, CanonicalUnits, KeplerElements, orbit_from_degrees
from .datagen import HomotopyConfig, OptimalControlDataset, WalkConfig, build_moc_dataset, build_qoc_dataset, read_dataset, write_dataset
from .dynamics import EngineParams, TrajectoryRecord, control_law, propagate
from .kernels import BACKEND
from .nn import GuidanceModel, TrainConfig, load_model, save_model, train
from .rollout import closed_loop_rollout, evaluate_on_trajectory
from .shooting import TransferProblem, solve_nominal, solve_tpbvp

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BoundaryOrbit",
    "CanonicalUnits",
    "EngineParams",
    "GuidanceModel",
    "HomotopyConfig",
    "KeplerElements",
    "OptimalControlDataset",
    "TrainConfig",
    "TrajectoryRecord",
    "TransferProblem",
    "WalkConfig",
    "build_moc_dataset",
    "build_qoc_dataset",
    "closed_loop_rollout",
    "control_law",
    "evaluate_on_trajectory",
    "load_model",
    "orbit_from_degrees",
    "propagate",
    "read_dataset",
    "save_model",
    "solve_nominal",
    "solve_tpbvp",
    "train",
    "write_dataset",
]
