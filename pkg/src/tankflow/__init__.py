"""Cascading water-tank hydraulics.

Control-volume emulation of gravity-driven draining through a chain of
tanks, plus physics-trained neural solvers for the same system.
"""

from tankflow.emulator import NonConvergence, StepParams, run, step
from tankflow.estimator import CascadePinn
from tankflow.metrics import ComparisonReport, compare, mae, mse, resample
from tankflow.network import DivergedLoss, Network, NetworkSpec
from tankflow.physics import (
    CascadeLoss,
    CollocationGrid,
    LossWeights,
    ResidualReport,
)
from tankflow.scenario import (
    ConfigError,
    Scenario,
    SystemState,
    TimeSeries,
    build_scenario,
    initial_state,
    load_scenario,
    total_mass,
)
from tankflow.training import (
    TrainedModel,
    TrainingConfig,
    default_config,
    load_model,
    predict,
    save_model,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CascadeLoss",
    "CascadePinn",
    "CollocationGrid",
    "ComparisonReport",
    "ConfigError",
    "DivergedLoss",
    "LossWeights",
    "Network",
    "NetworkSpec",
    "NonConvergence",
    "ResidualReport",
    "Scenario",
    "StepParams",
    "SystemState",
    "TimeSeries",
    "TrainedModel",
    "TrainingConfig",
    "build_scenario",
    "compare",
    "default_config",
    "initial_state",
    "load_scenario",
    "load_model",
    "mae",
    "mse",
    "predict",
    "resample",
    "run",
    "save_model",
    "step",
    "total_mass",
    "train",
]
