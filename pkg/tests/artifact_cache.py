"""Shared cache of trained models and reference trajectories.

Heavy artifacts (trained solvers, long emulator references) are stored
under ``tests/_artifacts`` keyed by everything that determines them.
Because training and emulation are deterministic given their configs,
loading a cached artifact is equivalent to recomputing it; a warm-up
script can populate the cache ahead of the test run, and interrupted
trainings resume from their rolling checkpoints.
"""

from __future__ import annotations

import os
from dataclasses import replace
from pathlib import Path

from tankflow.emulator import StepParams, run
from tankflow.scenario import Scenario, TimeSeries
from tankflow.training import (
    TrainedModel,
    TrainingConfig,
    default_config,
    load_model,
    save_model,
    train,
)

ARTIFACTS = Path(__file__).resolve().parent / "_artifacts"

SMOKE_COLLOCATION = 500
SMOKE_EPOCHS = 3000


def smoke_config(mode: str, n_tanks: int = 2, seed: int = 0) -> TrainingConfig:
    """Built-in presets shrunk to the desk-scale budget."""
    base = default_config(n_tanks, mode, seed=seed)
    return replace(base, n_collocation=SMOKE_COLLOCATION, epochs=SMOKE_EPOCHS)


def full_config(mode: str, n_tanks: int = 2, seed: int = 0) -> TrainingConfig:
    """The unmodified preset: the full training budget."""
    return default_config(n_tanks, mode, seed=seed)


def model_tag(config: TrainingConfig, n_tanks: int) -> str:
    return (f"{config.mode}-n{n_tanks}-c{config.n_collocation}"
            f"-e{config.epochs}-s{config.seed}")


def get_model(config: TrainingConfig, scenario: Scenario,
              progress=None) -> TrainedModel:
    """Load the cached model for this config, training it if absent."""
    directory = ARTIFACTS / model_tag(config, scenario.n_tanks)
    if (directory / "model.json").exists():
        model, _ = load_model(str(directory))
        return model
    checkpoint_dir = directory / "checkpoints"
    resume = (checkpoint_dir / "params.bin").exists()
    model = train(config, scenario, checkpoint_dir=str(checkpoint_dir),
                  resume=resume, progress=progress,
                  progress_every=500 if progress else 0)
    save_model(str(directory), model, config)
    return model


def get_reference(n_tanks: int, t_end: float,
                  record_interval: int = 10) -> TimeSeries:
    """Cached emulator trajectory with early termination disabled."""
    name = f"reference-n{n_tanks}-t{t_end:g}-r{record_interval}.csv"
    path = ARTIFACTS / name
    if path.exists():
        return TimeSeries.read_csv(str(path))
    scenario = Scenario(n_tanks=n_tanks)
    params = StepParams(termination_epsilon=0.0,
                        record_interval=record_interval)
    series = run(scenario, params, t_end=t_end)
    os.makedirs(ARTIFACTS, exist_ok=True)
    series.write_csv(str(path))
    return series
