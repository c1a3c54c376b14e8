"""Estimator-style front end for the cascade solvers.

``CascadePinn`` wraps scenario construction, preset resolution, and
the training loop behind the familiar fit/predict interface so the
solvers compose with scikit-learn tooling (``get_params``, ``clone``,
grid search over hyperparameters).  The fit is data-free: the training
signal is the physics residual, so ``fit`` takes no samples and
``predict`` maps times to the solution matrix.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from tankflow.network import NetworkSpec
from tankflow.physics import LossWeights
from tankflow.scenario import Scenario, TimeSeries
from tankflow.training import (
    MODES,
    TrainingConfig,
    _interp_row,
    _PER_NODE_DEPTH,
    _PER_NODE_WIDTH,
    _SINGLE_NET_DEPTH,
    evaluate_solution,
    predict as predict_series,
    train,
)


def check_times(times, t_min: float = 0.0, t_max: float | None = None):
    """Validate an evaluation-time array.

    Returns ``(times, extrapolated)`` where the flag marks points
    outside [t_min, t_max].  Rejects non-1-D, empty, and non-finite
    input.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim == 2 and times.shape[1] == 1:
        times = times[:, 0]
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-D array")
    if not np.all(np.isfinite(times)):
        raise ValueError("times must be finite")
    extrapolated = bool((times < t_min).any()
                        or (t_max is not None and (times > t_max).any()))
    return times, extrapolated


class CascadePinn(BaseEstimator):
    """Physics-trained solver for one cascade scenario.

    Parameters left as ``None`` resolve to the built-in presets for
    the scenario size at fit time.  ``mode`` selects the wiring:
    ``"vanilla"`` (one network for the whole solution vector) or
    ``"node_assigned"`` (one single-output network per solved
    quantity).
    """

    def __init__(self, mode: str = "node_assigned", n_tanks: int = 2,
                 scenario: Scenario | None = None,
                 end_time: float | None = None,
                 n_collocation: int | None = None,
                 epochs: int | None = None,
                 hidden_layers: int | None = None,
                 hidden_width: int | None = None,
                 base_lr: float = 1e-4, lr_decay: float = 0.9999,
                 momentum_weight: float = 1.0,
                 continuity_weight: float = 0.001,
                 chain_rule: bool = True, seed: int = 0):
        self.mode = mode
        self.n_tanks = n_tanks
        self.scenario = scenario
        self.end_time = end_time
        self.n_collocation = n_collocation
        self.epochs = epochs
        self.hidden_layers = hidden_layers
        self.hidden_width = hidden_width
        self.base_lr = base_lr
        self.lr_decay = lr_decay
        self.momentum_weight = momentum_weight
        self.continuity_weight = continuity_weight
        self.chain_rule = chain_rule
        self.seed = seed

    def _resolve(self) -> tuple[Scenario, TrainingConfig]:
        scenario = (self.scenario if self.scenario is not None
                    else Scenario(n_tanks=self.n_tanks))
        scenario.validate()
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        end, points, epochs, width = _interp_row(scenario.n_tanks)
        n_outputs = 2 * scenario.n_tanks - 1
        if self.mode == "vanilla":
            depth = (self.hidden_layers if self.hidden_layers is not None
                     else _SINGLE_NET_DEPTH)
            width = self.hidden_width if self.hidden_width is not None else width
            specs = (NetworkSpec(1, depth, width, n_outputs),)
        else:
            depth = (self.hidden_layers if self.hidden_layers is not None
                     else _PER_NODE_DEPTH)
            width = (self.hidden_width if self.hidden_width is not None
                     else _PER_NODE_WIDTH)
            specs = tuple(NetworkSpec(1, depth, width, 1)
                          for _ in range(n_outputs))
        config = TrainingConfig(
            mode=self.mode,
            end_time=self.end_time if self.end_time is not None else end,
            n_collocation=(self.n_collocation if self.n_collocation is not None
                           else points),
            epochs=self.epochs if self.epochs is not None else epochs,
            specs=specs,
            base_lr=self.base_lr,
            lr_decay=self.lr_decay,
            weights=LossWeights(self.momentum_weight, self.continuity_weight),
            seed=self.seed,
            chain_rule=self.chain_rule,
        )
        return scenario, config

    def fit(self, X=None, y=None, **train_kwargs):
        """Train the solver on its physics residual (no data involved).

        ``X`` and ``y`` are accepted for interface compatibility and
        ignored.  Keyword arguments pass through to the training loop
        (checkpointing, progress callbacks).
        """
        scenario, config = self._resolve()
        self.model_ = train(config, scenario, **train_kwargs)
        self.config_ = config
        self.scenario_ = scenario
        self.loss_history_ = self.model_.loss_history
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this CascadePinn instance is not fitted yet; call fit first")

    def predict(self, X) -> np.ndarray:
        """Solution matrix (n_times, 2N-1) at the requested times."""
        self._require_fitted()
        times, _ = check_times(X, t_max=self.model_.t_max)
        return evaluate_solution(self.model_, times).T

    def predict_timeseries(self, times) -> TimeSeries:
        """Prediction as an emulator-shaped series (CSV-compatible)."""
        self._require_fitted()
        return predict_series(self.model_, np.asarray(times, dtype=float))
