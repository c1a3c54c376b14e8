"""Training drivers for the cascade solvers.

Two wirings share one physics loss:

- ``vanilla``: a single network carries the whole solution vector
  (2N-1 outputs for N tanks).
- ``node_assigned``: one single-output network per solved quantity
  (2N-1 networks), updated synchronously from a shared loss
  evaluation; each network keeps its own optimizer state.

Training is full-batch on a fixed, equally spaced collocation grid
(uniform sampling of a fixed interval reproduces the same points every
epoch, so the grid is built once), with a multiplicative learning-rate
decay applied per epoch.  Runs are deterministic given the seed: the
per-network initializations come from spawned children of one seed
sequence, and the loop is plain single-threaded numpy.

Checkpoints are written every ``checkpoint_every`` epochs (and on
divergence) into a directory holding the network parameters, the full
optimizer state, and the loss history, which together allow bitwise
resumption of an interrupted run.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from tankflow.network import (
    AdamState,
    DivergedLoss,
    Network,
    NetworkSpec,
    adam_step,
    load_checkpoint,
    save_checkpoint,
)
from tankflow.physics import CascadeLoss, CollocationGrid, LossWeights, scale_time
from tankflow.scenario import ConfigError, Scenario, TimeSeries, initial_state, scenario_config

MODES = ("vanilla", "node_assigned")
HISTORY_HEADER = "epoch,total,momentum,continuity,lr"

# canonical presets: n_tanks -> (end s, collocation pts, epochs, single-net width)
_PRESET_ROWS = {
    2: (1000.0, 2500, 30000, 192),
    3: (1400.0, 3000, 40000, 256),
    6: (2800.0, 6000, 50000, 368),
}
_SINGLE_NET_DEPTH = 10
_PER_NODE_DEPTH = 8
_PER_NODE_WIDTH = 128


@dataclass(frozen=True)
class TrainingConfig:
    """Everything that determines one training run, given a scenario."""

    mode: str
    end_time: float
    n_collocation: int
    epochs: int
    specs: tuple[NetworkSpec, ...]
    base_lr: float = 1e-4
    lr_decay: float = 0.9999
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    chain_rule: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.end_time > 0.0:
            raise ConfigError(f"end_time must be positive, got {self.end_time}")
        if self.n_collocation < 2:
            raise ConfigError(
                f"n_collocation must be >= 2, got {self.n_collocation}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not self.base_lr > 0.0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(
                f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if not self.specs:
            raise ConfigError("specs must not be empty")

    def validate_for(self, scenario: Scenario) -> None:
        """Check the network wiring against the scenario size."""
        n_outputs = 2 * scenario.n_tanks - 1
        if any(spec.input_dim != 1 for spec in self.specs):
            raise ConfigError("solver networks take scalar time input")
        if self.mode == "vanilla":
            if len(self.specs) != 1 or self.specs[0].output_dim != n_outputs:
                raise ConfigError(
                    f"vanilla mode needs one network with {n_outputs} outputs "
                    f"for {scenario.n_tanks} tanks")
        else:
            if len(self.specs) != n_outputs or any(
                    spec.output_dim != 1 for spec in self.specs):
                raise ConfigError(
                    f"node_assigned mode needs {n_outputs} single-output "
                    f"networks for {scenario.n_tanks} tanks")

    @property
    def grid(self) -> CollocationGrid:
        return CollocationGrid(0.0, self.end_time, self.n_collocation)


def _interp_row(n_tanks: int) -> tuple[float, int, int, int]:
    """Preset row for any cascade size.

    Sizes with preset hyperparameters (2, 3, 6) are returned
    verbatim; other sizes use piecewise-linear interpolation between
    the bracketing rows (clamped beyond the ends), with the network
    width rounded to a multiple of 8.
    """
    if n_tanks in _PRESET_ROWS:
        return _PRESET_ROWS[n_tanks]
    known = np.array(sorted(_PRESET_ROWS))
    rows = np.array([_PRESET_ROWS[k] for k in known])
    end = float(np.interp(n_tanks, known, rows[:, 0]))
    points = int(round(np.interp(n_tanks, known, rows[:, 1])))
    epochs = int(round(np.interp(n_tanks, known, rows[:, 2])))
    width = int(round(np.interp(n_tanks, known, rows[:, 3]) / 8.0)) * 8
    return end, points, epochs, width


def default_config(n_tanks: int, mode: str, seed: int = 0,
                   **overrides) -> TrainingConfig:
    """Preset hyperparameters for a cascade size and solver wiring."""
    if n_tanks < 2:
        raise ConfigError(f"n_tanks must be >= 2, got {n_tanks}")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    end, points, epochs, width = _interp_row(n_tanks)
    n_outputs = 2 * n_tanks - 1
    if mode == "vanilla":
        specs = (NetworkSpec(1, _SINGLE_NET_DEPTH, width, n_outputs),)
    else:
        specs = tuple(NetworkSpec(1, _PER_NODE_DEPTH, _PER_NODE_WIDTH, 1)
                      for _ in range(n_outputs))
    settings = dict(mode=mode, end_time=end, n_collocation=points,
                    epochs=epochs, specs=specs, seed=seed)
    settings.update(overrides)
    return TrainingConfig(**settings)


@dataclass
class TrainedModel:
    """A trained (or freshly initialized) solver ready for evaluation."""

    mode: str
    scenario: Scenario
    nets: list[Network]
    t_min: float
    t_max: float
    u0: np.ndarray
    chain_rule: bool
    seed: int
    epochs_run: int
    loss_history: np.ndarray  # rows of (epoch, total, momentum, continuity, lr)

    def predict(self, times) -> TimeSeries:
        return predict(self, times)


def _initial_vector(scenario: Scenario) -> np.ndarray:
    state = initial_state(scenario)
    return np.array(state.depths + state.velocities)


def initialize_networks(config: TrainingConfig) -> list[Network]:
    """Fresh networks from per-network children of the run seed."""
    children = np.random.SeedSequence(config.seed).spawn(len(config.specs))
    return [Network.initialized(spec, seed=child)
            for spec, child in zip(config.specs, children)]


def evaluate_solution(model: TrainedModel, times) -> np.ndarray:
    """Shifted solution matrix (2N-1, n) at arbitrary physical times."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-D array")
    scaled = scale_time(times, model.t_min, model.t_max)
    batch = np.append(scaled, 0.0)
    values = [net.forward(batch) for net in model.nets]
    block = values[0] if len(values) == 1 else np.vstack(values)
    n = times.size
    return block[:, :n] - block[:, n, None] + model.u0[:, None]


def predict(model: TrainedModel, times) -> TimeSeries:
    """Evaluate the solver on physical times, as an emulator-shaped series.

    Times outside the training span are evaluated anyway (the network
    extrapolates) and flagged in the metadata.
    """
    times = np.asarray(times, dtype=float)
    u = evaluate_solution(model, times)
    n_tanks = model.scenario.n_tanks
    extrapolated = bool((times < model.t_min).any()
                        or (times > model.t_max).any())
    metadata = {
        "source": "pinn",
        "mode": model.mode,
        "t_min": model.t_min,
        "t_max": model.t_max,
        "epochs_run": model.epochs_run,
        "seed": model.seed,
        "extrapolated": extrapolated,
    }
    return TimeSeries(times, u[:n_tanks].T.copy(), u[n_tanks:].T.copy(),
                      metadata=metadata)


# ---------------------------------------------------------------------------
# checkpointing


def _history_rows(history) -> np.ndarray:
    rows = np.asarray(history, dtype=float)
    return rows.reshape(-1, 5)


def write_history(path: str, history) -> None:
    """Loss history as CSV: epoch,total,momentum,continuity,lr."""
    rows = _history_rows(history)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for row in rows:
            fh.write("%d,%.17g,%.17g,%.17g,%.17g\n"
                     % (int(row[0]), row[1], row[2], row[3], row[4]))


def read_history(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != HISTORY_HEADER:
            raise ValueError(f"{path} is not a loss history file")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return data.reshape(-1, 5)


def save_training_checkpoint(directory: str, nets: list[Network],
                             states: list[AdamState], history,
                             seed: int, epoch: int) -> None:
    """Parameters + optimizer moments + history: enough to resume bitwise."""
    os.makedirs(directory, exist_ok=True)
    save_checkpoint(os.path.join(directory, "params.bin"), nets, seed, epoch)
    moments = {}
    for k, state in enumerate(states):
        moments[f"m{k}"] = state.m
        moments[f"v{k}"] = state.v
        moments[f"step{k}"] = np.array(state.step)
    np.savez(os.path.join(directory, "optimizer.npz"), **moments)
    write_history(os.path.join(directory, "history.csv"), history)


def load_training_checkpoint(directory: str, config: TrainingConfig):
    """Restore (nets, states, history, epoch) written by the saver."""
    nets, seed, epoch = load_checkpoint(os.path.join(directory, "params.bin"))
    if seed != config.seed:
        raise ValueError(
            f"checkpoint seed {seed} does not match config seed {config.seed}")
    if tuple(net.spec for net in nets) != tuple(config.specs):
        raise ValueError("checkpoint network shapes do not match the config")
    states = []
    with np.load(os.path.join(directory, "optimizer.npz")) as bundle:
        for k, net in enumerate(nets):
            state = AdamState(net.params.size, config.base_lr, config.lr_decay)
            state.m = bundle[f"m{k}"].copy()
            state.v = bundle[f"v{k}"].copy()
            state.step = int(bundle[f"step{k}"])
            states.append(state)
    history = read_history(os.path.join(directory, "history.csv"))
    return nets, states, history, epoch


# ---------------------------------------------------------------------------
# the training loop


def train(config: TrainingConfig, scenario: Scenario,
          checkpoint_dir: str | None = None, checkpoint_every: int = 1000,
          resume: bool = False, progress=None,
          progress_every: int = 0) -> TrainedModel:
    """Full-batch physics-residual descent per the run configuration.

    With ``checkpoint_dir`` set, a rolling checkpoint lands there every
    ``checkpoint_every`` epochs, at the end, and on divergence;
    ``resume=True`` continues from such a checkpoint with bitwise the
    same trajectory as an uninterrupted run.  ``progress`` is an
    optional callback ``(epoch, total, info, lr)`` invoked every
    ``progress_every`` epochs.

    A non-finite loss aborts with epoch diagnostics after writing the
    partial checkpoint.
    """
    config.validate_for(scenario)
    loss = CascadeLoss(scenario, config.grid, config.weights,
                       chain_rule=config.chain_rule)
    start_epoch = 0
    history: list[tuple] = []
    if resume:
        if checkpoint_dir is None:
            raise ValueError("resume requires a checkpoint_dir")
        nets, states, rows, start_epoch = load_training_checkpoint(
            checkpoint_dir, config)
        history = [tuple(row) for row in rows]
    else:
        nets = initialize_networks(config)
        states = [AdamState(net.params.size, config.base_lr, config.lr_decay)
                  for net in nets]

    for epoch in range(start_epoch, config.epochs):
        lr = states[0].learning_rate
        try:
            total, grads, info = loss.evaluate(nets, context=f"epoch {epoch}")
        except DivergedLoss:
            if checkpoint_dir is not None:
                save_training_checkpoint(checkpoint_dir, nets, states,
                                         history, config.seed, epoch)
            raise
        history.append((epoch, total, info["momentum"], info["continuity"], lr))
        for net, grad, state in zip(nets, grads, states):
            adam_step(net.params, grad, state)
        done = epoch + 1
        if checkpoint_dir is not None and done % checkpoint_every == 0:
            save_training_checkpoint(checkpoint_dir, nets, states, history,
                                     config.seed, done)
        if progress is not None and progress_every and done % progress_every == 0:
            progress(epoch, total, info, lr)

    if checkpoint_dir is not None:
        save_training_checkpoint(checkpoint_dir, nets, states, history,
                                 config.seed, config.epochs)
    return TrainedModel(
        mode=config.mode, scenario=scenario, nets=nets,
        t_min=0.0, t_max=config.end_time,
        u0=_initial_vector(scenario), chain_rule=config.chain_rule,
        seed=config.seed, epochs_run=config.epochs,
        loss_history=_history_rows(history),
    )


# ---------------------------------------------------------------------------
# model persistence


def save_model(directory: str, model: TrainedModel,
               config: TrainingConfig) -> None:
    """Model directory: parameters, run description, loss history."""
    os.makedirs(directory, exist_ok=True)
    save_checkpoint(os.path.join(directory, "model.bin"), model.nets,
                    model.seed, model.epochs_run)
    description = {
        "mode": model.mode,
        "scenario": scenario_config(model.scenario),
        "end_time": model.t_max,
        "n_collocation": config.n_collocation,
        "epochs": config.epochs,
        "base_lr": config.base_lr,
        "lr_decay": config.lr_decay,
        "momentum_weight": config.weights.momentum,
        "continuity_weight": config.weights.continuity,
        "seed": config.seed,
        "chain_rule": config.chain_rule,
    }
    with open(os.path.join(directory, "model.json"), "w", encoding="utf-8") as fh:
        json.dump(description, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_history(os.path.join(directory, "loss_history.csv"),
                  model.loss_history)


def load_model(directory: str) -> tuple[TrainedModel, TrainingConfig]:
    """Inverse of :func:`save_model`."""
    with open(os.path.join(directory, "model.json"), "r", encoding="utf-8") as fh:
        description = json.load(fh)
    from tankflow.scenario import build_scenario  # local to avoid cycle noise

    scenario = build_scenario(description["scenario"])
    nets, seed, epochs_run = load_checkpoint(os.path.join(directory, "model.bin"))
    config = TrainingConfig(
        mode=description["mode"],
        end_time=description["end_time"],
        n_collocation=description["n_collocation"],
        epochs=description["epochs"],
        specs=tuple(net.spec for net in nets),
        base_lr=description["base_lr"],
        lr_decay=description["lr_decay"],
        weights=LossWeights(description["momentum_weight"],
                            description["continuity_weight"]),
        seed=description["seed"],
        chain_rule=description["chain_rule"],
    )
    history_path = os.path.join(directory, "loss_history.csv")
    history = (read_history(history_path) if os.path.exists(history_path)
               else np.empty((0, 5)))
    model = TrainedModel(
        mode=config.mode, scenario=scenario, nets=nets,
        t_min=0.0, t_max=config.end_time,
        u0=_initial_vector(scenario), chain_rule=config.chain_rule,
        seed=seed, epochs_run=epochs_run, loss_history=history,
    )
    return model, config


def training_config_from_mapping(mapping, scenario: Scenario) -> TrainingConfig:
    """Build a run configuration from flat config keys.

    Recognized keys: ``mode``, ``end_time``, ``n_collocation``,
    ``epochs``, ``base_lr``, ``lr_decay``, ``momentum_weight``,
    ``continuity_weight``, ``seed``, ``chain_rule``, ``hidden_layers``,
    ``hidden_width``.  Anything omitted falls back to the preset for
    the scenario size; unknown keys are rejected.
    """
    known = {"mode", "end_time", "n_collocation", "epochs", "base_lr",
             "lr_decay", "momentum_weight", "continuity_weight", "seed",
             "chain_rule", "hidden_layers", "hidden_width"}
    unknown = set(mapping) - known
    if unknown:
        raise ConfigError(f"unknown training keys: {sorted(unknown)}")
    mode = str(mapping.get("mode", "vanilla"))
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    base = default_config(scenario.n_tanks, mode,
                          seed=int(mapping.get("seed", 0)))
    width = _interp_row(scenario.n_tanks)[3]
    depth = int(mapping.get("hidden_layers",
                            _SINGLE_NET_DEPTH if mode == "vanilla"
                            else _PER_NODE_DEPTH))
    width = int(mapping.get("hidden_width",
                            width if mode == "vanilla" else _PER_NODE_WIDTH))
    n_outputs = 2 * scenario.n_tanks - 1
    if mode == "vanilla":
        specs = (NetworkSpec(1, depth, width, n_outputs),)
    else:
        specs = tuple(NetworkSpec(1, depth, width, 1) for _ in range(n_outputs))
    weights = LossWeights(
        momentum=float(mapping.get("momentum_weight", 1.0)),
        continuity=float(mapping.get("continuity_weight", 0.001)),
    )
    chain_raw = mapping.get("chain_rule", "on")
    if isinstance(chain_raw, str):
        lowered = chain_raw.strip().lower()
        if lowered in ("on", "true", "1", "yes"):
            chain = True
        elif lowered in ("off", "false", "0", "no"):
            chain = False
        else:
            raise ConfigError(f"chain_rule must be on or off, got {chain_raw!r}")
    else:
        chain = bool(chain_raw)
    return TrainingConfig(
        mode=mode,
        end_time=float(mapping.get("end_time", base.end_time)),
        n_collocation=int(mapping.get("n_collocation", base.n_collocation)),
        epochs=int(mapping.get("epochs", base.epochs)),
        specs=specs,
        base_lr=float(mapping.get("base_lr", base.base_lr)),
        lr_decay=float(mapping.get("lr_decay", base.lr_decay)),
        weights=weights,
        seed=int(mapping.get("seed", 0)),
        chain_rule=chain,
    )
