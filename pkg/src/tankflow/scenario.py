"""Problem definition for the cascading water-tank system.

A scenario is a linear cascade of open-topped tanks, each sitting one
elevation step above the next, connected by short pipes that leave the
bottom of the upper (donor) tank and enter the top of the lower
(receiver) tank.  The state of the system at one instant is the water
depth in every tank plus the flow velocity in every pipe.

Scenarios are immutable after construction and safe to share between
concurrent workers.  Configuration files use a flat ``key = value``
format (``#`` starts a comment) so they stay trivially parseable and
diff-friendly.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields
from typing import Iterable, Mapping, Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised when a configuration value is missing, malformed, or out of range."""


@dataclass(frozen=True)
class Scenario:
    """Geometry, physical constants, and active force terms for one cascade.

    All tanks share one footprint area and height; all pipes share one
    diameter and inertial length.  ``loss_coefficient`` is the net form-
    and wall-loss coefficient of each pipe; ``open_fraction`` scales the
    effective pipe opening.  ``exchange_coefficient``/``exchange_length``
    parameterize the interphase momentum-exchange term and default to
    zero (single-phase water).  The three boolean toggles switch
    individual momentum-equation terms on or off for sensitivity runs.
    """

    n_tanks: int = 6
    tank_area: float = 50.0
    tank_height: float = 2.0
    pipe_diameter: float = 0.2
    pipe_length: float = 0.1
    elevation_step: float = 1.8
    density: float = 1000.0
    gravity: float = 9.81
    loss_coefficient: float = 1.0
    open_fraction: float = 1.0
    exchange_coefficient: float = 0.0
    exchange_length: float = 0.0
    advection: bool = True
    form_wall_loss: bool = True
    interphase_exchange: bool = True

    @property
    def n_pipes(self) -> int:
        return self.n_tanks - 1

    @property
    def pipe_area(self) -> float:
        """Flow area of one pipe, derived from the diameter."""
        return math.pi * (self.pipe_diameter / 2.0) ** 2

    @property
    def area_ratio(self) -> float:
        """Pipe area over tank area, the advection-term geometry factor."""
        return self.pipe_area / self.tank_area

    def validate(self) -> "Scenario":
        if self.n_tanks < 2:
            raise ConfigError(f"n_tanks must be >= 2, got {self.n_tanks}")
        for name in ("tank_area", "tank_height", "pipe_diameter", "pipe_length",
                     "elevation_step", "density", "gravity"):
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be positive and finite, got {value}")
        for name in ("loss_coefficient", "exchange_coefficient", "exchange_length"):
            value = getattr(self, name)
            if not (value >= 0.0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be >= 0 and finite, got {value}")
        if not 0.0 <= self.open_fraction <= 1.0:
            raise ConfigError(
                f"open_fraction must lie in [0, 1], got {self.open_fraction}")
        return self


_BOOL_FIELDS = frozenset({"advection", "form_wall_loss", "interphase_exchange"})


def _parse_bool(key: str, raw: object) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ("true", "1", "yes", "on"):
        return True
    if text in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_number(key: str, raw: object, kind: type) -> float | int:
    try:
        if kind is int:
            value = int(str(raw).strip())
        else:
            value = float(str(raw).strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
    return value


def build_scenario(config: Mapping[str, object]) -> Scenario:
    """Build a validated :class:`Scenario` from a key-value mapping.

    Omitted keys fall back to the canonical six-tank defaults.  Values
    may be strings (as parsed from a config file) or already-typed
    numbers.  Unknown keys are rejected so typos surface immediately.
    """
    known = {f.name: f.type for f in fields(Scenario)}
    kwargs: dict[str, object] = {}
    for key, raw in config.items():
        if key not in known:
            raise ConfigError(f"unknown scenario key {key!r}")
        if key in _BOOL_FIELDS:
            kwargs[key] = _parse_bool(key, raw)
        elif key == "n_tanks":
            kwargs[key] = _parse_number(key, raw, int)
        else:
            kwargs[key] = _parse_number(key, raw, float)
    return Scenario(**kwargs).validate()


def scenario_config(scenario: Scenario) -> dict[str, object]:
    """Serialize a scenario back to a flat config mapping.

    Round-trips exactly: ``build_scenario(scenario_config(s)) == s``.
    """
    return {f.name: getattr(scenario, f.name) for f in fields(Scenario)}


def scenario_hash(scenario: Scenario) -> str:
    """Stable content hash of a scenario, used to tag output artifacts."""
    payload = "\n".join(
        f"{key} = {value!r}" for key, value in sorted(scenario_config(scenario).items()))
    return hashlib.sha256(payload.encode()).hexdigest()


def parse_kv_file(path: str) -> dict[str, str]:
    """Parse a flat ``key = value`` config file.

    Blank lines and ``#`` comments are ignored.  Malformed lines raise
    :class:`ConfigError` with the offending line number.
    """
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
            key, _, value = stripped.partition("=")
            key = key.strip()
            value = value.strip()
            if not key or not value:
                raise ConfigError(f"{path}:{lineno}: empty key or value")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value
    return values


def load_scenario(path: str) -> Scenario:
    """Read and validate a scenario config file."""
    return build_scenario(parse_kv_file(path))


def write_config(path: str, config: Mapping[str, object], header: str = "") -> None:
    """Write a mapping in the flat ``key = value`` format."""
    lines = [f"# {header}"] if header else []
    for key, value in config.items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SystemState:
    """Water depths and pipe velocities at one instant.

    Depths are measured from each tank's own floor.  Velocities are
    non-negative by construction: reverse flow does not occur in the
    cascade.
    """

    time: float
    depths: tuple[float, ...]
    velocities: tuple[float, ...]

    def __post_init__(self):
        if len(self.velocities) != len(self.depths) - 1:
            raise ValueError(
                f"expected {len(self.depths) - 1} velocities for "
                f"{len(self.depths)} tanks, got {len(self.velocities)}")


def initial_state(scenario: Scenario) -> SystemState:
    """Initial condition: the top tank brim-full, everything else empty and at rest."""
    depths = (scenario.tank_height,) + (0.0,) * (scenario.n_tanks - 1)
    velocities = (0.0,) * scenario.n_pipes
    return SystemState(time=0.0, depths=depths, velocities=velocities)


def total_mass(depths: Sequence[float] | np.ndarray, scenario: Scenario) -> float:
    """Total water mass implied by a set of tank depths."""
    return float(np.sum(depths)) * scenario.tank_area * scenario.density


class TimeSeries:
    """Time-stamped trajectory of system states.

    Rows are ordered by strictly increasing time.  ``heights`` has one
    column per tank, ``velocities`` one column per pipe.  ``metadata``
    carries provenance (scenario hash, timestep, termination reason).
    """

    def __init__(self, times: np.ndarray, heights: np.ndarray,
                 velocities: np.ndarray, metadata: dict | None = None):
        times = np.asarray(times, dtype=float)
        heights = np.asarray(heights, dtype=float)
        velocities = np.asarray(velocities, dtype=float)
        if times.ndim != 1 or heights.ndim != 2 or velocities.ndim != 2:
            raise ValueError("times must be 1-D; heights and velocities 2-D")
        if not (len(times) == len(heights) == len(velocities)):
            raise ValueError("times, heights, and velocities must have equal length")
        if velocities.shape[1] != heights.shape[1] - 1:
            raise ValueError("expected one velocity column fewer than height columns")
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        self.times = times
        self.heights = heights
        self.velocities = velocities
        self.metadata = dict(metadata or {})

    @classmethod
    def from_states(cls, states: Iterable[SystemState],
                    metadata: dict | None = None) -> "TimeSeries":
        states = list(states)
        times = np.array([s.time for s in states])
        heights = np.array([s.depths for s in states])
        velocities = np.array([s.velocities for s in states])
        return cls(times, heights, velocities, metadata)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def n_tanks(self) -> int:
        return self.heights.shape[1]

    def state(self, index: int) -> SystemState:
        return SystemState(time=float(self.times[index]),
                           depths=tuple(self.heights[index]),
                           velocities=tuple(self.velocities[index]))

    def write_csv(self, path: str) -> None:
        """Write the trajectory with full double precision (17 significant digits)."""
        n = self.n_tanks
        header = ",".join(["time"] + [f"h{i}" for i in range(1, n + 1)]
                          + [f"v{j}" for j in range(1, n)])
        rows = np.hstack([self.times[:, None], self.heights, self.velocities])
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(header + "\n")
            for row in rows:
                handle.write(",".join("%.17g" % value for value in row) + "\n")

    @classmethod
    def read_csv(cls, path: str, metadata: dict | None = None) -> "TimeSeries":
        with open(path, encoding="utf-8") as handle:
            header = handle.readline().strip().split(",")
            data = np.loadtxt(handle, delimiter=",", ndmin=2)
        n_tanks = sum(1 for name in header if name.startswith("h"))
        if header[0] != "time" or n_tanks < 2 or len(header) != 2 * n_tanks:
            raise ValueError(f"{path}: not a trajectory CSV (header {header!r})")
        return cls(data[:, 0], data[:, 1:1 + n_tanks], data[:, 1 + n_tanks:],
                   metadata)
