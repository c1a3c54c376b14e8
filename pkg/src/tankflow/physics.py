"""Data-free physics loss for the cascade solvers.

The neural solvers never see trajectory data.  Their training signal is
the residual of the governing equations evaluated at collocation times:
a momentum balance per pipe (inertia against gravity head and quadratic
loss) and a mass balance per tank (level rate against the void-throttled
pipe fluxes).  This module assembles those residuals from network
outputs and their exact time derivatives, and provides the adjoints
(gradients with respect to the outputs) the reverse pass needs.

Conventions:

- The network input is min-max scaled time t' in [0, 1]; residual time
  derivatives are with respect to PHYSICAL time, so the chain factor
  1/(t_max - t_min) is applied to the raw tangents.  A ``chain_rule``
  switch exists because implementations of this setup differ on
  whether the factor is applied; the default applies it.
- Initial conditions are enforced as a hard constraint by shifting:
  u(t) = u_raw(t) - u_raw(t_min) + u0, which is exact at t_min by
  construction.
- The solver-side void fraction and static head are simplified
  piecewise forms in the PREDICTED depths.  The static-head gate here
  (donor shallow AND receiver risen past the donor floor) is
  deliberately not identical to the emulator's receiver-height test;
  the two agree on mass-conserving trajectories of the canonical
  scenarios, where adjacent depths never sum past one tank height.
- Predicted depths are not clamped inside residuals (clamping would
  zero gradients); only the void fraction is clamped to [0, 1].
- The momentum residual omits the advection and interphase terms the
  emulator carries; a term-sensitivity study justifies dropping them
  (advection is geometry-suppressed by A_p/A_t, exchange is zero for a
  single phase).

The solution vector is ordered [H_1 .. H_N, v_1 .. v_{N-1}].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tankflow.emulator import VOID_ONSET_DEPTH
from tankflow.network import Network, loss_gradient
from tankflow.scenario import Scenario, initial_state


def scale_time(t, t_min: float, t_max: float):
    """Min-max map onto [0, 1]; rejects a degenerate interval."""
    if not t_max > t_min:
        raise ValueError(f"need t_max > t_min, got [{t_min}, {t_max}]")
    return (np.asarray(t, dtype=float) - t_min) / (t_max - t_min)


@dataclass(frozen=True)
class CollocationGrid:
    """Equally spaced residual evaluation times, endpoints included."""

    t_min: float
    t_max: float
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"count must be >= 2, got {self.count}")
        if not self.t_max > self.t_min:
            raise ValueError(
                f"need t_max > t_min, got [{self.t_min}, {self.t_max}]")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.count)

    @property
    def scaled(self) -> np.ndarray:
        return scale_time(self.points, self.t_min, self.t_max)

    @property
    def chain_factor(self) -> float:
        """d(t')/dt, converting scaled-time tangents to physical rates."""
        return 1.0 / (self.t_max - self.t_min)


@dataclass(frozen=True)
class LossWeights:
    """Relative weighting of the two residual families."""

    momentum: float = 1.0
    continuity: float = 0.001

    def __post_init__(self):
        if not (self.momentum > 0.0 and self.continuity > 0.0):
            raise ValueError("loss weights must be positive")


def apply_shift(raw_outputs, raw_at_origin, u0):
    """Hard initial-condition constraint u(t) = raw(t) - raw(t_min) + u0.

    ``raw_outputs`` has one column per time; ``raw_at_origin`` and
    ``u0`` are per-component vectors (broadcast across columns).  At
    t_min the subtraction cancels bitwise, leaving exactly u0.
    """
    raw_outputs = np.asarray(raw_outputs, dtype=float)
    origin = np.asarray(raw_at_origin, dtype=float).reshape(-1, 1)
    u0 = np.asarray(u0, dtype=float).reshape(-1, 1)
    return raw_outputs - origin + u0


def pinn_void_fraction(h):
    """Inlet air fraction from the predicted donor depth, clamped to [0, 1]."""
    h = np.asarray(h, dtype=float)
    return np.clip(1.0 - h / VOID_ONSET_DEPTH, 0.0, 1.0)


def pinn_void_fraction_gradient(h):
    """d(alpha)/dh: -1/0.2 on the ramp [0, 0.2), zero on both flats."""
    h = np.asarray(h, dtype=float)
    on_ramp = (h >= 0.0) & (h < VOID_ONSET_DEPTH)
    return np.where(on_ramp, -1.0 / VOID_ONSET_DEPTH, 0.0)


def pinn_delta_z(h_upper, h_lower, elevation_step: float = 1.8):
    """Solver-side static head for one pipe.

    Uses the surface-level difference only when the donor has run
    shallow while the receiver has risen past the donor floor;
    otherwise the donor depth alone drives the flow.  Unlike the
    emulator's head, this one is not clamped at zero.
    """
    h_upper = np.asarray(h_upper, dtype=float)
    h_lower = np.asarray(h_lower, dtype=float)
    gate = (h_upper < VOID_ONSET_DEPTH) & (h_lower >= elevation_step)
    return np.where(gate, h_upper - h_lower + elevation_step, h_upper)


def _delta_z_gate(h_upper, h_lower, elevation_step: float):
    return (np.asarray(h_upper) < VOID_ONSET_DEPTH) & (
        np.asarray(h_lower) >= elevation_step)


def momentum_residual(v, dv_dt, delta_z, scenario: Scenario):
    """R = L dv/dt - g dz + (K/2)|v|v, elementwise."""
    v = np.asarray(v, dtype=float)
    return (scenario.pipe_length * np.asarray(dv_dt, dtype=float)
            - scenario.gravity * np.asarray(delta_z, dtype=float)
            + 0.5 * scenario.loss_coefficient * np.abs(v) * v)


def continuity_residual(tank_index: int, n_tanks: int, dh_dt,
                        v_out=None, alpha_out=None,
                        v_in=None, alpha_in=None,
                        scenario: Scenario = None):
    """Mass balance for one tank: rho A_t dh/dt plus signed pipe fluxes.

    The first tank only discharges (``v_out``), the last only receives
    (``v_in``), interior tanks do both.  Fluxes are throttled by their
    donor-side void fractions.
    """
    if not 0 <= tank_index < n_tanks:
        raise IndexError(f"tank_index {tank_index} out of range for {n_tanks} tanks")
    has_out = tank_index < n_tanks - 1
    has_in = tank_index > 0
    if has_out != (v_out is not None) or has_in != (v_in is not None):
        raise ValueError(
            f"tank {tank_index} of {n_tanks}: flux arguments do not match position")
    coef = scenario.density * scenario.pipe_area * scenario.open_fraction
    residual = scenario.density * scenario.tank_area * np.asarray(dh_dt, dtype=float)
    if has_out:
        residual = residual + coef * np.asarray(v_out) * (1.0 - np.asarray(alpha_out))
    if has_in:
        residual = residual - coef * np.asarray(v_in) * (1.0 - np.asarray(alpha_in))
    return residual


@dataclass
class ResidualReport:
    """Residual fields at the collocation points plus the weighted total."""

    momentum: np.ndarray    # (n_pipes, n_points)
    continuity: np.ndarray  # (n_tanks, n_points)
    weights: LossWeights

    @property
    def momentum_loss(self) -> float:
        """Sum over pipes, mean over points, of squared residuals."""
        return float(np.sum(self.momentum ** 2) / self.momentum.shape[1])

    @property
    def continuity_loss(self) -> float:
        return float(np.sum(self.continuity ** 2) / self.continuity.shape[1])

    @property
    def total(self) -> float:
        return (self.weights.momentum * self.momentum_loss
                + self.weights.continuity * self.continuity_loss)

    def summary(self) -> dict:
        """JSON-ready diagnostics."""
        return {
            "total": self.total,
            "momentum_loss": self.momentum_loss,
            "continuity_loss": self.continuity_loss,
            "momentum_max_abs": float(np.max(np.abs(self.momentum))),
            "continuity_max_abs": float(np.max(np.abs(self.continuity))),
        }


def solution_labels(n_tanks: int) -> list[str]:
    """Column labels in solution order [H_1..H_N, v_1..v_{N-1}]."""
    return ([f"h{i}" for i in range(1, n_tanks + 1)]
            + [f"v{j}" for j in range(1, n_tanks)])


class CascadeLoss:
    """Physics loss of one cascade, as a closure for the reverse pass.

    Works with either packing of the solution vector: a single network
    with 2N-1 outputs, or 2N-1 single-output networks (one per solved
    quantity, in solution order).  The evaluation batch is the scaled
    collocation grid with one extra t'=0 column appended so the
    initial-condition shift is differentiated in the same pass.
    """

    def __init__(self, scenario: Scenario, grid: CollocationGrid,
                 weights: LossWeights = LossWeights(), chain_rule: bool = True,
                 u0=None):
        self.scenario = scenario
        self.grid = grid
        self.weights = weights
        self.chain = grid.chain_factor if chain_rule else 1.0
        if u0 is None:
            state = initial_state(scenario)
            u0 = np.array(state.depths + state.velocities)
        self.u0 = np.asarray(u0, dtype=float)
        if self.u0.shape != (2 * scenario.n_tanks - 1,):
            raise ValueError(
                f"u0 must have {2 * scenario.n_tanks - 1} entries, "
                f"got {self.u0.shape}")

    @property
    def batch_times(self) -> np.ndarray:
        """Scaled collocation points plus the trailing t'=0 column."""
        return np.append(self.grid.scaled, 0.0)

    def _stack(self, arrays) -> np.ndarray:
        """Assemble per-network rows into the (2N-1, n+1) solution block."""
        n_rows = 2 * self.scenario.n_tanks - 1
        if len(arrays) == 1:
            block = arrays[0]
        else:
            if len(arrays) != n_rows:
                raise ValueError(
                    f"expected 1 network with {n_rows} outputs or {n_rows} "
                    f"single-output networks, got {len(arrays)}")
            block = np.vstack(arrays)
        if block.shape[0] != n_rows:
            raise ValueError(
                f"solution block has {block.shape[0]} rows, expected {n_rows}")
        return block

    def constrained(self, values, tangents):
        """Shifted solution and physical-time rates at the grid points.

        ``values``/``tangents`` are the raw network outputs over
        :attr:`batch_times`.  Returns (u, du_dt), each (2N-1, count).
        """
        raw = self._stack(values)
        raw_dot = self._stack(tangents)
        n = self.grid.count
        u = apply_shift(raw[:, :n], raw[:, n], self.u0)
        du = raw_dot[:, :n] * self.chain
        return u, du

    def residuals(self, u, du):
        """Momentum and continuity residual fields for a solution block."""
        s = self.scenario
        n_tanks = s.n_tanks
        h = u[:n_tanks]
        v = u[n_tanks:]
        dh = du[:n_tanks]
        dv = du[n_tanks:]

        alpha = pinn_void_fraction(h[:-1])
        delta_z = pinn_delta_z(h[:-1], h[1:], s.elevation_step)
        r_momentum = momentum_residual(v, dv, delta_z, s)

        flux = v * (1.0 - alpha)
        coef = s.density * s.pipe_area * s.open_fraction
        r_continuity = s.density * s.tank_area * dh
        r_continuity[0] += coef * flux[0]
        if n_tanks > 2:
            r_continuity[1:-1] += coef * (flux[1:] - flux[:-1])
        r_continuity[-1] -= coef * flux[-1]
        return r_momentum, r_continuity

    def report(self, nets: list[Network]) -> ResidualReport:
        """Forward-only residual evaluation for diagnostics."""
        t = self.batch_times
        values, tangents = [], []
        for net in nets:
            value, tangent = net.forward_with_time_derivative(t)
            values.append(value)
            tangents.append(tangent)
        u, du = self.constrained(values, tangents)
        r_momentum, r_continuity = self.residuals(u, du)
        return ResidualReport(r_momentum, r_continuity, self.weights)

    def loss_fn(self, values, tangents):
        """Loss and output-adjoints; signature matches ``loss_gradient``.

        Returns (loss, grad_values, grad_tangents, info) where the
        gradient lists mirror the input packing and info carries the
        weighted momentum/continuity components.
        """
        s = self.scenario
        n_tanks = s.n_tanks
        n = self.grid.count
        u, du = self.constrained(values, tangents)
        h = u[:n_tanks]
        v = u[n_tanks:]

        alpha = pinn_void_fraction(h[:-1])
        gate = _delta_z_gate(h[:-1], h[1:], s.elevation_step)
        delta_z = np.where(gate, h[:-1] - h[1:] + s.elevation_step, h[:-1])
        r_momentum = momentum_residual(v, du[n_tanks:], delta_z, s)

        flux = v * (1.0 - alpha)
        coef = s.density * s.pipe_area * s.open_fraction
        column = s.density * s.tank_area
        r_continuity = column * du[:n_tanks]
        r_continuity[0] += coef * flux[0]
        if n_tanks > 2:
            r_continuity[1:-1] += coef * (flux[1:] - flux[:-1])
        r_continuity[-1] -= coef * flux[-1]

        momentum_loss = float(np.sum(r_momentum ** 2) / n)
        continuity_loss = float(np.sum(r_continuity ** 2) / n)
        loss = (self.weights.momentum * momentum_loss
                + self.weights.continuity * continuity_loss)

        # Adjoints of the two quadratic forms
        g_rm = (2.0 * self.weights.momentum / n) * r_momentum
        g_rc = (2.0 * self.weights.continuity / n) * r_continuity

        # continuity: flux j leaves tank j and enters tank j+1
        g_flux = coef * (g_rc[:-1] - g_rc[1:])
        g_dh = column * g_rc
        g_v = (1.0 - alpha) * g_flux
        g_alpha = -v * g_flux

        # momentum: R = L dv - g dz + (K/2)|v|v
        g_dv = s.pipe_length * g_rm
        g_delta_z = -s.gravity * g_rm
        g_v += s.loss_coefficient * np.abs(v) * g_rm

        # static head touches both depths on the gated branch
        g_h = np.zeros_like(h)
        g_h[:-1] += g_delta_z
        g_h[1:] += np.where(gate, -g_delta_z, 0.0)
        # void fraction feeds back into the donor depth on the ramp
        g_h[:-1] += pinn_void_fraction_gradient(h[:-1]) * g_alpha

        g_u = np.vstack([g_h, g_v])
        g_du = np.vstack([g_dh, g_dv])

        # through the shift: the t'=0 column collects minus the total
        n_rows = 2 * n_tanks - 1
        g_value_block = np.empty((n_rows, n + 1))
        g_value_block[:, :n] = g_u
        g_value_block[:, n] = -g_u.sum(axis=1)
        g_tangent_block = np.zeros((n_rows, n + 1))
        g_tangent_block[:, :n] = g_du * self.chain

        info = {
            "momentum": self.weights.momentum * momentum_loss,
            "continuity": self.weights.continuity * continuity_loss,
        }
        if len(values) == 1:
            return loss, [g_value_block], [g_tangent_block], info
        grad_values = [g_value_block[k][None, :] for k in range(n_rows)]
        grad_tangents = [g_tangent_block[k][None, :] for k in range(n_rows)]
        return loss, grad_values, grad_tangents, info

    def evaluate(self, nets: list[Network], context: str = "evaluation"):
        """Loss, parameter gradients, and components in one pass."""
        return loss_gradient(nets, self.batch_times, self.loss_fn, context)
