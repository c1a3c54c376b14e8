"""Fully-connected networks with exact time derivatives, on bare numpy.

The solvers in this package need three things no generic library layer
is relied on for: (1) the exact derivative of every network output with
respect to the scalar time input, obtained in one forward pass by
dual-number propagation (value and tangent advance together, never by
finite differences); (2) the gradient of losses that CONTAIN those time
derivatives with respect to every weight, which requires reverse mode
to flow through both the value path and the tangent path (a
second-order term); and (3) bitwise reproducibility from a seed.

Implementation notes:

- A batch of n points is carried as a ``(width, 2n)`` array: columns
  0..n-1 hold values, columns n..2n-1 hold tangents.  One matrix
  product per layer then advances both halves, because the tangent of
  an affine map is the same map without bias.
- ELU lets the backward pass run entirely off cached outputs: with
  a = elu(z), the slope is ``a + 1`` wherever ``a <= 0`` and 1
  elsewhere, and the curvature term sigma''(z) * dz equals the cached
  tangent output on the negative branch.  No exponentials and no
  pre-activations are recomputed or stored.
- Parameters live in one flat float64 vector per network, in a frozen
  canonical order: layers first-to-last, each as the weight matrix in
  row-major order followed by its bias vector.
- Randomness comes from numpy's default generator (PCG64) seeded via
  ``SeedSequence``, which is specified and portable across platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


@dataclass(frozen=True)
class NetworkSpec:
    """Shape of one fully-connected ELU network (identity output layer)."""

    input_dim: int = 1
    hidden_layers: int = 10
    hidden_width: int = 192
    output_dim: int = 1

    def __post_init__(self):
        for name in ("input_dim", "hidden_layers", "hidden_width", "output_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of each affine layer, first to last."""
        dims = [(self.input_dim, self.hidden_width)]
        dims += [(self.hidden_width, self.hidden_width)] * (self.hidden_layers - 1)
        dims.append((self.hidden_width, self.output_dim))
        return dims

    @property
    def param_count(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_dims)


def param_count(spec: NetworkSpec) -> int:
    return spec.param_count


def elu(x):
    """x for positive inputs, exp(x) - 1 otherwise (smooth at 0)."""
    x = np.asarray(x, dtype=float)
    # expm1 on the clamped argument avoids overflow for large positives
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def elu_derivative(x):
    """1 for positive inputs, exp(x) otherwise."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


def unpack_params(spec: NetworkSpec, params: np.ndarray):
    """Views of (weight, bias) per layer into the flat vector (no copies)."""
    if params.shape != (spec.param_count,):
        raise ValueError(
            f"expected {spec.param_count} parameters, got {params.shape}")
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_dims:
        w = params[offset:offset + fan_out * fan_in].reshape(fan_out, fan_in)
        offset += fan_out * fan_in
        b = params[offset:offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def he_init(spec: NetworkSpec, seed) -> np.ndarray:
    """Weights ~ N(0, 2/fan_in), biases 0, in canonical flat order.

    ``seed`` may be an integer or a ``numpy.random.SeedSequence`` (the
    trainers hand each subnetwork a spawned child of one root seed).
    """
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.param_count)
    for w, _ in unpack_params(spec, params):
        fan_out, fan_in = w.shape
        w[:] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
    return params


class Network:
    """One ELU network: a spec plus its flat parameter vector."""

    def __init__(self, spec: NetworkSpec, params: np.ndarray):
        params = np.ascontiguousarray(params, dtype=float)
        if params.shape != (spec.param_count,):
            raise ValueError(
                f"expected {spec.param_count} parameters, got {params.shape}")
        self.spec = spec
        self.params = params

    @classmethod
    def initialized(cls, spec: NetworkSpec, seed) -> "Network":
        return cls(spec, he_init(spec, seed))

    def forward(self, t) -> np.ndarray:
        """Outputs at scaled times ``t``; shape (output_dim, n).

        Delegates to the dual pass and discards the tangent, so the
        value component is bitwise identical between the two entry
        points by construction.
        """
        return self.forward_with_time_derivative(t)[0]

    def forward_with_time_derivative(self, t):
        """Outputs and their exact derivatives w.r.t. the scalar input.

        Returns (values, tangents), each of shape (output_dim, n) for n
        input points.  The derivative is with respect to the network's
        own (scaled) input; any outer time scaling is the caller's
        chain-rule factor.
        """
        packed, _ = _forward_dual(self.spec, self.params, t)
        n = packed.shape[1] // 2
        return packed[:, :n].copy(), packed[:, n:].copy()


def _as_input_row(t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.ndim != 1:
        raise ValueError(f"expected scalar or 1-D time input, got shape {t.shape}")
    return t[None, :]


def _forward_dual(spec: NetworkSpec, params: np.ndarray, t):
    """Dual-number forward pass over a batch of scalar inputs.

    Returns the packed output ``(output_dim, 2n)`` (values left,
    tangents right) and the cache of packed layer inputs needed by
    ``_backward_dual``.
    """
    row = _as_input_row(t)
    n = row.shape[1]
    x = np.empty((spec.input_dim, 2 * n))
    x[:, :n] = row
    x[:, n:] = 1.0  # seed tangent: d(input)/d(input)

    layers = unpack_params(spec, params)
    cache = [x]
    for w, b in layers[:-1]:
        z = w @ x
        value = z[:, :n]
        tangent = z[:, n:]
        value += b[:, None]
        # branch-free ELU (masked ufuncs fall off numpy's SIMD path):
        # bent = expm1 of the non-positive part, zero elsewhere, so
        # value*positive + bent is the activation and bent + 1 its slope
        positive = value > 0.0
        bent = value * ~positive
        np.expm1(bent, out=bent)
        value *= positive
        value += bent
        bent += 1.0
        tangent *= bent
        x = z
        cache.append(x)
    w, b = layers[-1]
    out = w @ x
    out[:, :n] += b[:, None]
    return out, cache


def _backward_dual(spec: NetworkSpec, params: np.ndarray, cache,
                   grad_values: np.ndarray, grad_tangents: np.ndarray) -> np.ndarray:
    """Reverse pass for a scalar loss through the dual forward.

    ``grad_values``/``grad_tangents`` are the loss gradients with
    respect to the network outputs and their time derivatives (each
    (output_dim, n)).  Returns the flat parameter gradient.  The
    second-order path (parameters influencing the tangents) is carried
    by the right half of the packed adjoint.
    """
    layers = unpack_params(spec, params)
    n = grad_values.shape[1]
    grad_flat = np.zeros(spec.param_count)
    grad_layers = unpack_params(spec, grad_flat)

    g = np.hstack([grad_values, grad_tangents])
    # output layer: identity activation
    w, _ = layers[-1]
    gw, gb = grad_layers[-1]
    np.matmul(g, cache[-1].T, out=gw)
    np.sum(g[:, :n], axis=1, out=gb)
    g = w.T @ g

    gz = np.empty((spec.hidden_width, 2 * n))
    for index in range(spec.hidden_layers - 1, -1, -1):
        w, _ = layers[index]
        gw, gb = grad_layers[index]
        pair = cache[index + 1]  # this layer's (value, tangent) outputs
        a = pair[:, :n]
        a_dot = pair[:, n:]
        # slope = a+1 on the bent branch, 1 elsewhere; the curvature
        # term sigma''(z)*dz equals the cached tangent output there and
        # vanishes on the identity branch
        negative = a <= 0.0
        slope = a * negative
        slope += 1.0
        gz_value = gz[:, :n]
        gz_tangent = gz[:, n:]
        np.multiply(g[:, n:], a_dot, out=gz_value)
        gz_value *= negative
        np.multiply(g[:, n:], slope, out=gz_tangent)
        g_value = g[:, :n]
        g_value *= slope
        gz_value += g_value
        np.matmul(gz, cache[index].T, out=gw)
        np.sum(gz_value, axis=1, out=gb)
        if index > 0:
            np.matmul(w.T, gz, out=g)
    return grad_flat


class DivergedLoss(RuntimeError):
    """Loss evaluation produced a non-finite value."""

    def __init__(self, context: str, collocation_index):
        self.context = context
        self.collocation_index = collocation_index
        where = (f" (first non-finite at collocation index {collocation_index})"
                 if collocation_index is not None else "")
        super().__init__(f"non-finite loss during {context}{where}")


def _first_bad_column(arrays) -> int | None:
    for array in arrays:
        bad = ~np.isfinite(array)
        if bad.any():
            return int(np.argmax(bad.any(axis=0)))
    return None


def loss_gradient(nets: list[Network], t_scaled, loss_fn, context: str = "training"):
    """Evaluate a scalar loss of network outputs and backpropagate it.

    ``loss_fn(values, tangents)`` receives one (output_dim, n) value
    array and one tangent array per network and must return
    ``(loss, grad_values, grad_tangents, info)`` where the gradient
    lists mirror its inputs (entries may be None when a network does
    not enter the loss).  Returns ``(loss, grads, info)`` with one flat
    gradient per network.  A non-finite loss aborts with the offending
    collocation index in the message; ``context`` labels the failure
    site (e.g. the epoch).
    """
    packed = [_forward_dual(net.spec, net.params, t_scaled) for net in nets]
    n = packed[0][0].shape[1] // 2
    values = [out[:, :n] for out, _ in packed]
    tangents = [out[:, n:] for out, _ in packed]

    loss, grad_values, grad_tangents, info = loss_fn(values, tangents)
    if not np.isfinite(loss):
        raise DivergedLoss(context, _first_bad_column(values + tangents))

    grads = []
    for net, (out, cache), gv, gt in zip(nets, packed, grad_values, grad_tangents):
        if gv is None and gt is None:
            grads.append(np.zeros(net.spec.param_count))
            continue
        if gv is None:
            gv = np.zeros((net.spec.output_dim, n))
        if gt is None:
            gt = np.zeros((net.spec.output_dim, n))
        grads.append(_backward_dual(net.spec, net.params, cache, gv, gt))
    return loss, grads, info


def lr_at_epoch(base_lr: float, epoch: int, decay: float) -> float:
    """Multiplicative schedule: base_lr * decay**epoch."""
    return base_lr * decay ** epoch


class AdamState:
    """Bias-corrected adaptive-moment optimizer for one flat vector."""

    def __init__(self, n_params: int, base_lr: float, decay: float = 1.0,
                 beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                 epsilon: float = ADAM_EPSILON):
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.step = 0
        self.base_lr = base_lr
        self.decay = decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

    @property
    def learning_rate(self) -> float:
        """Rate the NEXT step will use (decayed by completed epochs)."""
        return lr_at_epoch(self.base_lr, self.step, self.decay)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> None:
    """One in-place update of ``params``; advances the state's counter."""
    if grads.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient, and state shapes must match")
    lr = state.learning_rate
    state.step += 1
    state.m += (1.0 - state.beta1) * (grads - state.m)
    state.v += (1.0 - state.beta2) * (grads * grads - state.v)
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    params -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


CHECKPOINT_FORMAT = "tank-cascade-params-v1"


def save_checkpoint(path: str, nets: list[Network], seed: int, epoch: int) -> None:
    """One JSON header line, then every network's flat float64 params
    (little-endian) concatenated in canonical order."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "seed": seed,
        "epoch": epoch,
        "networks": [
            {
                "input_dim": net.spec.input_dim,
                "hidden_layers": net.spec.hidden_layers,
                "hidden_width": net.spec.hidden_width,
                "output_dim": net.spec.output_dim,
                "count": net.spec.param_count,
            }
            for net in nets
        ],
    }
    with open(path, "wb") as handle:
        handle.write(json.dumps(header).encode() + b"\n")
        for net in nets:
            handle.write(net.params.astype("<f8").tobytes())


def load_checkpoint(path: str):
    """Inverse of :func:`save_checkpoint`; returns (nets, seed, epoch)."""
    with open(path, "rb") as handle:
        header = json.loads(handle.readline().decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a parameter checkpoint")
        nets = []
        for entry in header["networks"]:
            spec = NetworkSpec(entry["input_dim"], entry["hidden_layers"],
                               entry["hidden_width"], entry["output_dim"])
            if spec.param_count != entry["count"]:
                raise ValueError(f"{path}: header count mismatch for {spec}")
            raw = handle.read(8 * spec.param_count)
            if len(raw) != 8 * spec.param_count:
                raise ValueError(f"{path}: truncated parameter block")
            nets.append(Network(spec, np.frombuffer(raw, dtype="<f8").copy()))
    return nets, header["seed"], header["epoch"]
