"""Tests for the numpy network stack.

Gradient checks compare reverse-mode results against central finite
differences computed purely from forward evaluations, so the backward
pass is never used to validate itself.  Architecture parameter counts
are asserted as literal numbers worked out from the layer-size formula.
"""

import math

import numpy as np
import pytest

from tankflow.network import (
    AdamState,
    DivergedLoss,
    Network,
    NetworkSpec,
    adam_step,
    elu,
    elu_derivative,
    he_init,
    load_checkpoint,
    loss_gradient,
    lr_at_epoch,
    param_count,
    save_checkpoint,
    unpack_params,
)


def test_elu_values_and_derivative():
    assert elu(0.0) == 0.0
    assert elu(2.5) == 2.5
    assert abs(elu(-1.0) - (math.exp(-1.0) - 1.0)) < 1e-15
    assert elu_derivative(3.0) == 1.0
    assert abs(elu_derivative(-1.0) - math.exp(-1.0)) < 1e-15
    assert elu_derivative(0.0) == 1.0
    # vectorized and overflow-safe for large magnitudes either side
    x = np.array([-800.0, -1.0, 0.0, 1.0, 800.0])
    out = elu(x)
    assert np.all(np.isfinite(out))
    assert out[0] == -1.0 and out[-1] == 800.0


def test_network_spec_validation_and_layer_dims():
    spec = NetworkSpec(1, 2, 4, 3)
    assert spec.layer_dims == [(1, 4), (4, 4), (4, 3)]
    with pytest.raises(ValueError):
        NetworkSpec(0, 2, 4, 3)
    with pytest.raises(ValueError):
        NetworkSpec(1, 2, 0, 3)


def test_param_count_matches_architecture_table():
    assert param_count(NetworkSpec(1, 10, 192, 3)) == 334467
    assert param_count(NetworkSpec(1, 10, 256, 5)) == 593925
    assert param_count(NetworkSpec(1, 10, 368, 11)) == 1226923
    assert param_count(NetworkSpec(1, 8, 128, 1)) == 115969
    assert 5 * param_count(NetworkSpec(1, 8, 128, 1)) == 579845


def test_unpack_params_views_share_memory_in_canonical_order():
    spec = NetworkSpec(1, 1, 2, 1)  # layers (1->2), (2->1)
    flat = np.arange(float(spec.param_count))
    (w0, b0), (w1, b1) = unpack_params(spec, flat)
    assert w0.tolist() == [[0.0], [1.0]]
    assert b0.tolist() == [2.0, 3.0]
    assert w1.tolist() == [[4.0, 5.0]]
    assert b1.tolist() == [6.0]
    w1[0, 0] = -1.0
    assert flat[4] == -1.0
    with pytest.raises(ValueError):
        unpack_params(spec, np.zeros(3))


def test_he_init_is_deterministic_with_zero_biases_and_scaled_variance():
    spec = NetworkSpec(1, 3, 192, 2)
    a = he_init(spec, 1234)
    b = he_init(spec, 1234)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, he_init(spec, 1235))

    layers = unpack_params(spec, a)
    for _, bias in layers:
        assert np.all(bias == 0.0)
    # the two 192x192 layers hold 73728 draws at variance 2/192
    wide = np.concatenate([layers[1][0].ravel(), layers[2][0].ravel()])
    assert np.var(wide) == pytest.approx(2.0 / 192.0, rel=0.1)
    assert np.mean(wide) == pytest.approx(0.0, abs=0.01)

    child_a, child_b = np.random.SeedSequence(7).spawn(2)
    assert not np.array_equal(he_init(spec, child_a), he_init(spec, child_b))


def test_forward_zero_params_and_handcrafted_compositions():
    spec = NetworkSpec(1, 1, 1, 1)
    zero = Network(spec, np.zeros(spec.param_count))
    assert np.all(zero.forward([0.5, -2.0]) == 0.0)

    # params [w0, b0, w1, b1]: u = w1 * elu(w0 t + b0) + b1
    ident = Network(spec, np.array([1.0, 0.0, 1.0, 0.0]))
    t = np.array([-1.5, -0.2, 0.0, 0.7, 3.0])
    assert np.allclose(ident.forward(t)[0], elu(t), rtol=0, atol=1e-15)


def test_forward_with_time_derivative_on_affine_composition():
    """w0=1,b0=5 keeps the hidden unit on its identity branch for t>-5,
    so u = 3(t+5) - 14 = 3t + 1 with derivative exactly 3."""
    spec = NetworkSpec(1, 1, 1, 1)
    net = Network(spec, np.array([1.0, 5.0, 3.0, -14.0]))
    t = np.array([-1.0, 0.0, 2.0])
    u, du = net.forward_with_time_derivative(t)
    assert np.allclose(u[0], 3.0 * t + 1.0, rtol=0, atol=1e-12)
    assert np.all(du[0] == 3.0)


def test_forward_with_time_derivative_constant_network():
    spec = NetworkSpec(1, 2, 3, 2)
    params = he_init(spec, 5)
    layers = unpack_params(spec, params)
    layers[0][0][:] = 0.0  # zero first-layer weights: output ignores t
    net = Network(spec, params)
    u, du = net.forward_with_time_derivative([0.1, 1.0, 9.0])
    assert np.all(du == 0.0)
    assert np.allclose(u[:, 0], u[:, 1], rtol=0, atol=0)


def test_forward_value_component_bitwise_equals_dual_value():
    net = Network.initialized(NetworkSpec(1, 3, 8, 4), seed=11)
    t = np.linspace(-2.0, 2.0, 17)
    u, _ = net.forward_with_time_derivative(t)
    assert np.array_equal(net.forward(t), u)


def test_time_derivative_matches_central_finite_difference():
    """FD is only a trustworthy oracle where no ELU kink sits inside
    the stencil; such points betray themselves by a step-halving
    disagreement of order h instead of h^2, and are excluded."""
    net = Network.initialized(NetworkSpec(1, 3, 8, 3), seed=0)
    t = np.linspace(-1.0, 1.0, 11)
    _, du = net.forward_with_time_derivative(t)
    h = 1e-4
    fd = (net.forward(t + h) - net.forward(t - h)) / (2.0 * h)
    fd_half = (net.forward(t + h / 2) - net.forward(t - h / 2)) / h
    valid = np.abs(fd - fd_half) <= 1e-7 * np.maximum(np.abs(fd), 1.0)
    assert valid.mean() > 0.6  # the filter must not hollow out the check
    rel = np.abs(du - fd) / np.maximum(np.abs(fd), 1.0)
    assert np.max(rel[valid]) < 1e-5


def numeric_param_gradient(nets, loss_value, step=1e-6):
    """Central finite differences of a loss callable over all params."""
    grads = []
    for net in nets:
        grad = np.zeros_like(net.params)
        for i in range(net.params.size):
            original = net.params[i]
            net.params[i] = original + step
            up = loss_value()
            net.params[i] = original - step
            down = loss_value()
            net.params[i] = original
            grad[i] = (up - down) / (2.0 * step)
        grads.append(grad)
    return grads


def check_against_fd(nets, t, loss_fn):
    loss, grads, _ = loss_gradient(nets, t, loss_fn)

    def loss_value():
        values, tangents = [], []
        for net in nets:
            u, du = net.forward_with_time_derivative(t)
            values.append(u)
            tangents.append(du)
        return loss_fn(values, tangents)[0]

    assert loss == loss_value()
    fd = numeric_param_gradient(nets, loss_value)
    for analytic, numeric in zip(grads, fd):
        assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-8)


def test_loss_gradient_value_squared_matches_finite_differences():
    nets = [Network.initialized(NetworkSpec(1, 2, 4, 2), seed=3)]
    t = np.linspace(-1.0, 1.5, 7)

    def loss_fn(values, tangents):
        loss = float(np.sum(values[0] ** 2))
        return loss, [2.0 * values[0]], [None], {}

    check_against_fd(nets, t, loss_fn)


def test_loss_gradient_derivative_squared_matches_finite_differences():
    """Exercises the second-order path: parameters reach the loss only
    through the temporal-derivative outputs."""
    nets = [Network.initialized(NetworkSpec(1, 2, 4, 2), seed=4)]
    t = np.linspace(-1.0, 1.0, 6)

    def loss_fn(values, tangents):
        loss = float(np.sum(tangents[0] ** 2))
        return loss, [None], [2.0 * tangents[0]], {}

    check_against_fd(nets, t, loss_fn)


def test_loss_gradient_mixed_product_and_absolute_terms():
    nets = [Network.initialized(NetworkSpec(1, 2, 5, 2), seed=9)]
    t = np.linspace(0.1, 2.0, 5)

    def loss_fn(values, tangents):
        u, du = values[0], tangents[0]
        loss = float(np.sum(u * du) + np.sum(np.abs(u)))
        return loss, [du + np.sign(u)], [u], {}

    check_against_fd(nets, t, loss_fn)


def test_loss_gradient_multiple_networks_couple_through_the_loss():
    nets = [Network.initialized(NetworkSpec(1, 2, 4, 1), seed=k) for k in (21, 22)]
    t = np.linspace(-0.5, 0.5, 4)

    def loss_fn(values, tangents):
        # residual couples net 0's derivative to net 1's value
        r = tangents[0][0] - values[1][0] ** 2
        loss = float(np.sum(r ** 2))
        return (loss,
                [None, (-4.0 * r * values[1][0])[None, :]],
                [(2.0 * r)[None, :], None], {})

    check_against_fd(nets, t, loss_fn)


def test_loss_gradient_uninvolved_network_gets_exact_zero_block():
    nets = [Network.initialized(NetworkSpec(1, 1, 3, 1), seed=k) for k in (1, 2)]
    t = np.array([0.0, 0.5])

    def loss_fn(values, tangents):
        loss = float(np.sum(values[0] ** 2))
        return loss, [2.0 * values[0], None], [None, None], {}

    _, grads, _ = loss_gradient(nets, t, loss_fn)
    assert np.any(grads[0] != 0.0)
    assert np.all(grads[1] == 0.0)


def test_loss_gradient_reports_divergence_with_collocation_index():
    spec = NetworkSpec(1, 1, 2, 1)
    params = np.zeros(spec.param_count)
    # 1e150 weights: t=1 stays at 1e300 (finite), t=1e150 overflows
    params[0] = 1e150
    params[4] = 1e150
    net = Network(spec, params)
    t = np.array([0.0, 1.0, 1e150])

    def loss_fn(values, tangents):
        return float(np.sum(values[0])), [np.ones_like(values[0])], [None], {}

    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergedLoss) as excinfo:
            loss_gradient([net], t, loss_fn, context="epoch 17")
    assert "epoch 17" in str(excinfo.value)
    assert excinfo.value.collocation_index == 2

    def inf_loss(values, tangents):
        return float("inf"), [None], [None], {}

    with pytest.raises(DivergedLoss) as excinfo:
        loss_gradient([Network.initialized(spec, 0)], t[:2], inf_loss)
    assert excinfo.value.collocation_index is None


def test_lr_schedule_closed_form():
    assert lr_at_epoch(1e-4, 0, 0.9999) == 1e-4
    assert lr_at_epoch(1e-4, 10000, 0.9999) == pytest.approx(3.679e-5, rel=1e-3)
    assert lr_at_epoch(5e-4, 3, 1.0) == 5e-4


def test_adam_zero_gradient_is_a_fixed_point():
    params = np.array([1.0, -2.0, 3.0])
    state = AdamState(3, base_lr=1e-3)
    adam_step(params, np.zeros(3), state)
    assert params.tolist() == [1.0, -2.0, 3.0]
    assert state.step == 1


def test_adam_first_steps_match_hand_rolled_update():
    """Replays the moment recursions in the test itself and checks the
    implementation tracks them bitwise for two steps."""
    rng = np.random.default_rng(123)
    params = rng.normal(size=5)
    reference = params.copy()
    state = AdamState(5, base_lr=1e-2, decay=0.5)

    m = np.zeros(5)
    v = np.zeros(5)
    for step_index in range(1, 3):
        grad = rng.normal(size=5)
        lr = 1e-2 * 0.5 ** (step_index - 1)
        m += (1.0 - 0.9) * (grad - m)
        v += (1.0 - 0.999) * (grad * grad - v)
        m_hat = m / (1.0 - 0.9 ** step_index)
        v_hat = v / (1.0 - 0.999 ** step_index)
        reference -= lr * m_hat / (np.sqrt(v_hat) + 1e-8)
        adam_step(params, grad, state)
        assert np.array_equal(params, reference)
    # near-unit gradients move params by about the learning rate
    assert np.max(np.abs(params - reference)) == 0.0
    with pytest.raises(ValueError):
        adam_step(params, np.zeros(4), state)


def test_checkpoint_round_trip_preserves_every_bit(tmp_path):
    specs = [NetworkSpec(1, 2, 6, 3), NetworkSpec(1, 1, 4, 1)]
    nets = [Network.initialized(spec, seed) for spec, seed in zip(specs, (5, 6))]
    path = tmp_path / "params.bin"
    save_checkpoint(str(path), nets, seed=42, epoch=1300)

    loaded, seed, epoch = load_checkpoint(str(path))
    assert seed == 42 and epoch == 1300
    assert len(loaded) == 2
    for original, restored in zip(nets, loaded):
        assert restored.spec == original.spec
        assert np.array_equal(restored.params, original.params)


def test_checkpoint_rejects_foreign_and_truncated_files(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b'{"format": "something-else"}\n')
    with pytest.raises(ValueError, match="not a parameter checkpoint"):
        load_checkpoint(str(bad))

    nets = [Network.initialized(NetworkSpec(1, 1, 4, 1), seed=1)]
    path = tmp_path / "params.bin"
    save_checkpoint(str(path), nets, seed=1, epoch=0)
    clipped = path.read_bytes()[:-8]
    (tmp_path / "clipped.bin").write_bytes(clipped)
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(str(tmp_path / "clipped.bin"))
