import numpy as np
import pytest
from hypothesis import given, strategies as st

from recnac.checks import central_difference, random_point_in_ball, random_unit_inputs
from recnac.indrnn import (SIGMOID, TANH, NetParams, ProjectionRadii, branch_along,
                           branch_from_state, build_transported_params, forward, in_ball,
                           init_symmetric, linearized_forward, ntrf, ntrf_features, p_poly,
                           project_deviation, project_max_norm, q_poly, smoothness_constants)


def perturbed(m, d, seed, spread=0.5):
    net = init_symmetric(m, d, 0.5, seed)
    rng = np.random.default_rng(seed + 1)
    return net.with_theta(net.theta + spread * rng.standard_normal(net.theta.shape) / np.sqrt(m))


def test_symmetric_init_structure():
    net = init_symmetric(8, 3, 0.7, seed=4)
    assert net.theta.shape == (8, 4)
    np.testing.assert_array_equal(net.c[:4], -net.c[4:])
    np.testing.assert_array_equal(net.u0[:4], net.u0[4:])
    assert set(np.abs(net.w0)) == {0.7}
    assert np.array_equal(net.theta, net.theta0)


@pytest.mark.parametrize("m,d,alpha", [(3, 2, 0.5), (0, 2, 0.5), (4, 0, 0.5), (4, 2, -1.0)])
def test_init_rejects_bad_arguments(m, d, alpha):
    with pytest.raises(ValueError):
        init_symmetric(m, d, alpha, 0)


@given(st.integers(1, 64), st.integers(1, 8), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_output_vanishes_at_init(half, d, n, seed):
    net = init_symmetric(2 * half, d, 0.5, seed)
    x = random_unit_inputs(np.random.default_rng(seed), (n, d))
    assert np.max(np.abs(forward(net, x).outputs)) <= 1e-13


def test_rejects_inputs_outside_unit_ball():
    net = init_symmetric(4, 2, 0.5, 0)
    with pytest.raises(ValueError):
        forward(net, np.array([[1.0, 1.0]]))


def test_forward_matches_explicit_loop():
    net = perturbed(6, 3, 0)
    x = random_unit_inputs(np.random.default_rng(1), (5, 3))
    h = np.zeros(6)
    expected = []
    for t in range(5):
        h = np.tanh(net.w * h + net.u @ x[t])
        expected.append(net.c @ h / np.sqrt(6))
    np.testing.assert_allclose(forward(net, x).outputs, expected, atol=1e-14)


def test_forward_batch_matches_single():
    net = perturbed(6, 3, 2)
    x = random_unit_inputs(np.random.default_rng(3), (4, 5, 3))
    batch = forward(net, x, with_grad=True)
    for b in range(4):
        single = forward(net, x[b], with_grad=True)
        np.testing.assert_allclose(batch.outputs[b], single.outputs, atol=1e-14)
        np.testing.assert_allclose(batch.grad(2)[b], single.grad(2), atol=1e-14)


@pytest.mark.parametrize("activation", [TANH, SIGMOID])
def test_gradient_matches_central_difference(activation):
    net = init_symmetric(6, 3, 0.5, 5, activation)
    net = net.with_theta(net.theta + 0.3 * np.random.default_rng(0).standard_normal(net.theta.shape))
    x = random_unit_inputs(np.random.default_rng(6), (6, 3))
    tape = forward(net, x, with_grad=True)
    for t in (0, 3, 5):
        fd = central_difference(lambda th: forward(net.with_theta(th), x).outputs[t], net.theta)
        assert np.linalg.norm(tape.grad(t) - fd) <= 1e-7 * max(1.0, np.linalg.norm(fd))


def test_branch_from_state_matches_forward():
    net = perturbed(8, 2, 7)
    x = random_unit_inputs(np.random.default_rng(8), (4, 2))
    cands = random_unit_inputs(np.random.default_rng(9), (3, 2))
    prefix = forward(net, x[:3], with_grad=True)
    _, F, grad = branch_from_state(net, prefix.last_state(), cands, with_grad=True)
    for b in range(3):
        full = forward(net, np.vstack([x[:3], cands[b]]), with_grad=True)
        assert F[b] == pytest.approx(full.outputs[3], abs=1e-14)
        np.testing.assert_allclose(grad[b], full.grad(3), atol=1e-14)


def test_branch_along_matches_forward():
    net = perturbed(6, 2, 10)
    rng = np.random.default_rng(11)
    x = random_unit_inputs(rng, (4, 2))
    cands = random_unit_inputs(rng, (4, 3, 2))
    F, grad = branch_along(net, x, cands, with_grad=True)
    for t in range(4):
        for b in range(3):
            seq = np.vstack([x[:t], cands[t, b]])
            full = forward(net, seq, with_grad=True)
            assert F[t, b] == pytest.approx(full.outputs[t], abs=1e-14)
            np.testing.assert_allclose(grad[t, b], full.grad(t), atol=1e-14)


def test_ntrf_matches_gradient_at_init():
    net = init_symmetric(10, 3, 0.6, 12)
    x = random_unit_inputs(np.random.default_rng(13), (6, 3))
    tape = forward(net, x, with_grad=True)
    for t in range(6):
        psi = ntrf_features(net, x, t)
        np.testing.assert_allclose(tape.grad(t), net.c[:, None] * psi / np.sqrt(10), atol=1e-12)


def test_ntrf_rejects_out_of_range_step():
    with pytest.raises(ValueError):
        ntrf(np.ones(2), np.ones((2, 1)), np.zeros((3, 1)), 3)


def test_linearized_forward_at_init_is_zero():
    net = init_symmetric(8, 2, 0.5, 0)
    x = random_unit_inputs(np.random.default_rng(0), (5, 2))
    np.testing.assert_array_equal(linearized_forward(net, x), np.zeros(5))


def test_linearized_forward_is_first_order():
    net = init_symmetric(8, 2, 0.5, 1)
    x = random_unit_inputs(np.random.default_rng(2), (4, 2))
    direction = np.random.default_rng(3).standard_normal(net.theta.shape)
    for eps in (1e-3, 1e-4):
        moved = net.with_theta(net.theta0 + eps * direction)
        gap = np.max(np.abs(forward(moved, x).outputs - linearized_forward(moved, x)))
        assert gap <= 50 * eps ** 2


def test_transported_params():
    net = init_symmetric(6, 2, 0.5, 3)
    moved = build_transported_params(net, lambda w, u: np.column_stack([w, u]))
    expected = net.theta0 * (1 + net.c[:, None] / np.sqrt(6))
    np.testing.assert_allclose(moved.theta, expected)
    with pytest.raises(ValueError):
        build_transported_params(net, lambda w, u: np.zeros((6, 1)))


@given(st.integers(1, 16), st.integers(1, 6), st.floats(0.05, 3), st.floats(0.05, 3),
       st.integers(0, 2**32 - 1))
def test_projection_lands_in_ball_and_is_idempotent(half, d, rw, ru, seed):
    m = 2 * half
    radii = ProjectionRadii(rw, ru)
    rng = np.random.default_rng(seed)
    dev = 3 * rng.standard_normal((m, d + 1))
    p = project_deviation(dev, radii)
    assert np.all(np.abs(p[:, 0]) <= rw / np.sqrt(m) + 1e-12)
    assert np.all(np.linalg.norm(p[:, 1:], axis=1) <= ru / np.sqrt(m) + 1e-12)
    assert np.max(np.abs(project_deviation(p, radii) - p)) <= 1e-15


@given(st.integers(1, 16), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_projection_nonexpansive(half, d, seed):
    m = 2 * half
    radii = ProjectionRadii(0.7, 1.3)
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, m, d + 1))
    pa, pb = project_deviation(a, radii), project_deviation(b, radii)
    assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12


def test_projection_leaves_interior_points():
    net = init_symmetric(8, 3, 0.5, 0)
    radii = ProjectionRadii(1.0, 1.0)
    dev = random_point_in_ball(np.random.default_rng(0), 8, 3, radii)
    inside = net.with_theta(net.theta0 + dev)
    assert in_ball(inside, radii)
    np.testing.assert_array_equal(project_max_norm(inside, radii).theta, inside.theta)


def test_projection_keeps_recurrent_weights_bounded():
    net = init_symmetric(16, 2, 0.5, 0)
    radii = ProjectionRadii(2.0, 2.0)
    far = net.with_theta(net.theta + 100.0)
    bound = smoothness_constants(TANH, 0.5, radii, 16, 2).alpha_m
    assert np.max(np.abs(project_max_norm(far, radii).w)) <= bound + 1e-12


def test_params_round_trip(tmp_path):
    net = perturbed(4, 3, 0)
    net.save(tmp_path / "net.json")
    back = NetParams.load(tmp_path / "net.json")
    np.testing.assert_array_equal(back.theta, net.theta)
    np.testing.assert_array_equal(back.theta0, net.theta0)
    np.testing.assert_array_equal(back.c, net.c)


def test_polynomials():
    assert p_poly(3, 0.5) == pytest.approx(1 + 0.5 + 0.25)
    assert q_poly(3, 0.5) == pytest.approx(1 + 2 * 0.5 + 3 * 0.25)
    assert p_poly(0, 2.0) == 0.0


def test_smoothness_constants_tables():
    radii = ProjectionRadii(2.0, 3.0)
    c = smoothness_constants(TANH, 0.5, radii, 64, 5, d=2)
    assert c.alpha_m == pytest.approx(0.5 + 2.0 / 8)
    assert c.L.shape == (6,) and c.L[0] == 0
    np.testing.assert_allclose(c.L, 2 * c.p ** 2)
    np.testing.assert_allclose(c.beta, 2 * c.p * c.q)
    with pytest.raises(ValueError):
        smoothness_constants(TANH, 0.5, radii, 64, 0)


def _hidden_gradient_norm_bound_holds(activation):
    radii = ProjectionRadii(1.0, 1.0)
    m, d, T = 8, 3, 6
    consts = smoothness_constants(activation, 0.5, radii, m, T + 1, d)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        net = init_symmetric(m, d, 0.5, int(rng.integers(2**32)), activation)
        net = net.with_theta(net.theta0 + random_point_in_ball(rng, m, d, radii))
        x = random_unit_inputs(rng, (T, d))
        tape = forward(net, x, with_grad=True)
        for s in range(T):
            g2 = tape.dh_dw[s] ** 2 + np.sum(tape.dh_du[s] ** 2, axis=-1)
            worst = max(worst, float(np.max(g2 / consts.L[s + 1])))
    return worst


def test_hidden_state_gradient_within_smoothness_constant():
    # per-unit ||d H_t / d theta_i||^2 <= L_{t+1} inside the ball (tanh)
    assert _hidden_gradient_norm_bound_holds(TANH) <= 1.0
