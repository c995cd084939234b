import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import central_diff
from e2tc.featurenet import (Architecture, ParameterState, decoder_backward, decoder_forward, estimate_regularity,
                             forward, gelu, gelu_prime, init_decoder, init_params, jacobian, jacobian_t_apply,
                             load_params, pack, project_ball, save_params, unpack, RegularityEstimate)
from e2tc.linalg import LinalgError


def _phi_oracle(W1, b1, W2, x):
    # straight-line evaluator with math.erf, one scalar at a time
    g = lambda z: z * 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))  # noqa: E731
    h = [g(sum(W1[i, j] * x[j] for j in range(len(x))) + b1[i]) for i in range(len(b1))]
    return np.array([g(sum(W2[k, i] * h[i] for i in range(len(h)))) for k in range(W2.shape[0])])


def test_gelu_examples():
    assert gelu(0.0) == 0.0
    assert abs(gelu(10.0) - 10.0) < 1e-6


def test_gelu_prime_matches_finite_difference(rng):
    xs = rng.normal(scale=3.0, size=20)
    for x in xs:
        fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6
        assert abs(gelu_prime(x) - fd) < 1e-7


def test_forward_zero_theta_and_tiny_net():
    arch = Architecture(3, 4, 2)
    assert np.array_equal(forward(arch, np.zeros(arch.n_theta), np.ones(3)), np.zeros(2))
    a1 = Architecture(1, 1, 1)
    assert forward(a1, np.array([1.0, 0.0, 1.0]), np.array([0.0]))[0] == 0.0


def test_forward_matches_straight_line_oracle(rng):
    arch = Architecture(5, 7, 3)
    theta, _ = init_params(arch, 3)
    theta = theta + rng.normal(scale=0.1, size=theta.size)
    W1, b1, W2 = unpack(arch, theta)
    for _ in range(5):
        x = rng.normal(size=5)
        assert np.allclose(forward(arch, theta, x), _phi_oracle(W1, b1, W2, x), atol=1e-13)


def test_forward_batch_equals_rows(rng):
    arch = Architecture(4, 6, 3)
    theta, _ = init_params(arch, 1)
    X = rng.normal(size=(5, 4))
    B = forward(arch, theta, X)
    for i in range(5):
        assert np.allclose(B[i], forward(arch, theta, X[i]), atol=1e-14)


def test_forward_dim_mismatch():
    arch = Architecture(3, 4, 2)
    with pytest.raises(LinalgError):
        forward(arch, np.zeros(arch.n_theta), np.ones(4))
    with pytest.raises(LinalgError):
        forward(arch, np.zeros(arch.n_theta + 1), np.ones(3))


def test_jacobian_t_apply_examples(rng):
    arch = Architecture(3, 4, 2)
    theta, _ = init_params(arch, 0)
    x = rng.normal(size=3)
    assert np.array_equal(jacobian_t_apply(arch, theta, x, np.zeros(2)), np.zeros(arch.n_theta))
    w = rng.normal(size=2)
    z = np.zeros(arch.n_theta)
    g = jacobian_t_apply(arch, z, x, w)
    assert np.allclose(g, 0.0)
    fd = central_diff(lambda t: w @ forward(arch, t, x), z)
    assert np.allclose(g, fd, atol=1e-8)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_jacobian_t_apply_finite_difference(di, dh, d, seed):
    r = np.random.default_rng(seed)
    arch = Architecture(di, dh, d)
    theta = r.normal(size=arch.n_theta)
    x, w = r.normal(size=di), r.normal(size=d)
    g = jacobian_t_apply(arch, theta, x, w)
    h = 1e-6
    for i in r.choice(arch.n_theta, size=min(10, arch.n_theta), replace=False):
        e = np.zeros(arch.n_theta)
        e[i] = h
        fd = w @ (forward(arch, theta + e, x) - forward(arch, theta - e, x)) / (2 * h)
        assert abs(fd - g[i]) <= 1e-5 * (1 + abs(fd))


def test_full_jacobian_consistent(rng):
    arch = Architecture(3, 5, 4)
    theta = rng.normal(size=arch.n_theta)
    x, w = rng.normal(size=3), rng.normal(size=4)
    assert np.allclose(jacobian(arch, theta, x).T @ w, jacobian_t_apply(arch, theta, x, w))


def test_project_ball_examples():
    v = np.array([0.3, 0.4])
    assert np.array_equal(project_ball(v, 1.0), v)
    assert np.allclose(project_ball(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=6), st.floats(0.01, 50.0))
def test_project_ball_idempotent(v, B):
    p = project_ball(np.array(v), B)
    assert np.linalg.norm(p) <= B * (1 + 1e-12)
    assert np.allclose(project_ball(p, B), p)


@given(st.integers(0, 2 ** 31), st.floats(0.1, 5.0))
def test_project_ball_nonexpansive(seed, B):
    r = np.random.default_rng(seed)
    u, v = r.normal(scale=3, size=4), r.normal(scale=3, size=4)
    assert np.linalg.norm(project_ball(u, B) - project_ball(v, B)) <= np.linalg.norm(u - v) + 1e-12


def test_init_params_determinism_and_biases():
    arch = Architecture(40, 30, 5)
    t1, w1 = init_params(arch, 9)
    t2, w2 = init_params(arch, 9)
    assert np.array_equal(t1, t2) and np.array_equal(w1, w2)
    _, b1, _ = unpack(arch, t1)
    assert np.all(b1 == 0.0)


def test_init_first_layer_variance():
    arch = Architecture(40, 30, 5)
    W = np.concatenate([unpack(arch, init_params(arch, s)[0])[0].ravel() for s in range(10)])
    assert abs(W.var() * arch.input_dim - 1.0) < 0.2


def test_regularity_examples():
    arch = Architecture(2, 3, 2)
    est = estimate_regularity(arch, np.zeros(arch.n_theta), np.ones((4, 2)), 1.0, 0.1)
    assert est.B_phi == 0.0
    lin = Architecture(1, 1, 1, activation="identity")
    est = estimate_regularity(lin, np.array([1.0, 0.0, 1.0]), np.array([[2.0], [-2.0]]), 1.0, 0.0)
    assert est.B_phi == pytest.approx(2.2)
    assert est.L_phi == pytest.approx(1.1 * math.sqrt(4.0 + 1.0 + 4.0))  # |J| = |(x, 1, x)|
    r = RegularityEstimate(B_phi=1.0, L_phi=1.0, B_eta=1.0, B_w=1.0)
    assert r.D_w == 6.0
    assert r.D_theta == 6.0 and r.B_r == 2.0
    with pytest.raises(ValueError):
        estimate_regularity(arch, np.zeros(arch.n_theta), np.zeros((0, 2)), 1.0, 0.1)


def test_forward_norm_below_estimate(rng):
    arch = Architecture(3, 8, 4)
    theta, _ = init_params(arch, 2)
    X = rng.normal(size=(30, 3))
    est = estimate_regularity(arch, theta, X, 1.0, 0.1)
    assert np.linalg.norm(forward(arch, theta, X), axis=1).max() <= est.B_phi


def test_decoder_examples(rng):
    arch = Architecture(3, 4, 2, decoder_dims=(5, 3))
    assert np.array_equal(decoder_forward(arch, np.zeros(arch.n_decoder), rng.normal(size=(2, 2))), np.zeros((2, 3)))
    one = Architecture(1, 1, 1, decoder_dims=(1,))
    assert decoder_forward(one, np.array([1.0, 0.0]), np.array([[0.7]]))[0, 0] == pytest.approx(0.7)


def test_decoder_gradient_finite_difference(rng):
    arch = Architecture(3, 4, 3, decoder_dims=(4, 5))
    tt = init_decoder(arch, 4) + rng.normal(scale=0.1, size=arch.n_decoder)
    phi = rng.normal(size=(3, 3))
    target = rng.normal(size=(3, 5))
    loss = lambda t: float(np.sum((decoder_forward(arch, t, phi) - target) ** 2))  # noqa: E731
    out, cache = decoder_forward(arch, tt, phi, return_cache=True)
    g, gphi = decoder_backward(cache, 2 * (out - target))
    assert np.allclose(g, central_diff(loss, tt), rtol=1e-6, atol=1e-7)
    lphi = lambda p: float(np.sum((decoder_forward(arch, tt, p.reshape(3, 3)) - target) ** 2))  # noqa: E731
    assert np.allclose(gphi.ravel(), central_diff(lphi, phi.ravel()), rtol=1e-6, atol=1e-7)


def test_param_file_round_trip(tmp_path, rng):
    arch = Architecture(3, 4, 2, decoder_dims=(3,))
    v = rng.normal(size=arch.n_theta)
    p = tmp_path / "theta.bin"
    save_params(p, v, arch, "theta0")
    raw = p.read_bytes()
    assert raw[:8] == b"E2TCPARM" and len(raw) == 16 + 8 * v.size
    v2, arch2, role = load_params(p)
    assert np.array_equal(v, v2) and arch2 == arch and role == "theta0"
    p.write_bytes(b"NOTMAGIC" + raw[8:])
    with pytest.raises(ValueError, match="magic"):
        load_params(p)


def test_parameter_state_projection():
    s = ParameterState(np.array([3.0, 4.0]), np.array([0.0, 2.0]), 1.0, 1.0).projected()
    assert np.linalg.norm(s.w) <= 1 + 1e-9 and np.linalg.norm(s.theta) <= 1 + 1e-9
    assert np.array_equal(pack(np.ones((1, 1)), [2.0], np.ones((1, 1))), [1.0, 2.0, 1.0])
