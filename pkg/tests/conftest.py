import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, floor=0.0):
    M = rng.normal(size=(n, n))
    return M.T @ M + floor * np.eye(n)


def central_diff(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def theta_at_eps0(env, target, u, hi=1.0):
    """theta* + s u with s found by bisection so that eps0(theta) == target."""
    from scipy.optimize import brentq
    from e2tc.env import misspecification_eps0
    f = lambda s: misspecification_eps0(env, env.theta_star + s * u) - target  # noqa: E731
    while f(hi) < 0:
        hi *= 2.0
    s = brentq(f, 0.0, hi, xtol=1e-12)
    return env.theta_star + s * u
