"""Stage-2 optimizer and the SGD/martingale bound evaluators.

Gradient estimators:
    v_w     = 2 (w^T phi - r) phi
    v_theta = 2 (w^T phi - r) J^T w
Update (projected, w optionally preconditioned by Sigma_lambda^{-1}):
    w     <- Pi_{B_w}(w - zeta_w Sigma_lambda^{-1} v_w)
    theta <- Pi_{B_theta}(theta - zeta_theta v_theta)
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .env import EnvError, mean_reward
from .featurenet import Architecture, ParameterState, backward, forward, forward_cache
from .linalg import weighted_norm


@dataclass(frozen=True)
class SgdConfig:
    zeta_w: float
    zeta_theta: float
    T2: int
    precondition: bool = True
    lam: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.zeta_w < 0 or self.zeta_theta < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.T2 < 0:
            raise ValueError("T2 must be >= 0")


def _residual_and_cache(arch, w, theta, x, r):
    cache = forward_cache(arch, theta, np.asarray(x, dtype=float)[None, :])
    phi = cache["phi"][0]
    return float(w @ phi) - float(r), phi, cache


def grad_w(arch: Architecture, w, theta, x, r) -> np.ndarray:
    res, phi, _ = _residual_and_cache(arch, np.asarray(w, dtype=float), theta, x, r)
    return 2.0 * res * phi


def grad_theta(arch: Architecture, w, theta, x, r) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    res, _, cache = _residual_and_cache(arch, w, theta, x, r)
    return 2.0 * res * backward(arch, theta, cache, w[None, :])


def grads(arch: Architecture, w, theta, x, r):
    """(v_w, v_theta) sharing one forward pass."""
    w = np.asarray(w, dtype=float)
    res, phi, cache = _residual_and_cache(arch, w, theta, x, r)
    return 2.0 * res * phi, 2.0 * res * backward(arch, theta, cache, w[None, :])


def _project(v, B):
    n = float(np.sqrt(v @ v))
    if n <= B:
        return v, False
    return v * (B / n), True


def sgd_step(arch: Architecture, state: ParameterState, x, r, config: SgdConfig, cov=None,
             grads_out: Optional[list] = None):
    """One projected step.  Returns (new_state, w_projected, theta_projected)."""
    if config.precondition and cov is None:
        raise ValueError("preconditioning requested but no covariance supplied")
    vw, vt = grads(arch, state.w, state.theta, x, r)
    if grads_out is not None:
        grads_out.append((vw, vt))
    step_w = cov.solve(vw) if config.precondition else vw
    w, hit_w = _project(state.w - config.zeta_w * step_w, state.B_w)
    theta, hit_t = _project(state.theta - config.zeta_theta * vt, state.B_theta)
    return ParameterState(w, theta, state.B_w, state.B_theta), hit_w, hit_t


STORE_LIMIT = 10 ** 5
CHECKPOINTS = 1024


@dataclass
class Trajectory:
    """Stored iterates (full or thinned) plus exact running sums."""

    T2: int
    steps: list = field(default_factory=list)
    ws: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    sum_w: Optional[np.ndarray] = None
    sum_theta: Optional[np.ndarray] = None
    hits_w: int = 0
    hits_theta: int = 0
    count: int = 0
    grads: Optional[list] = None
    final: Optional[ParameterState] = None

    def __post_init__(self):
        self.stride = 1 if self.T2 <= STORE_LIMIT else int(math.ceil(self.T2 / CHECKPOINTS))

    def record(self, state: ParameterState) -> None:
        if self.sum_w is None:
            self.sum_w = np.zeros_like(state.w)
            self.sum_theta = np.zeros_like(state.theta)
        self.sum_w += state.w
        self.sum_theta += state.theta
        if self.count % self.stride == 0:
            self.steps.append(self.count)
            self.ws.append(state.w.copy())
            self.thetas.append(state.theta.copy())
        self.count += 1

    @property
    def w_bar(self) -> np.ndarray:
        return self.sum_w / self.count

    @property
    def theta_bar(self) -> np.ndarray:
        return self.sum_theta / self.count

    def iterates(self):
        return np.array(self.ws), np.array(self.thetas)


def run_sgd(arch: Architecture, samples: Iterable, init: ParameterState, config: SgdConfig, cov=None,
            keep_grads: bool = False):
    """Run T2 steps on the (x, r) pairs from ``samples``.

    Returns (w_bar, theta_bar, trajectory) where the averages run over the
    pre-update iterates w_1..w_T2.
    """
    if config.T2 < 1:
        raise ValueError("run_sgd needs T2 >= 1")
    traj = Trajectory(config.T2)
    traj.grads = [] if keep_grads else None
    state = ParameterState(np.array(init.w, dtype=float), np.array(init.theta, dtype=float),
                           init.B_w, init.B_theta)
    it = iter(samples)
    for _ in range(config.T2):
        x, r = next(it)
        traj.record(state)
        state, hw, ht = sgd_step(arch, state, x, r, config, cov, traj.grads)
        traj.hits_w += hw
        traj.hits_theta += ht
    traj.final = state
    return traj.w_bar, traj.theta_bar, traj


def _expectation_rows(env, n_mc, rng):
    if getattr(env, "finite", False):
        return env.support.points, env.support.probs
    if not n_mc or rng is None:
        raise EnvError("generator-mode risk needs n_mc and rng")
    X = np.vstack([env.sampler(rng, env.K) for _ in range(int(math.ceil(n_mc / env.K)))])[:n_mc]
    return X, np.full(X.shape[0], 1.0 / X.shape[0])


def suboptimality_gap(env, w, theta, n_mc: Optional[int] = None, rng=None) -> float:
    """E_X[(w^T phi_theta(X) - w*^T phi_theta*(X))^2]."""
    if not getattr(env, "realizable", False):
        raise EnvError("risk refused: environment is not realizable")
    X, p = _expectation_rows(env, n_mc, rng)
    diff = forward(env.arch, theta, X) @ np.asarray(w, dtype=float) - mean_reward(env, X)
    return float(p @ diff ** 2)


def risk(env, w, theta, n_mc: Optional[int] = None, rng=None) -> float:
    """Squared loss risk with uniform noise: gap + B_eta^2 / 3."""
    return suboptimality_gap(env, w, theta, n_mc, rng) + env.B_eta ** 2 / 3.0


def containment_check(ws, thetas, w_star, theta_star, sigma0, eps_c: float) -> Optional[int]:
    """First index with ||w - w*||^2_{Sigma0} + ||theta - theta*||^2 >= eps_c^2."""
    ws = np.atleast_2d(np.asarray(ws, dtype=float))
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if ws.shape[0] != thetas.shape[0]:
        raise ValueError("w and theta trajectories have different lengths")
    if ws.shape[1] != np.size(w_star) or thetas.shape[1] != np.size(theta_star):
        raise ValueError("trajectory dims do not match the optimum")
    for t in range(ws.shape[0]):
        dist = weighted_norm(ws[t] - w_star, sigma0) ** 2 + float(np.sum((thetas[t] - theta_star) ** 2))
        if not dist < eps_c ** 2:
            return t
    return None


# martingale / SGD bounds

def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def loglog_plus(z: float) -> float:
    """(log log z)_+, taken as 0 whenever log z <= 1."""
    if not z > math.e:
        return 0.0
    return max(math.log(math.log(z)), 0.0)


def azuma_bound(B: float, T: float, delta: float) -> float:
    _check_delta(delta)
    return B * math.sqrt(2.0 * T * math.log(1.0 / delta))


def uniform_azuma_bound(B_a: float, t: float, delta: float) -> float:
    """(5B/2) sqrt(t ((log log e t B^2)_+ + log(2/delta)))."""
    _check_delta(delta)
    if B_a <= 0 or t < 1:
        raise ValueError("need B_a > 0 and t >= 1")
    return 2.5 * B_a * math.sqrt(t * (loglog_plus(math.e * t * B_a ** 2) + math.log(2.0 / delta)))


def containment_lhs(zeta: float, D: float, T: float, delta: float, B_omega: float) -> float:
    _check_delta(delta)
    a = zeta ** 2 * D ** 2
    bnd = 2 * a + 8 * zeta * D * B_omega
    return a * T + 5 * (a + 4 * zeta * D * B_omega) * math.sqrt(
        T * loglog_plus(math.e * T * bnd ** 2) + T * math.log(2.0 / delta))


def containment_condition(zeta: float, D: float, T: float, delta: float, gap: float,
                          B_omega: float):
    """(lhs < eps_c^2 - eps^2, lhs) for the basin containment requirement."""
    lhs = containment_lhs(zeta, D, T, delta, B_omega)
    return lhs < gap, lhs


def largest_contained_rate(D: float, T: float, delta: float, gap: float, B_omega: float,
                           iters: int = 200) -> float:
    """Bisection for the largest zeta that still passes the containment check."""
    lo, hi = 0.0, 1.0
    while containment_condition(hi, D, T, delta, gap, B_omega)[0]:
        lo, hi = hi, 2 * hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if containment_condition(mid, D, T, delta, gap, B_omega)[0]:
            lo = mid
        else:
            hi = mid
    return lo


def highp_sgd_bound(norm_init_dist_sq: float, zeta: float, T: float, D: float, B_omega: float,
                    delta: float) -> float:
    """||w* - w_1||^2/(2 zeta T) + zeta D^2/2 + 4 D B_omega sqrt(2 log(1/delta)/T)."""
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    return norm_init_dist_sq / (2 * zeta * T) + zeta / (2 * T) * D ** 2 * T \
        + 4 * D * B_omega * math.sqrt(2 * math.log(1.0 / delta) / T)


def contained_sgd_bound(eps_sq: float, zeta: float, T: float, D: float, B_omega: float,
                        delta: float) -> float:
    """Suboptimality bound once the trajectory stays in the basin."""
    return highp_sgd_bound(eps_sq, zeta, T, D, B_omega, delta)


def projected_sgd(grad_oracle: Callable, x0, zeta: float, T: int, radius: float, rng,
                  center=None) -> np.ndarray:
    """Generic projected SGD on a ball; returns the iterates x_1..x_T (pre-update)."""
    x = np.array(x0, dtype=float)
    c = np.zeros_like(x) if center is None else np.asarray(center, dtype=float)
    out = np.empty((T, x.size))
    for t in range(T):
        out[t] = x
        y = x - zeta * grad_oracle(x, rng) - c
        n = float(np.linalg.norm(y))
        x = c + (y if n <= radius else y * (radius / n))
    return out
