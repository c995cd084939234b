"""Explore Twice then Commit, weak training, and greedy baselines."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .env import batch_means, misspecification_eps0, sample_contexts, true_covariance
from .featurenet import ParameterState, estimate_regularity, forward, init_params, backward, forward_cache
from .linalg import weighted_norm
from .ridge import RegularizedCovariance, regime_lambda, ridge_fit
from .sgd import SgdConfig, run_sgd

STAGES = ("explore1", "explore2", "commit")
TIE_REL = 1e-12


@dataclass(frozen=True)
class E2tcConfig:
    T: int
    T1: int
    T2: int
    lam: float = 1.0
    zeta_w: float = 0.01
    zeta_theta: float = 0.01
    precondition: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.T1 < 0 or self.T2 < 0 or self.T1 + self.T2 > self.T:
            raise ValueError(f"need T1, T2 >= 0 and T1 + T2 <= T (got {self.T1}, {self.T2}, {self.T})")
        if (self.T1 > 0 or self.precondition) and not self.lam > 0:
            raise ValueError("lambda must be positive")


@dataclass
class RunTrace:
    stage: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    regret: np.ndarray
    w_bar: Optional[np.ndarray] = None
    theta_bar: Optional[np.ndarray] = None
    w0: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return int(self.stage.size)

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)

    def stage_counts(self) -> tuple:
        return tuple(int(np.sum(self.stage == k)) for k in range(3))

    @staticmethod
    def concat(parts) -> "RunTrace":
        parts = list(parts)
        return RunTrace(*(np.concatenate([getattr(p, f) for p in parts]) if parts else np.zeros(0)
                          for f in ("stage", "action", "reward", "regret")))


def _empty_trace() -> RunTrace:
    return RunTrace(np.zeros(0, dtype=np.int8), np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0))


def _noise(env, rng, n):
    if env.B_eta <= 0:
        return np.zeros(n)
    return rng.uniform(-env.B_eta, env.B_eta, size=n)


def _explore(env, rng, n: int, stage: int):
    """Uniform-random actions on n fresh contexts.  Returns (trace, chosen inputs)."""
    if n <= 0:
        X, _ = sample_contexts(env, rng, 0)
        return _empty_trace(), X[:, 0]
    X, labels = sample_contexts(env, rng, n)
    actions = rng.integers(env.K, size=n)
    means = batch_means(env, X, labels)
    rows = np.arange(n)
    chosen_mean = means[rows, actions]
    rewards = chosen_mean + _noise(env, rng, n)
    trace = RunTrace(np.full(n, stage, dtype=np.int8), actions.astype(np.int64), rewards,
                     regret_gaps(means, actions))
    return trace, X[rows, actions]


def argmax_lowest(scores) -> np.ndarray:
    """Row-wise argmax; scores within TIE_REL of the row max count as ties, lowest index wins.

    BLAS may round identical rows differently depending on their position in
    a batch, so exact comparison would break ties arbitrarily.
    """
    scores = np.atleast_2d(scores)
    top = scores.max(axis=1, keepdims=True)
    tol = TIE_REL * np.maximum(1.0, np.abs(top))
    return np.argmax(scores >= top - tol, axis=1)


def regret_gaps(means, actions) -> np.ndarray:
    """max_a mu_a - mu_{A_t}, with gaps inside the tie tolerance set to exactly 0."""
    rows = np.arange(actions.size)
    top = means.max(axis=1)
    gap = top - means[rows, actions]
    gap[gap <= TIE_REL * np.maximum(1.0, np.abs(top))] = 0.0
    return gap


def greedy_actions(arch, w, theta, X) -> np.ndarray:
    """argmax_a w^T phi_theta(X_a) for a batch (n, K, d_in); ties to the lowest index."""
    n, K = X.shape[:2]
    scores = (forward(arch, theta, X.reshape(n * K, -1)) @ w).reshape(n, K)
    return argmax_lowest(scores)


def commit_phase(env, w_bar, theta_bar, steps: int, rng, arch=None) -> RunTrace:
    if steps <= 0:
        return _empty_trace()
    arch = arch or env.arch
    X, labels = sample_contexts(env, rng, steps)
    actions = greedy_actions(arch, np.asarray(w_bar, dtype=float), theta_bar, X)
    means = batch_means(env, X, labels)
    rows = np.arange(steps)
    chosen = means[rows, actions]
    rewards = chosen + _noise(env, rng, steps)
    return RunTrace(np.full(steps, 2, dtype=np.int8), actions.astype(np.int64), rewards,
                    regret_gaps(means, actions))


def run_e2tc(env, config: E2tcConfig, theta0=None, w_init=None, arch=None,
             keep_trajectory: bool = False) -> RunTrace:
    """Stage 1 Ridge, stage 2 (preconditioned) projected SGD, then greedy commit."""
    arch = arch or env.arch
    theta0 = np.asarray(env.theta0 if theta0 is None else theta0, dtype=float)
    rng = np.random.default_rng(config.seed)
    parts = []

    t1, X1 = _explore(env, rng, config.T1, 0)
    parts.append(t1)
    if config.T1 > 0:
        Phi = forward(arch, theta0, X1)
        w0, cov = ridge_fit(Phi, t1.reward, config.lam, return_cov=True)
    else:
        w0 = np.zeros(arch.feature_dim) if w_init is None else np.asarray(w_init, dtype=float)
        cov = RegularizedCovariance(np.zeros((arch.feature_dim, arch.feature_dim)), config.lam) \
            if config.precondition else None

    w_bar, theta_bar, traj = w0, theta0, None
    if config.T2 > 0:
        t2, X2 = _explore(env, rng, config.T2, 1)
        parts.append(t2)
        init = ParameterState(w0, theta0, getattr(env, "B_w", np.inf), getattr(env, "B_theta", np.inf))
        sgd_cfg = SgdConfig(config.zeta_w, config.zeta_theta, config.T2, config.precondition, config.lam,
                            config.seed)
        w_bar, theta_bar, traj = run_sgd(arch, zip(X2, t2.reward), init, sgd_cfg,
                                         cov if config.precondition else None)

    parts.append(commit_phase(env, w_bar, theta_bar, config.T - config.T1 - config.T2, rng, arch))
    trace = RunTrace.concat(parts)
    trace.stage = trace.stage.astype(np.int8)
    trace.action = trace.action.astype(np.int64)
    trace.w_bar, trace.theta_bar, trace.w0 = w_bar, theta_bar, w0
    if traj is not None:
        trace.info.update(hits_w=traj.hits_w, hits_theta=traj.hits_theta)
        if keep_trajectory:
            trace.info["trajectory"] = traj
    return trace


def run_weak_training(env, config: E2tcConfig, regime: Optional[str] = "data-poor", theta0=None,
                      B_phi: Optional[float] = None) -> RunTrace:
    """E2TC with T2 = 0; lambda from the regime prescription when ``regime`` is set."""
    if config.T2 != 0:
        raise ValueError("weak training needs T2 == 0")
    theta0 = np.asarray(env.theta0 if theta0 is None else theta0, dtype=float)
    lam = config.lam
    if regime is not None:
        if B_phi is None:
            X, _ = sample_contexts(env, np.random.default_rng(config.seed), 64)
            B_phi = float(np.linalg.norm(forward(env.arch, theta0, X.reshape(-1, X.shape[-1])), axis=1).max())
        lam = regime_lambda(regime, config.T1, B_phi)
    cfg = E2tcConfig(config.T, config.T1, 0, lam, config.zeta_w, config.zeta_theta, False, config.seed)
    trace = run_e2tc(env, cfg, theta0=theta0)
    trace.info["lambda"] = lam
    if getattr(env, "realizable", False) and getattr(env, "finite", False):
        sigma0 = true_covariance(env, theta0)
        trace.info["eps0"] = misspecification_eps0(env, theta0)
        trace.info["w0_err_sq"] = weighted_norm(trace.w0 - env.w_star, sigma0) ** 2
    return trace


VARIANTS = ("last-layer-only", "from-scratch", "pretrained")


def run_greedy(env, variant: str, rates, T: int, seed: int, theta0=None, arch=None) -> RunTrace:
    """Greedy baseline with unprojected, unpreconditioned per-step updates.

    ``rates`` is (zeta_w, zeta_theta).  ``last-layer-only`` freezes theta at
    theta0, ``from-scratch`` draws a fresh theta, ``pretrained`` starts at theta0.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    arch = arch or env.arch
    zeta_w, zeta_theta = (float(v) for v in rates)
    rng = np.random.default_rng(seed)
    theta_rand, w = init_params(arch, rng)
    theta = theta_rand if variant == "from-scratch" else np.array(env.theta0 if theta0 is None else theta0, dtype=float)
    frozen = variant == "last-layer-only"
    X, labels = sample_contexts(env, rng, T)
    means = batch_means(env, X, labels)
    noise = _noise(env, rng, T)
    K = X.shape[1]
    actions = np.empty(T, dtype=np.int64)
    for t in range(T):
        cache = forward_cache(arch, theta, X[t])
        phi = cache["phi"]
        a = int(argmax_lowest(phi @ w)[0])
        actions[t] = a
        r = means[t, a] + noise[t]
        res = 2.0 * (float(w @ phi[a]) - r)
        if not frozen and zeta_theta != 0.0:
            G = np.zeros((K, arch.feature_dim))
            G[a] = w
            g_theta = res * backward(arch, theta, cache, G)
        else:
            g_theta = None
        w = w - zeta_w * res * phi[a]
        if g_theta is not None:
            theta = theta - zeta_theta * g_theta
    rows = np.arange(T)
    chosen = means[rows, actions]
    trace = RunTrace(np.full(T, 2, dtype=np.int8), actions, chosen + noise, regret_gaps(means, actions))
    trace.w_bar, trace.theta_bar = w, theta
    return trace


def estimate_env_regularity(env, theta, B_w: float, n: int = 256, seed: int = 0):
    X, _ = sample_contexts(env, np.random.default_rng(seed), max(1, n // env.K))
    return estimate_regularity(env.arch, theta, X.reshape(-1, X.shape[-1]), B_w, env.B_eta, seed)
