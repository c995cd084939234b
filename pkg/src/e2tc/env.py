"""Bandit environments.

Two families live here:

* ``SyntheticEnv``: realizable rewards ``w*^T phi_{theta*}(x) + eta`` with
  ``eta ~ U[-B_eta, B_eta]``.  Action features come either from a finite
  support table (exact expectations available) or from a generator.
* ``ClassificationEnv``: classification-as-bandit with block-embedded
  items and 0/1 rewards.  Not realizable, so oracle diagnostics refuse it.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .featurenet import Architecture, forward, init_params, project_ball


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class Context:
    actions: np.ndarray  # (K, d_in)
    label: Optional[int] = None

    @property
    def K(self) -> int:
        return self.actions.shape[0]


@dataclass(frozen=True)
class FiniteSupport:
    points: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        p = np.asarray(self.probs, dtype=float).ravel()
        if pts.shape[0] != p.size or p.size == 0:
            raise EnvError("support points and probabilities must match and be nonempty")
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
            raise EnvError(f"support probabilities must be >= 0 and sum to 1 (sum={p.sum()!r})")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, points) -> "FiniteSupport":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]))


@dataclass
class SyntheticEnv:
    arch: Architecture
    theta_star: np.ndarray
    w_star: np.ndarray
    B_eta: float
    K: int
    support: Optional[FiniteSupport] = None
    sampler: Optional[Callable] = None  # sampler(rng, K) -> (K, d_in)
    B_w: float = np.inf
    B_theta: float = np.inf
    theta0: Optional[np.ndarray] = None
    realizable: bool = True

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, dtype=float)
        self.w_star = np.asarray(self.w_star, dtype=float)
        if self.K < 1:
            raise EnvError("K must be >= 1")
        if (self.support is None) == (self.sampler is None):
            raise EnvError("exactly one of support / sampler must be given")
        if np.linalg.norm(self.w_star) > self.B_w + 1e-9:
            raise EnvError("||w*|| exceeds B_w")
        if np.linalg.norm(self.theta_star) > self.B_theta + 1e-9:
            raise EnvError("||theta*|| exceeds B_theta")

    @property
    def finite(self) -> bool:
        return self.support is not None


@dataclass
class ClassificationEnv:
    items: np.ndarray  # (n, p)
    labels: np.ndarray  # (n,) ints in [0, K)
    K: int
    B_eta: float = 0.0
    realizable: bool = False
    finite: bool = False
    theta0: Optional[np.ndarray] = None
    arch: Optional[Architecture] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.items = np.atleast_2d(np.asarray(self.items, dtype=float))
        self.labels = np.asarray(self.labels, dtype=int)
        if self.items.shape[0] != self.labels.size or self.labels.size == 0:
            raise EnvError("items and labels must be nonempty and aligned")
        if self.labels.min() < 0 or self.labels.max() >= self.K:
            raise EnvError("labels must lie in [0, K)")


def classification_context(item_features, K: int) -> Context:
    """Put the item into block a of action a; zeros elsewhere."""
    item = np.asarray(item_features, dtype=float).ravel()
    p = item.size
    if p < 1 or K < 1:
        raise EnvError("need p >= 1 and K >= 1")
    X = np.zeros((K, K * p))
    for a in range(K):
        X[a, a * p:(a + 1) * p] = item
    return Context(X)


def sample_contexts(env, rng, n: int):
    """Draw n i.i.d. contexts at once: (actions (n, K, d_in), labels or None)."""
    if isinstance(env, ClassificationEnv):
        idx = rng.integers(env.items.shape[0], size=n)
        items = env.items[idx]
        p = items.shape[1]
        X = np.zeros((n, env.K, env.K * p))
        for a in range(env.K):
            X[:, a, a * p:(a + 1) * p] = items
        return X, env.labels[idx].copy()
    if env.support is not None:
        idx = rng.choice(env.support.points.shape[0], size=(n, env.K), p=env.support.probs)
        return env.support.points[idx], None
    X = np.asarray(env.sampler(rng, n * env.K), dtype=float).reshape(n, env.K, -1)
    return rng.permuted(X, axis=1), None


def sample_context(env, rng) -> Context:
    X, labels = sample_contexts(env, rng, 1)
    return Context(X[0].copy(), None if labels is None else int(labels[0]))


def mean_reward(env, x) -> np.ndarray:
    """w*^T phi_{theta*}(x) for one input (scalar) or a batch (vector)."""
    if not getattr(env, "realizable", False):
        raise EnvError("mean_reward needs a realizable environment")
    return forward(env.arch, env.theta_star, x) @ env.w_star


def action_means(env, ctx: Context) -> np.ndarray:
    if isinstance(env, ClassificationEnv):
        m = np.zeros(env.K)
        m[ctx.label] = 1.0
        return m
    return np.atleast_1d(mean_reward(env, ctx.actions))


def batch_means(env, X, labels=None) -> np.ndarray:
    """Mean rewards for a batch of contexts X of shape (n, K, d_in)."""
    n, K = X.shape[:2]
    if isinstance(env, ClassificationEnv):
        m = np.zeros((n, K))
        m[np.arange(n), labels] = 1.0
        return m
    return mean_reward(env, X.reshape(n * K, -1)).reshape(n, K)


def optimal_action(env, ctx: Context) -> int:
    return int(np.argmax(action_means(env, ctx)))


def reward(env, x, rng, mean: Optional[float] = None) -> float:
    """One noisy reward at x; ``mean`` may be passed to skip recomputation."""
    m = float(mean_reward(env, x)) if mean is None else float(mean)
    if env.B_eta <= 0:
        return m
    return m + float(rng.uniform(-env.B_eta, env.B_eta))


def misspecification_eps0(env, theta0, n_mc: Optional[int] = None, rng=None,
                          return_se: bool = False):
    """sqrt(E_X[(w*^T (phi_theta0(X) - phi_theta*(X)))^2]).

    Exact on a finite support; otherwise a Monte-Carlo estimate over ``n_mc``
    generator draws (the standard error of the squared quantity is returned
    when ``return_se``).
    """
    if not env.realizable:
        raise EnvError("eps0 is only defined for realizable environments")
    if env.finite:
        X, p = env.support.points, env.support.probs
    else:
        if not n_mc or rng is None:
            raise EnvError("generator-mode eps0 needs n_mc and rng")
        X = np.vstack([env.sampler(rng, env.K) for _ in range(int(np.ceil(n_mc / env.K)))])[:n_mc]
        p = np.full(X.shape[0], 1.0 / X.shape[0])
    diff = (forward(env.arch, theta0, X) - forward(env.arch, env.theta_star, X)) @ env.w_star
    sq = diff ** 2
    val = float(p @ sq)
    eps0 = float(np.sqrt(max(val, 0.0)))
    if return_se:
        se = 0.0 if env.finite else float(sq.std(ddof=1) / np.sqrt(sq.size)) if sq.size > 1 else np.inf
        return eps0, se
    return eps0


def true_covariance(env, theta) -> np.ndarray:
    """E_X[phi_theta(X) phi_theta(X)^T], exact on a finite support."""
    if not env.finite:
        raise EnvError("true_covariance needs finite-support mode; use an empirical covariance")
    Phi = forward(env.arch, theta, env.support.points)
    S = (Phi * env.support.probs[:, None]).T @ Phi
    return 0.5 * (S + S.T)


def cross_moment(env, theta_a, theta_b) -> np.ndarray:
    """E_X[phi_a(X) phi_b(X)^T] on a finite support."""
    if not env.finite:
        raise EnvError("cross_moment needs finite-support mode")
    Pa = forward(env.arch, theta_a, env.support.points)
    Pb = forward(env.arch, theta_b, env.support.points)
    return (Pa * env.support.probs[:, None]).T @ Pb


def perturb_theta(theta_star, eps_theta: float, B_theta: float, rng) -> np.ndarray:
    """theta0 = Pi_{B_theta}(theta* + eps_theta * u), u uniform on the sphere."""
    u = rng.normal(size=np.size(theta_star))
    u /= np.linalg.norm(u)
    return project_ball(np.asarray(theta_star, dtype=float) + eps_theta * u, B_theta)


@dataclass(frozen=True)
class GaussianSampler:
    dim: int
    scale: float = 1.0

    def __call__(self, rng, n: int) -> np.ndarray:
        return rng.normal(0.0, self.scale, size=(n, self.dim))


def make_synthetic_env(arch: Architecture, K: int, B_eta: float, seed: int,
                       support_size: Optional[int] = None, eps_theta: float = 0.0,
                       w_norm: float = 1.0, input_scale: float = 1.0,
                       B_w: Optional[float] = None, B_theta: Optional[float] = None) -> SyntheticEnv:
    """Random realizable environment with theta* from the standard initializer.

    ``w*`` is rescaled to norm ``w_norm``; contexts are N(0, input_scale^2 I)
    draws, either fresh each round or from a fixed uniform support table.
    """
    rng = np.random.default_rng(seed)
    theta_star, w_star = init_params(arch, rng)
    w_star = w_star * (w_norm / np.linalg.norm(w_star))
    B_w = 2.0 * w_norm if B_w is None else B_w
    B_theta = 2.0 * float(np.linalg.norm(theta_star)) if B_theta is None else B_theta
    support, sampler = None, None
    if support_size:
        pts = rng.normal(0.0, input_scale, size=(support_size, arch.input_dim))
        support = FiniteSupport.uniform(pts)
    else:
        sampler = GaussianSampler(arch.input_dim, input_scale)
    theta0 = perturb_theta(theta_star, eps_theta, B_theta, rng) if eps_theta > 0 else theta_star.copy()
    return SyntheticEnv(arch, theta_star, w_star, B_eta, K, support, sampler,
                        B_w=B_w, B_theta=B_theta, theta0=theta0)


# tabular data

@dataclass(frozen=True)
class TabularDataset:
    features: np.ndarray
    targets: np.ndarray
    header: Optional[list]
    mean: np.ndarray
    std: np.ndarray


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_tabular_dataset(path) -> TabularDataset:
    """Read a numeric CSV (last column = target) and standardize every column."""
    path = Path(path)
    if not path.is_file():
        raise EnvError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise EnvError(f"{path}: empty file")
    header = None
    if not all(_is_number(c.strip()) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
        first = 2
    else:
        first = 1
    if not rows:
        raise EnvError(f"{path}: no data rows")
    ncol = len(header) if header else len(rows[0])
    if ncol < 2:
        raise EnvError(f"{path}: need at least one feature column and a target column")
    data = np.empty((len(rows), ncol))
    for i, r in enumerate(rows):
        if len(r) != ncol:
            raise EnvError(f"{path}: row {i + first} has {len(r)} columns, expected {ncol}")
        for j, c in enumerate(r):
            try:
                data[i, j] = float(c.strip())
            except ValueError:
                raise EnvError(f"{path}: non-numeric cell at row {i + first}, column {j + 1}: {c!r}") from None
    if not np.isfinite(data).all():
        i, j = np.argwhere(~np.isfinite(data))[0]
        raise EnvError(f"{path}: non-finite cell at row {i + first}, column {j + 1}")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    zero = np.flatnonzero(std <= 1e-12 * np.maximum(1.0, np.abs(mean)))
    if zero.size:
        raise EnvError(f"{path}: zero variance column {int(zero[0]) + 1}")
    z = (data - mean) / std
    return TabularDataset(z[:, :-1].copy(), z[:, -1].copy(), header, mean, std)


def make_block_classification(n_items: int, K: int, p: int, noise: float, seed) -> tuple:
    """Items = class prototype + Gaussian noise; prototypes ~ N(0, I_p).

    Returns (items (n, p), labels (n,)) with labels cycling through classes so
    every class is present.
    """
    if n_items < K or K < 1 or p < 1:
        raise EnvError("need n_items >= K >= 1 and p >= 1")
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(K, p))
    labels = rng.permutation(np.arange(n_items) % K)
    items = protos[labels] + noise * rng.normal(size=(n_items, p))
    return items, labels
