"""Hyperparameter machinery: power-curve fit, T2 selection, theory formulas, grid sweeps."""

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .sgd import loglog_plus

ALPHA_GRID = np.linspace(-1.0, -0.05, 77)  # step 0.0125
A_GRID = np.array([0.0] + [2.0 ** k for k in range(15)])
SCAN_LIMIT = 10 ** 5


@dataclass(frozen=True)
class PowerCurve:
    a: float
    b: float
    c: float
    alpha: float
    rmse: float

    def __call__(self, T2):
        T2 = np.asarray(T2, dtype=float)
        if self.c == 0.0:
            return np.full_like(T2, self.b)  # flat curve; avoids 0 * inf at T2 + a == 0
        with np.errstate(divide="ignore"):
            return self.c * (T2 + self.a) ** self.alpha + self.b


def _ls_fit(x, f):
    """Least squares f ~ c x + b; returns (c, b, rmse)."""
    xm, fm = x.mean(), f.mean()
    var = float(((x - xm) ** 2).sum())
    if var <= 1e-300 * max(1.0, float((x * x).sum())):
        c = 0.0
    else:
        c = float(((x - xm) * (f - fm)).sum()) / var
    b = fm - c * xm
    rmse = math.sqrt(float(np.mean((c * x + b - f) ** 2)))
    return c, float(b), rmse


def fit_power_curve(T2s: Sequence[float], fs: Sequence[float]) -> PowerCurve:
    """Grid search over (alpha, a); closed-form (c, b) per cell; global RMSE minimizer."""
    T2s = np.asarray(T2s, dtype=float)
    fs = np.asarray(fs, dtype=float)
    if T2s.size < 4 or T2s.size != fs.size:
        raise ValueError("need at least 4 (T2, f) points")
    if np.unique(T2s).size != T2s.size or (T2s < 0).any():
        raise ValueError("T2 values must be distinct and nonnegative")
    best = None
    for alpha in ALPHA_GRID:
        for a in A_GRID:
            base = T2s + a
            if (base <= 0).any():
                continue
            c, b, rmse = _ls_fit(base ** alpha, fs)
            if best is None or rmse < best.rmse:
                best = PowerCurve(float(a), b, c, float(alpha), rmse)
    return best


def t2_cost(curve, T: int, T1: int, T2, explore_cost: float = 0.9):
    """explore_cost (T1 + T2) + (T - T1 - T2) f(T2); the commit term vanishes when no steps remain."""
    T2 = np.asarray(T2, dtype=float)
    rem = T - T1 - T2
    with np.errstate(invalid="ignore", over="ignore"):
        commit = np.where(rem > 0, rem * curve(T2), 0.0)
    return explore_cost * (T1 + T2) + commit


def _scan(curve, T, T1, lo, hi, explore_cost):
    grid = np.arange(lo, hi + 1)
    cost = t2_cost(curve, T, T1, grid, explore_cost)
    cost = np.where(np.isnan(cost), np.inf, cost)
    i = int(np.argmin(cost))
    return int(grid[i]), float(cost[i])


def select_t2(curve, T: int, T1: int, explore_cost: float = 0.9, method: str = "auto") -> int:
    """Integer T2 in [0, T - T1] minimizing the cumulative error cost (ties to smallest)."""
    if T1 > T or T1 < 0:
        raise ValueError("empty feasible range: need 0 <= T1 <= T")
    if not 0.0 <= explore_cost <= 1.0:
        raise ValueError("explore_cost must lie in [0, 1]")
    hi = T - T1
    if method == "scan" or (method == "auto" and hi <= SCAN_LIMIT):
        return _scan(curve, T, T1, 0, hi, explore_cost)[0]
    return _golden_select(curve, T, T1, hi, explore_cost)


def _golden_select(curve, T, T1, hi, explore_cost, window: int = 64) -> int:
    # coarse geometric grid brackets the minimum, golden-section narrows it,
    # and a final integer scan settles ties
    coarse = np.unique(np.concatenate([[0, 1, hi], np.round(np.geomspace(1, hi, 2048))])).astype(np.int64)
    cost = t2_cost(curve, T, T1, coarse, explore_cost)
    cost = np.where(np.isnan(cost), np.inf, cost)
    i = int(np.argmin(cost))
    lo_b = int(coarse[max(i - 1, 0)])
    hi_b = int(coarse[min(i + 1, coarse.size - 1)])
    g = (math.sqrt(5) - 1) / 2
    f = lambda v: float(t2_cost(curve, T, T1, v, explore_cost))  # noqa: E731
    a, b = float(lo_b), float(hi_b)
    while b - a > window:
        c1 = b - g * (b - a)
        c2 = a + g * (b - a)
        if f(round(c1)) <= f(round(c2)):
            b = c2
        else:
            a = c1
    cands = [_scan(curve, T, T1, max(int(a) - window, 0), min(int(b) + window, hi), explore_cost)]
    cands += [(int(v), float(c)) for v, c in zip(coarse, cost)]
    best = min(cands, key=lambda vc: (vc[1], vc[0]))
    return best[0]


@dataclass(frozen=True)
class TheoryConstants:
    B_w: float = 1.0
    D_w: float = 1.0
    c_zeta: float = 0.1
    B_phi: float = 1.0
    B_theta: float = 1.0
    D_theta: float = 1.0
    T1: Optional[int] = None
    alpha: float = 0.0
    beta: float = 0.0
    T_exp: Optional[int] = None


@dataclass
class TheoryHyperparams:
    delta_eps: float
    zeta: float
    lam: float
    eps_w_sq: float
    T1_floor: int
    small_eps_lhs: float
    small_eps_ok: bool
    small_zeta_lhs: float
    small_zeta_rhs: float
    small_zeta_ok: bool
    notes: list = field(default_factory=list)


def lambda_from_zeta(D_w: float, B_w: float, zeta: float, T2: float) -> float:
    return D_w * zeta * math.sqrt(T2) / (math.sqrt(3.0) * B_w)


def small_zeta_lhs(zeta, lam, T1, T2, d, delta, k: TheoryConstants) -> float:
    """Left side of the learning-rate requirement for SGD started inside the basin."""
    L = math.log(2 * d / delta)
    cov_dev = k.B_phi ** 2 * L + math.sqrt(k.B_phi ** 4 * L ** 2 + 2 * k.B_phi ** 4 * T1 * L)
    out = 4 * k.B_w ** 2 * lam + (16 * k.B_w ** 2 + 4 * k.D_w ** 2 * zeta ** 2 / lam) / T1 * cov_dev
    out += zeta ** 2 * T2 * (k.D_w ** 2 / lam + k.D_theta)
    for B, D in ((k.B_w, k.D_w), (k.B_theta, k.D_theta)):
        out += 20 * B * D * zeta * math.sqrt(
            T2 * (loglog_plus(64 * math.e * B * D * T2 * zeta ** 2) + math.log(2 / delta)))
    return out


def theory_hyperparams(eps_c: float, eps0: float, eps_theta: float, d: int, T2: int, delta: float,
                       consts: TheoryConstants = TheoryConstants()) -> TheoryHyperparams:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if T2 < 1:
        raise ValueError("T2 must be >= 1")
    delta_eps = eps_c ** 2 - 2 * eps0 ** 2 * d - eps_theta ** 2
    if not delta_eps > 0:
        raise ValueError(f"pre-trained weights too poor: delta_eps = {delta_eps:.6g} <= 0")
    k = consts
    Ld = math.log(1 / delta)
    zeta = k.c_zeta * delta_eps / math.sqrt(T2 * Ld)
    lam = lambda_from_zeta(k.D_w, k.B_w, zeta, T2)
    eps_w_sq = 0.5 * (eps_c ** 2 - eps_theta ** 2 + 2 * eps0 ** 2 * d)
    notes = []
    T_exp = k.T_exp
    if k.beta and T_exp is None:
        raise ValueError("beta > 0 needs T_exp")
    scale = (d ** k.alpha) * ((T_exp or 1) ** k.beta)
    T1_floor = int(math.ceil((1 + eps0 ** 2 * d) * scale * math.log(d / delta) * Ld / delta_eps ** 3))
    T1 = k.T1 if k.T1 is not None else max(T1_floor, 1)
    lhs1 = 2 * eps0 ** 2 * d + 0.5 * k.B_w ** 2 * lam
    rhs2 = eps_c ** 2 - eps_w_sq - eps_theta ** 2
    lhs2 = small_zeta_lhs(zeta, lam, T1, T2, d, delta, k)
    if k.T1 is None:
        notes.append("learning-rate requirement evaluated at T1 = T1_floor")
    return TheoryHyperparams(delta_eps, zeta, lam, eps_w_sq, T1_floor, lhs1, lhs1 < eps_w_sq,
                             lhs2, rhs2, lhs2 < rhs2, notes)


# grid sweep

@dataclass
class SweepTable:
    keys: list
    rows: list  # (point_index, params dict, seed, score)
    ranking: list  # (rank, point_index, params, mean, std)

    @property
    def best(self) -> dict:
        return self.ranking[0][2]


def grid_points(grid: dict) -> list:
    keys = list(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(list(grid[k]) for k in keys))]


def grid_sweep(env_factory: Callable, grid: dict, protocol: Callable, seeds: Sequence[int],
               mapper: Callable = map) -> SweepTable:
    """Evaluate ``protocol(env, params, seed)`` on every grid point and seed.

    Lower scores are better; the ranking sorts by mean score with grid order
    breaking ties.  ``mapper`` may be a parallel map; results keep input order.
    """
    points = grid_points(grid)
    if not points:
        raise ValueError("empty grid")
    jobs = [(i, p, s) for i, p in enumerate(points) for s in seeds]
    scores = list(mapper(_SweepJob(env_factory, protocol), jobs))
    rows = [(i, p, s, float(v)) for (i, p, s), v in zip(jobs, scores)]
    ranking = []
    for i, p in enumerate(points):
        vals = np.array([r[3] for r in rows if r[0] == i])
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        ranking.append((i, p, float(vals.mean()), std))
    ranking.sort(key=lambda r: (r[2], r[0]))
    return SweepTable(list(grid), rows, [(k + 1,) + r for k, r in enumerate(ranking)])


class _SweepJob:
    def __init__(self, env_factory, protocol):
        self.env_factory = env_factory
        self.protocol = protocol

    def __call__(self, job):
        _, params, seed = job
        return self.protocol(self.env_factory(seed), params, seed)
