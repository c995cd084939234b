"""Stage-1 Ridge estimation and the closed-form bounds that go with it."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .env import EnvError, cross_moment, mean_reward, true_covariance
from .featurenet import forward
from .linalg import SPDFactor, Spectrum, as_symmetric, pinv_psd, sym_eig, weighted_norm


class RegularizedCovariance:
    """Sigma_hat and its shifted Cholesky factor (Sigma_hat + lam I)."""

    def __init__(self, sigma_hat, lam: float):
        if not lam > 0:
            raise ValueError(f"lambda must be positive, got {lam}")
        self.sigma_hat = as_symmetric(sigma_hat, "sigma_hat")
        self.lam = float(lam)
        self._factor = SPDFactor(self.sigma_hat, self.lam)
        self._spectrum = None

    @property
    def dim(self) -> int:
        return self.sigma_hat.shape[0]

    @property
    def spectrum(self) -> Spectrum:
        if self._spectrum is None:
            self._spectrum = sym_eig(self.sigma_hat)
        return self._spectrum

    @property
    def sigma_lambda(self) -> np.ndarray:
        return self.sigma_hat + self.lam * np.eye(self.dim)

    def solve(self, v) -> np.ndarray:
        return self._factor.solve(v)


def empirical_covariance(features) -> np.ndarray:
    Phi = np.atleast_2d(np.asarray(features, dtype=float))
    if Phi.shape[0] == 0 or Phi.size == 0:
        raise ValueError("empirical_covariance needs at least one feature vector")
    S = Phi.T @ Phi / Phi.shape[0]
    return 0.5 * (S + S.T)


def ridge_fit(features, rewards, lam: float, return_cov: bool = False):
    """w0 = (Sigma_hat + lam I)^{-1} (1/T1) sum r_t phi_t."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    Phi = np.atleast_2d(np.asarray(features, dtype=float))
    r = np.asarray(rewards, dtype=float).ravel()
    if Phi.shape[0] != r.size:
        raise ValueError(f"{Phi.shape[0]} features but {r.size} rewards")
    cov = RegularizedCovariance(empirical_covariance(Phi), lam)
    w0 = cov.solve(Phi.T @ r / r.size)
    return (w0, cov) if return_cov else w0


@dataclass(frozen=True)
class EffectiveDims:
    d1: float
    d2: float
    d2_hat: float
    c_eff: float
    d: int


def effective_dims(eigs, lam: float) -> EffectiveDims:
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if isinstance(eigs, Spectrum):
        eigs = eigs.eigenvalues
    ev = np.clip(np.asarray(eigs, dtype=float).ravel(), 0.0, None)
    ratio = ev / (ev + lam)
    comp = lam / (ev + lam)
    d1 = float(ratio.sum())
    return EffectiveDims(d1, float((ratio ** 2).sum()), float((comp ** 2).sum()), max(d1, 1.0), ev.size)


@dataclass
class RidgeErrorDecomposition:
    eps_rg: float
    eps_bs: float
    eps_vr: float
    lhs: float
    w_tilde: np.ndarray
    w_lambda: np.ndarray
    w_cond: np.ndarray
    w0: np.ndarray
    sigma0: np.ndarray
    approx_sq: float

    @property
    def holds(self) -> bool:
        return self.lhs <= 3.0 * (self.eps_rg + self.eps_bs + self.eps_vr) + 1e-9


def _sq_norm(v, S) -> float:
    return weighted_norm(v, S) ** 2


def oracle_excess_decomposition(env, theta0, lam: float, inputs, rewards) -> RidgeErrorDecomposition:
    """Exact split of ||w0 - w_tilde||^2_{Sigma0} on a finite-support env.

    ``inputs`` are the raw stage-1 action features X_t (rows); the Ridge
    estimate is fitted on phi_theta0(X_t) and ``rewards``.
    """
    if not getattr(env, "realizable", False):
        raise EnvError("oracle decomposition refused: environment is not realizable")
    if not getattr(env, "finite", False):
        raise EnvError("oracle decomposition refused: environment has no finite support")
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    sigma0 = true_covariance(env, theta0)
    b = cross_moment(env, theta0, env.theta_star) @ env.w_star
    w_tilde = pinv_psd(sigma0) @ b
    w_lambda = SPDFactor(sigma0, lam).solve(b)
    Phi0 = forward(env.arch, theta0, X)
    w0, cov = ridge_fit(Phi0, rewards, lam, return_cov=True)
    mu = np.atleast_1d(mean_reward(env, X))
    w_cond = cov.solve(Phi0.T @ mu / X.shape[0])
    pts, p = env.support.points, env.support.probs
    approx = mean_reward(env, pts) - forward(env.arch, theta0, pts) @ w_lambda
    return RidgeErrorDecomposition(
        eps_rg=_sq_norm(w_tilde - w_lambda, sigma0),
        eps_bs=_sq_norm(w_lambda - w_cond, sigma0),
        eps_vr=_sq_norm(w_cond - w0, sigma0),
        lhs=_sq_norm(w0 - w_tilde, sigma0),
        w_tilde=w_tilde, w_lambda=w_lambda, w_cond=w_cond, w0=w0, sigma0=sigma0,
        approx_sq=float(p @ approx ** 2),
    )


# closed-form bounds

def _check_delta(delta: float) -> None:
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")


def eps_delta(B_w: float, B_phi: float, T1: float, delta: float) -> float:
    _check_delta(delta)
    return 4.0 * B_w ** 2 * B_phi ** 2 * math.sqrt(math.log(1.0 / delta) / (2.0 * T1))


def bound_misspec(d: int, eps0: float, B_w: float, B_phi: float, T1: float, delta: float) -> float:
    """sqrt(d (eps0^2 + eps_delta)), the misspecification cost of the Ridge fit."""
    if T1 < 1:
        raise ValueError("T1 must be >= 1")
    return math.sqrt(d * (eps0 ** 2 + eps_delta(B_w, B_phi, T1, delta)))


def bound_noise(d: int, T1: float, delta: float) -> float:
    """2 sqrt((d log 6 + log(1/delta)) / T1)."""
    _check_delta(delta)
    if T1 < 1:
        raise ValueError("T1 must be >= 1")
    return 2.0 * math.sqrt((d * math.log(6.0) + math.log(1.0 / delta)) / T1)


def bound_combined_hsigl(d, eps0, eps_delta_val, eps_eta, lam, norm_w_star) -> float:
    return math.sqrt(d * (eps0 ** 2 + eps_delta_val)) + eps_eta + math.sqrt(lam) * norm_w_star


def bound_reg_error(eigs, lam: float, norm_w_star: float, eps0: float):
    """(bound on ||w_tilde - w_lam||^2, bound on ||w* - w_lam||^2), both in Sigma0."""
    ed = effective_dims(eigs, lam)
    base = 0.5 * lam * norm_w_star ** 2
    return base + 2.0 * eps0 ** 2 * ed.d2_hat, base + 2.0 * eps0 ** 2 * ed.d2


def second_moment_bound(B: float, sigma_norm: float, n: int, d: int, delta: float) -> float:
    """Deviation bound for an empirical second moment of vectors with norm <= B."""
    _check_delta(delta)
    L = math.log(2.0 * d / delta)
    return (B ** 2 * L + math.sqrt(B ** 4 * L ** 2 + 2.0 * B ** 2 * sigma_norm * n * L)) / n


@dataclass
class RidgeBaseBounds:
    rho: float
    b_lambda: float
    delta_s: float
    delta_f: float
    eps_bs_bound: float
    eps_vr_bound: float
    dims: EffectiveDims
    warnings: list = field(default_factory=list)


def ridge_base_bounds(eigs, lam: float, T1: float, delta: float, B_w: float, B_phi: float,
                      eps0: float, approx_sq: Optional[float] = None, eps_rg: Optional[float] = None,
                      B_eta: float = 1.0, norm_w_star: Optional[float] = None) -> RidgeBaseBounds:
    """Random-design Ridge constants; never raises on off-regime inputs.

    ``approx_sq`` defaults to B_w^2/sqrt(T1) + eps0^2 and ``eps_rg`` to its
    regularization-error bound with ||w*|| = ``norm_w_star`` (default B_w).
    """
    _check_delta(delta)
    ed = effective_dims(eigs, lam)
    warnings = []
    d1 = ed.d1
    if d1 <= 0:
        warnings.append("d1 is zero; rho and b_lambda are infinite")
        rho = b_lam = math.inf
        rho2d1 = B_phi ** 2 / lam
    else:
        rho = B_phi / math.sqrt(d1 * lam)
        rho2d1 = rho ** 2 * d1
        b_lam = (1 + 2 * math.sqrt(2)) * B_w * B_phi ** 2 / math.sqrt(d1 * lam) \
            + eps0 * (2 + math.sqrt(2)) * B_phi ** 2 / lam
    c_eff = ed.c_eff
    L = math.log(1.0 / delta)
    Lc = math.log(c_eff / delta)
    if not L > max(0.0, 2.6 - math.log(c_eff)):
        warnings.append("log(1/delta) <= max(0, 2.6 - log c_eff)")
    if T1 < 6.0 * rho2d1 * Lc:
        warnings.append(f"T1 < 6 B_phi^2/lambda log(c_eff/delta) = {6.0 * rho2d1 * Lc:.6g}")
    delta_s = math.sqrt(4 * rho2d1 * Lc / T1) + 2 * rho2d1 * Lc / (3 * T1)
    if delta_s >= 1:
        warnings.append("delta_s >= 1; bounds below are vacuous")
    ratio = ed.d2 / d1 if d1 > 0 else 0.0
    rho4d1 = rho2d1 ** 2 / d1 if d1 > 0 else math.inf
    delta_f = math.sqrt(max(rho2d1 - ratio, 0.0) / T1) * (1 + math.sqrt(8 * L)) \
        + 4 * math.sqrt(rho4d1 + ratio) / (3 * T1) * L
    if approx_sq is None:
        approx_sq = B_w ** 2 / math.sqrt(T1) + eps0 ** 2
    if eps_rg is None:
        eps_rg = bound_reg_error(ed_eigs(eigs), lam, B_w if norm_w_star is None else norm_w_star, eps0)[0]
    gap = 1.0 - delta_s
    if gap > 0:
        eps_bs_bound = 2.0 / gap ** 2 * (
            (rho2d1 * approx_sq + eps_rg) / T1 * (1 + math.sqrt(8 * L)) ** 2
            + 16 * (b_lam * math.sqrt(d1) + math.sqrt(eps_rg)) ** 2 / T1 ** 2 * L ** 2)
        core = ed.d2 + delta_f * math.sqrt(d1 * ed.d2)
        eps_vr_bound = B_eta ** 2 * core / (T1 * gap ** 2) \
            + 2 * B_eta ** 2 * math.sqrt(core * L) / (T1 * gap ** 1.5) \
            + 2 * B_eta ** 2 / (T1 * gap) * L
    else:
        eps_bs_bound = eps_vr_bound = math.inf
    return RidgeBaseBounds(rho, b_lam, delta_s, delta_f, eps_bs_bound, eps_vr_bound, ed, warnings)


def ed_eigs(eigs):
    return eigs.eigenvalues if isinstance(eigs, Spectrum) else eigs


def regime_lambda(regime: str, T1: float, B_phi: float = 1.0) -> float:
    if T1 < 2:
        raise ValueError("T1 must be >= 2")
    if regime in ("data-poor", "poor"):
        return T1 ** -0.5
    if regime in ("data-rich", "rich"):
        return 7.0 * B_phi ** 2 * math.log(T1) / T1
    raise ValueError(f"unknown regime {regime!r} (expected 'data-poor' or 'data-rich')")


def data_poor_t1(K: int, T: int) -> int:
    """Stage-1 length (K T)^{4/5}, rounded to the nearest integer."""
    return int(round((K * T) ** 0.8))
