"""Dense symmetric / PSD linear algebra.

Everything here works on plain ``numpy`` arrays in double precision.  The
eigensolver is a cyclic Jacobi sweep so that results are deterministic and
do not depend on the LAPACK build; solves go through a Cholesky factor with
a single jitter retry.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
SYM_TOL = 1e-12
PSD_TOL = 1e-9


class LinalgError(ValueError):
    pass


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, orthonormal

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def as_symmetric(A, name: str = "matrix") -> np.ndarray:
    """Validate squareness/symmetry and return an exactly symmetric copy."""
    A = np.array(A, dtype=float, copy=True)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise LinalgError(f"{name} must be a nonempty square matrix, got shape {A.shape}")
    scale = max(np.abs(A).max(), 1.0)
    if np.abs(A - A.T).max() > SYM_TOL * scale:
        raise LinalgError(f"{name} is not symmetric")
    return 0.5 * (A + A.T)


def _off_norm(A: np.ndarray) -> float:
    # direct sum; subtracting the diagonal from the full norm cancels badly
    off = A[~np.eye(A.shape[0], dtype=bool)]
    return float(np.sqrt(off @ off))


def sym_eig(A) -> Spectrum:
    """Cyclic Jacobi eigendecomposition, eigenvalues sorted descending."""
    A = as_symmetric(A)
    n = A.shape[0]
    V = np.eye(n)
    fro = float(np.linalg.norm(A))
    target = JACOBI_TOL * fro
    if n > 1 and fro > 0.0:
        for _ in range(JACOBI_MAX_SWEEPS):
            if _off_norm(A) <= target:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = A[p, q]
                    if apq == 0.0:
                        continue
                    theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                    if abs(theta) > 1e150:
                        t = 0.5 / theta  # t ~ 1/(2 theta); avoids overflow in theta^2
                    else:
                        t = np.copysign(1.0, theta) / (abs(theta) + np.hypot(theta, 1.0))
                    c = 1.0 / np.hypot(t, 1.0)
                    s = t * c
                    cp, cq = A[:, p].copy(), A[:, q].copy()
                    A[:, p] = c * cp - s * cq
                    A[:, q] = s * cp + c * cq
                    rp, rq = A[p, :].copy(), A[q, :].copy()
                    A[p, :] = c * rp - s * rq
                    A[q, :] = s * rp + c * rq
                    A[p, q] = A[q, p] = 0.0
                    vp, vq = V[:, p].copy(), V[:, q].copy()
                    V[:, p] = c * vp - s * vq
                    V[:, q] = s * vp + c * vq
        else:
            off = _off_norm(A)
            if off > target:
                raise LinalgError(
                    f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps "
                    f"(off-diagonal residual {off:.3e})"
                )
    vals = np.diag(A).copy()
    order = np.argsort(-vals, kind="stable")
    return Spectrum(vals[order], V[:, order])


def eigvals_desc(A) -> np.ndarray:
    return sym_eig(A).eigenvalues


class SPDFactor:
    """Cholesky factor of A + shift*I, reusable for many right-hand sides."""

    def __init__(self, A, shift: float = 0.0):
        if shift < 0:
            raise LinalgError(f"shift must be nonnegative, got {shift}")
        A = as_symmetric(A)
        n = A.shape[0]
        M = A + shift * np.eye(n)
        self.dim = n
        self.jittered = False
        try:
            self._cf = sla.cho_factor(M, lower=True, check_finite=True)
        except np.linalg.LinAlgError:
            jitter = 1e-12 * max(np.trace(M), 0.0) / n
            try:
                if jitter <= 0.0:
                    raise np.linalg.LinAlgError("zero trace")
                self._cf = sla.cho_factor(M + jitter * np.eye(n), lower=True)
                self.jittered = True
            except np.linalg.LinAlgError as exc:
                raise LinalgError(f"singular system in Cholesky: {exc}") from None
            # a pivot carried by the jitter alone means A + shift*I is singular
            piv = np.diag(self._cf[0]) ** 2
            bad = np.flatnonzero(piv <= 2.0 * jitter)
            if bad.size:
                raise LinalgError(f"singular system: Cholesky pivot {int(bad[0])} is {piv[bad[0]]:.3e} "
                                  f"(only the jitter {jitter:.3e} keeps it positive)")

    def solve(self, B) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        if B.shape[0] != self.dim:
            raise LinalgError(f"rhs has leading dim {B.shape[0]}, expected {self.dim}")
        return sla.cho_solve(self._cf, B, check_finite=False)


def spd_solve(A, shift: float, B) -> np.ndarray:
    """Solve (A + shift*I) X = B for PSD A."""
    return SPDFactor(A, shift).solve(B)


def spd_inv_sqrt(A, shift: float) -> np.ndarray:
    """Return (A + shift*I)^{-1/2}, symmetric."""
    if not shift > 0:
        raise LinalgError(f"shift must be positive, got {shift}")
    spec = sym_eig(A)
    vals = spec.eigenvalues + shift
    if vals.min() <= 0:
        raise LinalgError("A + shift*I is not positive definite")
    V = spec.eigenvectors
    M = (V / np.sqrt(vals)) @ V.T
    return 0.5 * (M + M.T)


def spd_sqrt(A, shift: float = 0.0) -> np.ndarray:
    spec = sym_eig(A)
    vals = np.clip(spec.eigenvalues + shift, 0.0, None)
    V = spec.eigenvectors
    M = (V * np.sqrt(vals)) @ V.T
    return 0.5 * (M + M.T)


def weighted_norm(v, A, shift: float = 0.0) -> float:
    """sqrt(v^T (A + shift*I) v)."""
    v = np.asarray(v, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.shape != (v.size, v.size):
        raise LinalgError(f"dimension mismatch: v has {v.size}, A is {A.shape}")
    q = float(v @ A @ v) + shift * float(v @ v)
    if q < -PSD_TOL * max(1.0, float(v @ v)):
        raise LinalgError(f"quadratic form is negative ({q:.3e}); matrix is not PSD")
    return float(np.sqrt(max(q, 0.0)))


def pinv_psd(A, rel_cutoff: float = 1e-12) -> np.ndarray:
    """Pseudo-inverse of a PSD matrix via its spectrum."""
    spec = sym_eig(A)
    vals = spec.eigenvalues
    top = vals.max() if vals.size else 0.0
    keep = vals > rel_cutoff * top if top > 0 else np.zeros_like(vals, dtype=bool)
    inv = np.zeros_like(vals)
    inv[keep] = 1.0 / vals[keep]
    V = spec.eigenvectors
    M = (V * inv) @ V.T
    return 0.5 * (M + M.T)
