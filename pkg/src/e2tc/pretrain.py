"""Pre-training of the representation network.

Batch loss (B rows, reconstruction dim p):

    mean squared reward error
    + c1 / B^2 * sum_{i != j} |cos(phi_i, phi_j)|
    + c2 / (p B) * sum_k ||psi(phi_k) - I_k||^2
    + c3 * (||w||^2 + ||theta||^2 + ||theta_tilde||^2)
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .featurenet import (Architecture, backward, decoder_backward, decoder_forward, forward_cache,
                         init_decoder, init_params)
from .linalg import sym_eig

NORM_GUARD = 1e-12


@dataclass(frozen=True)
class PretrainConfig:
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    batch_size: int = 32
    epochs: int = 50
    lr: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass(frozen=True)
class PretrainData:
    X: np.ndarray  # (n, d_in) network inputs
    r: np.ndarray  # (n,) regression targets
    I: Optional[np.ndarray] = None  # (n, p) reconstruction targets

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx) -> "PretrainData":
        return PretrainData(self.X[idx], self.r[idx], None if self.I is None else self.I[idx])


def classification_pretrain_data(items, labels, K: int) -> PretrainData:
    """One row per (item, action) pair with reward 1 for the true class."""
    items = np.atleast_2d(np.asarray(items, dtype=float))
    labels = np.asarray(labels, dtype=int)
    n, p = items.shape
    X = np.zeros((n * K, K * p))
    r = np.zeros(n * K)
    I = np.repeat(items, K, axis=0)
    for a in range(K):
        rows = np.arange(n) * K + a
        X[rows, a * p:(a + 1) * p] = items
        r[rows] = (labels == a).astype(float)
    return PretrainData(X, r, I)


def _cosine_term(phi):
    """Sum_{i != j} |cos| and its gradient with respect to every phi_i."""
    norms = np.linalg.norm(phi, axis=1)
    ok = norms > NORM_GUARD
    U = np.zeros_like(phi)
    U[ok] = phi[ok] / norms[ok, None]
    C = U @ U.T
    np.fill_diagonal(C, 0.0)
    S = np.sign(C)
    S[~ok, :] = 0.0
    S[:, ~ok] = 0.0
    value = float(np.sum(np.abs(C)))
    G = np.zeros_like(phi)
    coef = (S * C).sum(axis=1)
    G[ok] = 2.0 * ((S @ U)[ok] - coef[ok, None] * U[ok]) / norms[ok, None]
    return value, G


def batch_loss(arch: Architecture, w, theta, theta_tilde, X, r, I, config: PretrainConfig,
               return_terms: bool = False):
    """(loss, grad_w, grad_theta, grad_theta_tilde) on one batch."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = np.asarray(r, dtype=float).ravel()
    w = np.asarray(w, dtype=float)
    if X.shape[0] != r.size or X.shape[0] == 0:
        raise ValueError("batch must be nonempty with one reward per row")
    if w.shape != (arch.feature_dim,):
        raise ValueError(f"w has shape {w.shape}, expected ({arch.feature_dim},)")
    B = X.shape[0]
    cache = forward_cache(arch, theta, X)
    phi = cache["phi"]
    res = phi @ w - r
    mse = float(res @ res) / B
    G_phi = (2.0 / B) * res[:, None] * w[None, :]
    g_w = (2.0 / B) * phi.T @ res

    orth = 0.0
    if config.c1 > 0 and B > 1:
        val, G = _cosine_term(phi)
        orth = config.c1 / B ** 2 * val
        G_phi = G_phi + config.c1 / B ** 2 * G

    theta_tilde = np.zeros(0) if theta_tilde is None else np.asarray(theta_tilde, dtype=float)
    g_tt = np.zeros_like(theta_tilde)
    recon = 0.0
    if config.c2 > 0:
        if I is None or not arch.decoder_dims:
            raise ValueError("reconstruction term needs a decoder and reconstruction targets")
        I = np.atleast_2d(np.asarray(I, dtype=float))
        p = arch.reconstruction_dim
        if I.shape != (B, p):
            raise ValueError(f"reconstruction targets have shape {I.shape}, expected {(B, p)}")
        out, dcache = decoder_forward(arch, theta_tilde, phi, return_cache=True)
        diff = out - I
        scale = config.c2 / (p * B)
        recon = scale * float(np.sum(diff ** 2))
        g_tt, g_phi_dec = decoder_backward(dcache, 2.0 * scale * diff)
        G_phi = G_phi + g_phi_dec

    g_theta = backward(arch, theta, cache, G_phi)
    theta = np.asarray(theta, dtype=float)
    decay = 0.0
    if config.c3 > 0:
        decay = config.c3 * float(w @ w + theta @ theta + theta_tilde @ theta_tilde)
        g_w = g_w + 2 * config.c3 * w
        g_theta = g_theta + 2 * config.c3 * theta
        g_tt = g_tt + 2 * config.c3 * theta_tilde
    loss = mse + orth + recon + decay
    if return_terms:
        return loss, g_w, g_theta, g_tt, {"mse": mse, "orth": orth, "recon": recon, "decay": decay}
    return loss, g_w, g_theta, g_tt


@dataclass
class PretrainResult:
    theta: np.ndarray
    w: np.ndarray
    theta_tilde: np.ndarray
    history: list = field(default_factory=list)  # full-data loss terms per epoch (index 0 = init)


def _full_terms(arch, w, theta, tt, data, config):
    return batch_loss(arch, w, theta, tt, data.X, data.r, data.I, config, return_terms=True)[4]


def pretrain(data: PretrainData, arch: Architecture, config: PretrainConfig, init=None,
             track: bool = True) -> PretrainResult:
    """Plain mini-batch gradient descent on the batch loss."""
    if len(data) == 0:
        raise ValueError("pretrain needs a nonempty dataset")
    rng = np.random.default_rng(config.seed)
    if init is None:
        theta, w = init_params(arch, rng)
        tt = init_decoder(arch, rng)
    else:
        theta, w, tt = (np.array(v, dtype=float) for v in init)
    result = PretrainResult(theta, w, tt)
    if track:
        result.history.append(_full_terms(arch, w, theta, tt, data, config))
    n = len(data)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for s in range(0, n, config.batch_size):
            b = data.subset(order[s:s + config.batch_size])
            _, gw, gt, gtt = batch_loss(arch, w, theta, tt, b.X, b.r, b.I, config)
            w = w - config.lr * gw
            theta = theta - config.lr * gt
            if tt.size:
                tt = tt - config.lr * gtt
        if track:
            result.history.append(_full_terms(arch, w, theta, tt, data, config))
    result.theta, result.w, result.theta_tilde = theta, w, tt
    return result


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    hist_counts: np.ndarray
    hist_edges: np.ndarray  # log10 bin edges
    k90: int
    n_positive: int
    warnings: list = field(default_factory=list)


POSITIVE_REL = 1e-12
HIST_BINS = 20


def spectrum_report(cov) -> SpectrumReport:
    """Descending spectrum, k90, and a log10 histogram of the positive part."""
    ev = sym_eig(cov).eigenvalues
    notes = []
    trace = float(np.clip(ev, 0.0, None).sum())
    top = float(ev.max()) if ev.size else 0.0
    if trace <= 0.0 or top <= 0.0:
        msg = "covariance is zero; k90 set to 0"
        warnings.warn(msg)
        notes.append(msg)
        return SpectrumReport(ev, np.zeros(HIST_BINS, dtype=int), np.zeros(HIST_BINS + 1), 0, 0, notes)
    cum = np.cumsum(np.clip(ev, 0.0, None))
    k90 = int(np.argmax(cum >= 0.9 * trace * (1 - 1e-12)) + 1)
    pos = ev[ev > POSITIVE_REL * top]
    logs = np.log10(pos)
    lo, hi = float(logs.min()), float(logs.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(logs, bins=HIST_BINS, range=(lo, hi))
    return SpectrumReport(ev, counts, edges, k90, int(pos.size), notes)
