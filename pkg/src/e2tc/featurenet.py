"""Representation network phi_theta and its optional decoder psi.

phi(x) = act(W2 @ act(W1 @ x + b1)), with act the exact-erf GELU.  The
flattened parameter vector ``theta`` is laid out as ``[W1 (row-major), b1,
W2 (row-major)]``; there is no output bias.  The decoder is an MLP from the
feature space to the reconstruction space with GELU on hidden layers and a
linear output layer (kernel + bias per layer).
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .linalg import LinalgError

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
PARAM_MAGIC = b"E2TCPARM"
PARAM_VERSION = 1
HEADROOM = 1.1
POWER_ITERS = 50


def gelu(x):
    x = np.asarray(x, dtype=float)
    return x * ndtr(x)


def gelu_prime(x):
    x = np.asarray(x, dtype=float)
    return ndtr(x) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def _identity(x):
    return np.asarray(x, dtype=float)


def _ones_like(x):
    return np.ones_like(np.asarray(x, dtype=float))


_ACTIVATIONS = {
    "gelu": (gelu, gelu_prime),
    "identity": (_identity, _ones_like),
}


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_dim: int
    feature_dim: int
    decoder_dims: tuple = ()
    activation: str = "gelu"

    def __post_init__(self):
        object.__setattr__(self, "decoder_dims", tuple(int(v) for v in self.decoder_dims))
        for name in ("input_dim", "hidden_dim", "feature_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if any(v < 1 for v in self.decoder_dims):
            raise ValueError("decoder dims must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_theta(self) -> int:
        return self.hidden_dim * self.input_dim + self.hidden_dim + self.feature_dim * self.hidden_dim

    @property
    def decoder_layers(self) -> list:
        dims = (self.feature_dim,) + self.decoder_dims
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_decoder(self) -> int:
        return sum(o * i + o for i, o in self.decoder_layers)

    @property
    def reconstruction_dim(self) -> int:
        return self.decoder_dims[-1] if self.decoder_dims else 0


def unpack(arch: Architecture, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (arch.n_theta,):
        raise LinalgError(f"theta has shape {theta.shape}, architecture needs ({arch.n_theta},)")
    dh, di, d = arch.hidden_dim, arch.input_dim, arch.feature_dim
    i = dh * di
    W1 = theta[:i].reshape(dh, di)
    b1 = theta[i:i + dh]
    W2 = theta[i + dh:].reshape(d, dh)
    return W1, b1, W2


def pack(W1, b1, W2) -> np.ndarray:
    return np.concatenate([np.ravel(W1), np.ravel(b1), np.ravel(W2)]).astype(float)


def _check_x(arch, X):
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != arch.input_dim:
        raise LinalgError(f"input has dim {X.shape[-1]}, expected {arch.input_dim}")
    return X


def forward(arch: Architecture, theta, x) -> np.ndarray:
    """phi_theta(x) for a single input vector or a batch of row vectors."""
    x = _check_x(arch, x)
    act, _ = _ACTIVATIONS[arch.activation]
    W1, b1, W2 = unpack(arch, theta)
    h = act(x @ W1.T + b1)
    return act(h @ W2.T)


def forward_cache(arch: Architecture, theta, X):
    """Batch forward that keeps pre-activations for backprop."""
    X = _check_x(arch, np.atleast_2d(X))
    act, _ = _ACTIVATIONS[arch.activation]
    W1, b1, W2 = unpack(arch, theta)
    z1 = X @ W1.T + b1
    h = act(z1)
    z2 = h @ W2.T
    return {"X": X, "z1": z1, "h": h, "z2": z2, "phi": act(z2)}


def backward(arch: Architecture, theta, cache, G) -> np.ndarray:
    """Given dL/dphi for every row of the batch, return dL/dtheta (summed)."""
    _, dact = _ACTIVATIONS[arch.activation]
    _, _, W2 = unpack(arch, theta)
    g2 = np.atleast_2d(G) * dact(cache["z2"])
    dW2 = g2.T @ cache["h"]
    g1 = (g2 @ W2) * dact(cache["z1"])
    dW1 = g1.T @ cache["X"]
    db1 = g1.sum(axis=0)
    return pack(dW1, db1, dW2)


def jacobian_t_apply(arch: Architecture, theta, x, w) -> np.ndarray:
    """J_theta(x)^T w, the gradient of w^T phi_theta(x) in theta."""
    x = _check_x(arch, x)
    w = np.asarray(w, dtype=float)
    if x.ndim != 1 or w.shape != (arch.feature_dim,):
        raise LinalgError("jacobian_t_apply expects a single input and w in R^d")
    cache = forward_cache(arch, theta, x[None, :])
    return backward(arch, theta, cache, w[None, :])


def jacobian(arch: Architecture, theta, x) -> np.ndarray:
    """Full d x d0 Jacobian of phi_theta at x."""
    x = _check_x(arch, x)
    cache = forward_cache(arch, theta, x[None, :])
    rows = [backward(arch, theta, cache, e[None, :]) for e in np.eye(arch.feature_dim)]
    return np.vstack(rows)


def project_ball(v, B: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n <= B:
        return v
    return v * (B / n)


def init_params(arch: Architecture, seed) -> tuple:
    """Kernels ~ N(0, 1/fan_in), zero biases, w ~ N(0, 1/d)."""
    rng = np.random.default_rng(seed)
    W1 = rng.normal(0.0, 1.0 / np.sqrt(arch.input_dim), size=(arch.hidden_dim, arch.input_dim))
    b1 = np.zeros(arch.hidden_dim)
    W2 = rng.normal(0.0, 1.0 / np.sqrt(arch.hidden_dim), size=(arch.feature_dim, arch.hidden_dim))
    w = rng.normal(0.0, 1.0 / np.sqrt(arch.feature_dim), size=arch.feature_dim)
    return pack(W1, b1, W2), w


def init_decoder(arch: Architecture, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    parts = []
    for fan_in, fan_out in arch.decoder_layers:
        parts.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=fan_out * fan_in))
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts) if parts else np.zeros(0)


def _decoder_unpack(arch, theta_tilde):
    theta_tilde = np.asarray(theta_tilde, dtype=float)
    if theta_tilde.shape != (arch.n_decoder,):
        raise LinalgError(f"decoder params have shape {theta_tilde.shape}, expected ({arch.n_decoder},)")
    layers, i = [], 0
    for fan_in, fan_out in arch.decoder_layers:
        K = theta_tilde[i:i + fan_in * fan_out].reshape(fan_out, fan_in)
        i += fan_in * fan_out
        c = theta_tilde[i:i + fan_out]
        i += fan_out
        layers.append((K, c))
    return layers


def decoder_forward(arch: Architecture, theta_tilde, phi, return_cache: bool = False):
    if not arch.decoder_dims:
        raise LinalgError("architecture has no decoder")
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != arch.feature_dim:
        raise LinalgError(f"decoder input has dim {phi.shape[-1]}, expected {arch.feature_dim}")
    layers = _decoder_unpack(arch, theta_tilde)
    acts, pre = [phi], []
    a = phi
    for k, (K, c) in enumerate(layers):
        z = a @ K.T + c
        pre.append(z)
        a = z if k == len(layers) - 1 else gelu(z)
        acts.append(a)
    if return_cache:
        return a, (acts, pre, layers)
    return a


def decoder_backward(cache, G):
    """Backprop dL/d(reconstruction) through the decoder.

    Returns (dL/dtheta_tilde, dL/dphi) for a batch of rows.
    """
    acts, pre, layers = cache
    g = np.atleast_2d(G)
    grads = []
    for k in range(len(layers) - 1, -1, -1):
        K, _ = layers[k]
        if k != len(layers) - 1:
            g = g * gelu_prime(pre[k])
        a_in = np.atleast_2d(acts[k])
        grads.append((np.ravel(g.T @ a_in), g.sum(axis=0)))
        g = g @ K
    flat = []
    for dK, dc in reversed(grads):
        flat.extend([dK, dc])
    return np.concatenate(flat), g


@dataclass(frozen=True)
class RegularityEstimate:
    B_phi: float
    L_phi: float
    B_eta: float
    B_w: float

    @property
    def D_w(self) -> float:
        return (4 * self.B_w * self.B_phi + 2 * self.B_eta) * self.B_phi

    @property
    def D_theta(self) -> float:
        return (4 * self.B_w * self.B_phi + 2 * self.B_eta) * self.L_phi * self.B_w

    @property
    def B_r(self) -> float:
        return self.B_w * self.B_phi + self.B_eta


def spectral_norm_jacobian(arch: Architecture, theta, x, seed: int = 0) -> float:
    J = jacobian(arch, theta, x)
    v = np.random.default_rng(seed).normal(size=J.shape[1])
    v /= np.linalg.norm(v)
    s = 0.0
    for _ in range(POWER_ITERS):
        u = J.T @ (J @ v)
        n = float(np.linalg.norm(u))
        if n == 0.0:
            return 0.0
        v = u / n
        s = n
    return float(np.sqrt(s))


def estimate_regularity(arch: Architecture, theta, sample_points, B_w: float, B_eta: float,
                        seed: int = 0) -> RegularityEstimate:
    X = np.atleast_2d(np.asarray(sample_points, dtype=float))
    if X.size == 0 or X.shape[0] == 0:
        raise ValueError("estimate_regularity needs a nonempty sample")
    phi = forward(arch, theta, X)
    B_phi = float(np.linalg.norm(phi, axis=1).max())
    L_phi = max(spectral_norm_jacobian(arch, theta, x, seed) for x in X)
    return RegularityEstimate(HEADROOM * B_phi, HEADROOM * L_phi, float(B_eta), float(B_w))


# parameter files

def _arch_text(arch: Architecture, role: str) -> str:
    lines = [
        f"role = {role}",
        f"input_dim = {arch.input_dim}",
        f"hidden_dim = {arch.hidden_dim}",
        f"feature_dim = {arch.feature_dim}",
        f"decoder_dims = {','.join(str(v) for v in arch.decoder_dims)}",
        f"activation = {arch.activation}",
    ]
    return "\n".join(lines) + "\n"


def save_params(path, vec, arch: Architecture, role: str = "theta") -> None:
    """Write a flat float64 vector with a 16-byte header plus an .arch sidecar."""
    path = Path(path)
    vec = np.ascontiguousarray(vec, dtype="<f8")
    header = PARAM_MAGIC + struct.pack("<II", PARAM_VERSION, vec.size)
    path.write_bytes(header + vec.tobytes())
    Path(str(path) + ".arch").write_text(_arch_text(arch, role), newline="\n")


def load_params(path):
    """Return (vector, Architecture, role) from a parameter file and its sidecar."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:8] != PARAM_MAGIC:
        raise ValueError(f"{path}: not a parameter file (bad magic)")
    version, n = struct.unpack("<II", blob[8:16])
    if version != PARAM_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if len(blob) != 16 + 8 * n:
        raise ValueError(f"{path}: length field {n} does not match payload")
    vec = np.frombuffer(blob[16:], dtype="<f8").astype(float)
    meta = {}
    for line in Path(str(path) + ".arch").read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    dec = tuple(int(v) for v in meta.get("decoder_dims", "").split(",") if v)
    arch = Architecture(int(meta["input_dim"]), int(meta["hidden_dim"]), int(meta["feature_dim"]),
                        dec, meta.get("activation", "gelu"))
    return vec, arch, meta.get("role", "theta")


@dataclass(frozen=True)
class ParameterState:
    """Joint weights (w, theta) with their norm-ball radii."""

    w: np.ndarray
    theta: np.ndarray
    B_w: float = np.inf
    B_theta: float = np.inf

    def projected(self) -> "ParameterState":
        return ParameterState(project_ball(self.w, self.B_w), project_ball(self.theta, self.B_theta),
                              self.B_w, self.B_theta)
