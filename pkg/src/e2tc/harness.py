"""Regret accounting, aggregation, CSV output, seeds and run configuration files."""

import configparser
import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .tuning import PowerCurve, fit_power_curve

MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15


class ConfigError(ValueError):
    """Bad or missing configuration; the CLI maps it to exit code 1."""


# regret

@dataclass
class RegretSeries:
    instant: np.ndarray
    cumulative: np.ndarray

    def __len__(self):
        return int(self.instant.size)


def track_regret(trace) -> RegretSeries:
    """Pseudo-regret series from the per-step gaps a run recorded.

    Runs compute the gaps from oracle means (synthetic envs) or from labels
    (classification envs); a trace without them cannot be scored.
    """
    inst = getattr(trace, "regret", None)
    if inst is None:
        raise ValueError("trace has no oracle regret column")
    inst = np.asarray(inst, dtype=float)
    if (inst < -1e-12).any():
        raise ValueError("negative instant regret; the oracle means are inconsistent")
    inst = np.clip(inst, 0.0, None)
    return RegretSeries(inst, np.cumsum(inst))


def regret_from_means(actions, means) -> RegretSeries:
    """Per-step gap max_a mu_a - mu_{A_t} from explicit mean tables (n, K)."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    actions = np.asarray(actions, dtype=int)
    if means.shape[0] != actions.size:
        raise ValueError("one mean row per action is required")
    inst = means.max(axis=1) - means[np.arange(actions.size), actions]
    return RegretSeries(inst, np.cumsum(inst))


def risk_to_regret_bound(epsilon: float, T: int, T1: int, T2: int, K: int, delta: float,
                         B_w: float, B_phi: float) -> float:
    """2 B_w B_phi T delta + 2 B_w B_phi (T1 + T2) + K (T - T1 - T2) sqrt(epsilon)."""
    if T1 + T2 > T:
        raise ValueError("need T1 + T2 <= T")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    c = 2.0 * B_w * B_phi
    return c * T * delta + c * (T1 + T2) + K * (T - T1 - T2) * math.sqrt(epsilon)


@dataclass
class Aggregate:
    mean: np.ndarray
    std: np.ndarray
    n: int
    curve: Optional[PowerCurve] = None

    @property
    def exponent(self) -> Optional[float]:
        return None if self.curve is None else self.curve.alpha


def aggregate_runs(series: Sequence, t2_points: Optional[Sequence] = None) -> Aggregate:
    """Pointwise mean and sample std over seeds.

    ``t2_points`` is an optional list of (T2, suboptimality) pairs; when given,
    the power-curve fit supplies the exponent.
    """
    rows = [np.asarray(getattr(s, "cumulative", s), dtype=float) for s in series]
    if len(rows) < 2:
        raise ValueError("aggregate_runs needs at least two series")
    n = rows[0].size
    if any(r.size != n for r in rows):
        raise ValueError("series lengths differ: " + ", ".join(str(r.size) for r in rows))
    M = np.vstack(rows)
    curve = None
    if t2_points is not None:
        T2s, fs = zip(*t2_points)
        curve = fit_power_curve(T2s, fs)
    return Aggregate(M.mean(axis=0), M.std(axis=0, ddof=1), len(rows), curve)


# CSV

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def emit_csv(records, path, columns: Optional[Sequence[str]] = None) -> Path:
    """Write dict records (or rows with ``columns``) as CSV with 17 significant digits."""
    path = Path(path)
    records = list(records)
    if columns is None:
        if not records:
            raise ValueError("columns are needed to write an empty table")
        columns = list(records[0])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for rec in records:
                vals = [rec[c] for c in columns] if isinstance(rec, dict) else list(rec)
                w.writerow([fmt(v) for v in vals])
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def trace_records(trace):
    cum = np.cumsum(trace.regret)
    for t in range(trace.T):
        yield (t + 1, int(trace.stage[t]), int(trace.action[t]), float(trace.reward[t]),
               float(trace.regret[t]), float(cum[t]))


TRACE_COLUMNS = ("t", "stage", "action", "reward", "instant_regret", "cum_regret")


# seeds

def mix64(z: int) -> int:
    """The splitmix64 output finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, i: int) -> int:
    return (int(master) ^ mix64(i * GOLDEN64)) & MASK64


def run_seeds(master: int, n: int) -> list:
    return [derive_seed(master, i) for i in range(n)]


# workers

def worker_count(flag: Optional[int] = None) -> int:
    env = os.environ.get("E2TC_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"E2TC_WORKERS must be an integer, got {env!r}") from None
        return max(n, 1)
    return max(int(flag or 1), 1)


def parallel_map(fn, items, workers: int = 1):
    """Ordered map; a process pool when workers > 1."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# config files

REQUIRED = object()

SCHEMA = {
    "env": {
        "kind": ("str", "synthetic"),
        "input_dim": ("int", 4),
        "hidden_dim": ("int", 16),
        "feature_dim": ("int", 8),
        "activation": ("str", "gelu"),
        "K": ("int", 3),
        "B_eta": ("float", 0.1),
        "seed": ("int", 0),
        "support_size": ("int", 0),
        "eps_theta": ("float", 0.0),
        "w_norm": ("float", 1.0),
        "input_scale": ("float", 1.0),
        "theta0": ("str", ""),
        "data": ("str", ""),
        "n_items": ("int", 300),
        "item_dim": ("int", 16),
        "item_noise": ("float", 0.3),
    },
    "algo": {
        "algorithm": ("str", "e2tc"),
        "T": ("int", 1000),
        "T1": ("int", 100),
        "T2": ("int", 200),
        "lambda": ("float", 1.0),
        "zeta_w": ("float", 0.01),
        "zeta_theta": ("float", 0.01),
        "precondition": ("bool", True),
        "variant": ("str", "pretrained"),
        "regime": ("str", "data-poor"),
        "seeds": ("int", 1),
        "master_seed": ("int", 0),
        "workers": ("int", 1),
        "c1": ("float", 0.0),
        "c2": ("float", 0.0),
        "c3": ("float", 0.0),
        "decoder_dims": ("ints", ()),
        "batch_size": ("int", 32),
        "epochs": ("int", 50),
        "lr": ("float", 0.01),
        "grid_zeta_w": ("floats", ()),
        "grid_zeta_theta": ("floats", ()),
        "grid_lambda": ("floats", ()),
        "t2_grid": ("ints", (250, 500, 1000, 2000)),
        "explore_cost": ("float", 0.9),
        "delta": ("float", 0.05),
        "B_w": ("float", 1.0),
        "B_phi": ("float", 1.0),
        "eps0": ("float", 0.0),
        "eps_c": ("float", 0.5),
        "D": ("float", 1.0),
        "B_omega": ("float", 1.0),
        "c_zeta": ("float", 0.1),
    },
    "output": {
        "dir": ("str", REQUIRED),
        "prefix": ("str", "run"),
        "plot": ("bool", False),
        "log_x": ("bool", False),
        "log_y": ("bool", False),
    },
}


def _convert(kind, raw, where):
    raw = raw.strip()
    try:
        if kind == "str":
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        parts = [p for p in (s.strip() for s in raw.split(",")) if p]
        if kind == "ints":
            return tuple(int(p) for p in parts)
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind}") from None


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse a [env] [algo] [output] key = value file into nested dicts."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = [s for s in cp.sections() if s not in SCHEMA]
    if unknown:
        raise ConfigError(f"{source}: unknown section [{unknown[0]}]")
    out = {}
    for sec, keys in SCHEMA.items():
        given = dict(cp.items(sec)) if cp.has_section(sec) else {}
        bad = [k for k in given if k not in keys]
        if bad:
            raise ConfigError(f"{source}: unknown key {bad[0]!r} in [{sec}]")
        vals = {}
        for k, (kind, default) in keys.items():
            if k in given:
                vals[k] = _convert(kind, given[k], f"{source} [{sec}] {k}")
            elif default is REQUIRED:
                raise ConfigError(f"{source}: missing required key {k!r} in [{sec}]")
            else:
                vals[k] = default
        out[sec] = vals
    return out


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(encoding="utf-8"), str(path))
    out_dir = Path(cfg["output"]["dir"])
    if not out_dir.is_absolute():
        cfg["output"]["dir"] = str(path.parent / out_dir)
    for key in ("theta0", "data"):
        p = cfg["env"][key]
        if p and not Path(p).is_absolute():
            cfg["env"][key] = str(path.parent / p)
    return cfg
