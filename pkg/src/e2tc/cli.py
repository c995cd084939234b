"""Command line: pretrain, run, sweep, tune-t2, diag, report.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
"""

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import harness as H
from .algorithm import E2tcConfig, run_e2tc, run_greedy, run_weak_training
from .env import (ClassificationEnv, EnvError, load_tabular_dataset, make_block_classification,
                  make_synthetic_env, misspecification_eps0, sample_contexts, true_covariance)
from .featurenet import Architecture, estimate_regularity, forward, load_params, save_params
from .linalg import LinalgError, eigvals_desc
from .pretrain import PretrainConfig, PretrainData, classification_pretrain_data, pretrain, spectrum_report
from .ridge import bound_misspec, bound_noise, eps_delta, ridge_base_bounds
from .sgd import containment_condition, highp_sgd_bound, suboptimality_gap, uniform_azuma_bound
from .tuning import TheoryConstants, fit_power_curve, grid_sweep, select_t2, theory_hyperparams


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# environment construction

def build_arch(env_cfg) -> Architecture:
    return Architecture(env_cfg["input_dim"], env_cfg["hidden_dim"], env_cfg["feature_dim"],
                        activation=env_cfg["activation"])


def build_env(cfg):
    e = cfg["env"]
    kind = e["kind"]
    if kind == "synthetic":
        arch = build_arch(e)
        env = make_synthetic_env(arch, e["K"], e["B_eta"], e["seed"], e["support_size"] or None,
                                 e["eps_theta"], e["w_norm"], e["input_scale"])
        if e["theta0"]:
            theta0, a0, _ = load_params(e["theta0"])
            if a0.n_theta != arch.n_theta:
                raise H.ConfigError(f"{e['theta0']}: parameter length does not match [env] architecture")
            env.theta0 = theta0
        return env
    if kind == "classification":
        if not e["theta0"]:
            raise H.ConfigError("[env] theta0 is required for kind = classification")
        theta0, arch, _ = load_params(e["theta0"])
        items, labels = make_block_classification(e["n_items"], e["K"], e["item_dim"], e["item_noise"], e["seed"])
        if arch.input_dim != e["K"] * e["item_dim"]:
            raise H.ConfigError("theta0 input dim must equal K * item_dim")
        return ClassificationEnv(items, labels, e["K"], theta0=theta0, arch=arch)
    raise H.ConfigError(f"[env] kind must be synthetic or classification, got {kind!r}")


def run_one(cfg, env, seed: int):
    a = cfg["algo"]
    algo = a["algorithm"]
    if algo == "e2tc":
        c = E2tcConfig(a["T"], a["T1"], a["T2"], a["lambda"], a["zeta_w"], a["zeta_theta"],
                       a["precondition"], seed)
        return run_e2tc(env, c)
    if algo == "weak":
        c = E2tcConfig(a["T"], a["T1"], 0, a["lambda"], precondition=False, seed=seed)
        regime = None if a["regime"] in ("", "none") else a["regime"]
        return run_weak_training(env, c, regime)
    if algo == "greedy":
        return run_greedy(env, a["variant"], (a["zeta_w"], a["zeta_theta"]), a["T"], seed)
    raise H.ConfigError(f"[algo] algorithm must be e2tc, weak or greedy, got {algo!r}")


def check_algo(cfg):
    a = cfg["algo"]
    if a["algorithm"] not in ("e2tc", "weak", "greedy"):
        raise H.ConfigError(f"[algo] algorithm must be e2tc, weak or greedy, got {a['algorithm']!r}")
    if a["seeds"] < 1:
        raise H.ConfigError("[algo] seeds must be >= 1")
    try:
        if a["algorithm"] == "e2tc":
            E2tcConfig(a["T"], a["T1"], a["T2"], a["lambda"], a["zeta_w"], a["zeta_theta"], a["precondition"])
        elif a["algorithm"] == "weak":
            E2tcConfig(a["T"], a["T1"], 0, a["lambda"], precondition=False)
    except ValueError as exc:
        raise H.ConfigError(f"[algo] {exc}") from None


@dataclass(frozen=True)
class _RunJob:
    cfg: dict

    def __call__(self, seed):
        return run_one(self.cfg, build_env(self.cfg), seed)


# subcommands

def cmd_pretrain(cfg, args):
    e, a, o = cfg["env"], cfg["algo"], cfg["output"]
    out = Path(o["dir"])
    if e["kind"] == "classification":
        items, labels = make_block_classification(e["n_items"], e["K"], e["item_dim"], e["item_noise"], e["seed"])
        data = classification_pretrain_data(items, labels, e["K"])
        arch = Architecture(e["K"] * e["item_dim"], e["hidden_dim"], e["feature_dim"], a["decoder_dims"],
                            e["activation"])
    elif e["kind"] == "tabular":
        if not e["data"]:
            raise H.ConfigError("[env] data is required for kind = tabular")
        ds = load_tabular_dataset(e["data"])
        data = PretrainData(ds.features, ds.targets, ds.features)
        arch = Architecture(ds.features.shape[1], e["hidden_dim"], e["feature_dim"], a["decoder_dims"],
                            e["activation"])
    else:
        raise H.ConfigError("pretrain needs [env] kind = classification or tabular")
    if a["c2"] > 0 and arch.reconstruction_dim != data.I.shape[1]:
        raise H.ConfigError(f"decoder output dim {arch.reconstruction_dim} must equal the item dim "
                            f"{data.I.shape[1]}")
    pc = PretrainConfig(a["c1"], a["c2"], a["c3"], a["batch_size"], a["epochs"], a["lr"],
                        args.seed if args.seed is not None else a["master_seed"])
    res = pretrain(data, arch, pc)
    theta_path = out / f"{o['prefix']}_theta0.bin"
    out.mkdir(parents=True, exist_ok=True)
    save_params(theta_path, res.theta, arch, "theta")
    phi = forward(arch, res.theta, data.X)
    rep = spectrum_report(phi.T @ phi / phi.shape[0])
    H.emit_csv(((k + 1, float(v)) for k, v in enumerate(rep.eigenvalues)),
               out / f"{o['prefix']}_spectrum.csv", ("rank", "eigenvalue"))
    H.emit_csv(((i, t["mse"], t["orth"], t["recon"], t["decay"]) for i, t in enumerate(res.history)),
               out / f"{o['prefix']}_pretrain_loss.csv", ("epoch", "mse", "orth", "recon", "decay"))
    print(f"theta0 -> {theta_path}")
    print(f"k90 = {rep.k90}, positive eigenvalues = {rep.n_positive}")
    return 0


def cmd_run(cfg, args):
    check_algo(cfg)
    a, o = cfg["algo"], cfg["output"]
    master = args.seed if args.seed is not None else a["master_seed"]
    seeds = H.run_seeds(master, a["seeds"])
    build_env(cfg)  # surface env errors before spawning workers
    traces = H.parallel_map(_RunJob(cfg), seeds, H.worker_count(args.workers or a["workers"]))
    out = Path(o["dir"])
    pre = o["prefix"]
    series = []
    for i, tr in enumerate(traces):
        H.emit_csv(H.trace_records(tr), out / f"{pre}_trace_seed{i}.csv", H.TRACE_COLUMNS)
        series.append(H.track_regret(tr))
    if len(series) > 1:
        agg = H.aggregate_runs(series)
        mean, std = agg.mean, agg.std
    else:
        mean, std = series[0].cumulative, np.zeros(len(series[0]))
    H.emit_csv(((t + 1, mean[t], std[t]) for t in range(mean.size)), out / f"{pre}_regret.csv",
               ("t", "cum_regret_mean", "cum_regret_std"))
    if args.plot or o["plot"]:
        from .plotting import emit_svg_lines
        emit_svg_lines({a["algorithm"]: mean}, out / f"{pre}_regret.svg", bands={a["algorithm"]: std},
                       log_x=o["log_x"], log_y=o["log_y"])
    print(f"final cumulative regret: mean {mean[-1]:.6g}, std {std[-1]:.6g} over {len(series)} seed(s)"
          if mean.size else "empty horizon")
    return 0


@dataclass(frozen=True)
class _SweepProtocol:
    cfg: dict

    def __call__(self, env, params, seed):
        cfg = {k: dict(v) for k, v in self.cfg.items()}
        cfg["algo"].update(params)
        return float(np.sum(run_one(cfg, env, seed).regret))


@dataclass(frozen=True)
class _EnvFactory:
    cfg: dict

    def __call__(self, seed):
        return build_env(self.cfg)


def cmd_sweep(cfg, args):
    check_algo(cfg)
    a, o = cfg["algo"], cfg["output"]
    grid = {}
    for key, name in (("grid_zeta_w", "zeta_w"), ("grid_zeta_theta", "zeta_theta"), ("grid_lambda", "lambda")):
        grid[name] = list(a[key]) if a[key] else [a[name]]
    master = args.seed if args.seed is not None else a["master_seed"]
    seeds = H.run_seeds(master, a["seeds"])
    workers = H.worker_count(args.workers or a["workers"])
    mapper = (lambda f, xs: H.parallel_map(f, xs, workers)) if workers > 1 else map
    table = grid_sweep(_EnvFactory(cfg), grid, _SweepProtocol(cfg), seeds, mapper)
    cols = ("row", "rank", "point") + tuple(grid) + ("seed", "score", "std")
    rows = [("run", "", i) + tuple(p[k] for k in grid) + (s, v, "") for i, p, s, v in table.rows]
    rows += [("aggregate", r, i) + tuple(p[k] for k in grid) + ("", m, sd) for r, i, p, m, sd in table.ranking]
    path = H.emit_csv(rows, Path(o["dir"]) / f"{o['prefix']}_sweep.csv", cols)
    best = table.ranking[0]
    print(f"best point {best[2]} mean final regret {best[3]:.6g} -> {path}")
    return 0


def cmd_tune_t2(cfg, args):
    e, a, o = cfg["env"], cfg["algo"], cfg["output"]
    if e["kind"] != "synthetic" or not e["support_size"]:
        raise H.ConfigError("tune-t2 needs a finite-support synthetic env ([env] support_size > 0)")
    if len(a["t2_grid"]) < 4:
        raise H.ConfigError("[algo] t2_grid needs at least 4 values")
    env = build_env(cfg)
    master = args.seed if args.seed is not None else a["master_seed"]
    seeds = H.run_seeds(master, a["seeds"])
    rows = []
    for T2 in a["t2_grid"]:
        gaps = []
        for s in seeds:
            c = E2tcConfig(a["T1"] + T2, a["T1"], T2, a["lambda"], a["zeta_w"], a["zeta_theta"],
                           a["precondition"], s)
            tr = run_e2tc(env, c)
            gaps.append(suboptimality_gap(env, tr.w_bar, tr.theta_bar))
        rows.append((T2, float(np.mean(gaps)), float(np.std(gaps, ddof=1)) if len(gaps) > 1 else 0.0))
    curve = fit_power_curve([r[0] for r in rows], [r[1] for r in rows])
    t2_star = select_t2(curve, a["T"], a["T1"], a["explore_cost"])
    out = Path(o["dir"])
    H.emit_csv(rows, out / f"{o['prefix']}_t2_points.csv", ("T2", "gap_mean", "gap_std"))
    H.emit_csv([("a", curve.a), ("b", curve.b), ("c", curve.c), ("alpha", curve.alpha),
                ("rmse", curve.rmse), ("T2_star", t2_star)], out / f"{o['prefix']}_t2_curve.csv",
               ("quantity", "value"))
    print(f"f(T2) = {curve.c:.6g} (T2 + {curve.a:g})^{curve.alpha:.4g} + {curve.b:.6g}; T2* = {t2_star}")
    return 0


def _diag_rows(cfg):
    e, a = cfg["env"], cfg["algo"]
    d = e["feature_dim"]
    T1, T2, lam, delta = a["T1"], a["T2"], a["lambda"], a["delta"]
    B_w, B_phi, eps0 = a["B_w"], a["B_phi"], a["eps0"]
    rows = []
    add = lambda q, v, ok="": rows.append((q, v, ok))  # noqa: E731
    if e["kind"] == "synthetic" and e["support_size"]:
        env = build_env(cfg)
        theta0 = env.theta0
        eigs = eigvals_desc(true_covariance(env, theta0))
        eps0 = misspecification_eps0(env, theta0)
        X, _ = sample_contexts(env, np.random.default_rng(a["master_seed"]), 64)
        reg = estimate_regularity(env.arch, theta0, X.reshape(-1, X.shape[-1]), B_w, env.B_eta,
                                  a["master_seed"])
        B_phi = reg.B_phi
        add("eps0_measured", eps0)
        add("B_phi_estimated", B_phi)
        add("D_w_estimated", reg.D_w)
        add("D_theta_estimated", reg.D_theta)
    else:
        eigs = np.full(d, B_phi ** 2 / d)
    add("eps_delta", eps_delta(B_w, B_phi, T1, delta))
    add("bound_misspec", bound_misspec(d, eps0, B_w, B_phi, T1, delta))
    add("bound_noise", bound_noise(d, T1, delta))
    rb = ridge_base_bounds(eigs, lam, T1, delta, B_w, B_phi, eps0, B_eta=e["B_eta"])
    ok = not rb.warnings
    for q in ("rho", "b_lambda", "delta_s", "delta_f", "eps_bs_bound", "eps_vr_bound"):
        add(q, getattr(rb, q), ok)
    add("d1", rb.dims.d1)
    add("d2", rb.dims.d2)
    if T2 >= 1:
        hp = theory_hyperparams(a["eps_c"], eps0, e["eps_theta"], d, T2, delta,
                                TheoryConstants(B_w=B_w, D_w=a["D"], c_zeta=a["c_zeta"], B_phi=B_phi,
                                                T1=T1 if T1 > 0 else None))
        add("delta_eps", hp.delta_eps)
        add("theory_zeta", hp.zeta)
        add("theory_lambda", hp.lam, hp.small_eps_ok)
        add("T1_floor", hp.T1_floor, T1 >= hp.T1_floor)
        add("small_zeta_lhs", hp.small_zeta_lhs, hp.small_zeta_ok)
        okc, lhs = containment_condition(a["zeta_w"], a["D"], T2, delta, hp.delta_eps, a["B_omega"])
        add("containment_lhs", lhs, okc)
        add("uniform_azuma", uniform_azuma_bound(a["B_omega"], T2, delta))
        add("highp_sgd_bound", highp_sgd_bound(a["eps_c"] ** 2, a["zeta_w"], T2, a["D"], a["B_omega"], delta))
    return rows


def cmd_diag(cfg, args):
    o = cfg["output"]
    rows = _diag_rows(cfg)
    path = H.emit_csv(rows, Path(o["dir"]) / f"{o['prefix']}_diag.csv", ("quantity", "value", "feasible"))
    print(f"{len(rows)} diagnostics -> {path}")
    return 0


def cmd_report(args):
    src = Path(args.dir)
    if not src.is_dir():
        raise H.ConfigError(f"report directory not found: {src}")
    groups = {}
    for p in sorted(src.glob("*_trace_seed*.csv")):
        groups.setdefault(p.name.rsplit("_trace_seed", 1)[0], []).append(p)
    if not groups:
        raise H.ConfigError(f"{src}: no *_trace_seed*.csv files")
    means, stds, cols, n = {}, {}, ["t"], None
    for name, paths in groups.items():
        runs = []
        for p in paths:
            header, rows = H.read_csv(p)
            if tuple(header) != H.TRACE_COLUMNS:
                raise ValueError(f"{p}: unexpected columns {header}")
            runs.append(np.array([float(r[5]) for r in rows]))
        if len(runs) > 1:
            agg = H.aggregate_runs(runs)
            means[name], stds[name] = agg.mean, agg.std
        else:
            means[name], stds[name] = runs[0], np.zeros(runs[0].size)
        n = means[name].size if n is None else min(n, means[name].size)
        cols += [f"{name}_mean", f"{name}_std"]
    rows = [[t + 1] + [v for g in groups for v in (means[g][t], stds[g][t])] for t in range(n)]
    out = Path(args.out) if args.out else src
    H.emit_csv(rows, out / "report.csv", cols)
    from .plotting import emit_svg_lines
    emit_svg_lines({g: means[g][:n] for g in groups}, out / "report.svg", bands={g: stds[g][:n] for g in groups},
                   log_x=args.log_x, log_y=args.log_y)
    print(f"{len(groups)} group(s) -> {out / 'report.csv'}, {out / 'report.svg'}")
    return 0


COMMANDS = {"pretrain": cmd_pretrain, "run": cmd_run, "sweep": cmd_sweep, "tune-t2": cmd_tune_t2,
            "diag": cmd_diag}


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="e2tc", description="Explore-twice-then-commit bandit experiments.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="config file with [env] [algo] [output] sections")
        s.add_argument("--seed", type=int, default=None, help="override [algo] master_seed")
        s.add_argument("--workers", type=int, default=None, help="parallel seed workers")
        if name == "run":
            s.add_argument("--plot", action="store_true", help="also write an SVG regret plot")
    r = sub.add_parser("report")
    r.add_argument("dir")
    r.add_argument("--out", default=None)
    r.add_argument("--log-x", action="store_true")
    r.add_argument("--log-y", action="store_true")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if args.command is None:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        return 1
    try:
        if args.command == "report":
            return cmd_report(args)
        cfg = H.load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except H.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (EnvError, LinalgError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
