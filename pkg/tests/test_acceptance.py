"""Acceptance criteria 1-11.

Each test prints one ``criterion N PASS|FAIL`` line (outside pytest's capture)
and then asserts the same verdict, so a red criterion stays red.
"""

import hashlib
import math
import time

import numpy as np

from conftest import central_diff, random_spd, theta_at_eps0
from e2tc.algorithm import E2tcConfig, run_e2tc, run_greedy, run_weak_training
from e2tc.cli import main as cli_main
from e2tc.env import (make_block_classification, make_synthetic_env, mean_reward, sample_contexts)
from e2tc.featurenet import Architecture, ParameterState, forward, init_decoder, init_params
from e2tc.linalg import spd_inv_sqrt
from e2tc.pretrain import PretrainConfig, batch_loss, classification_pretrain_data, pretrain, spectrum_report
from e2tc.ridge import RegularizedCovariance, oracle_excess_decomposition, second_moment_bound
from e2tc.sgd import (SgdConfig, grad_theta, grad_w, largest_contained_rate, projected_sgd, sgd_step,
                      suboptimality_gap, uniform_azuma_bound)
from e2tc.tuning import fit_power_curve

ARCH = Architecture(4, 16, 8)


def verdict(capsys, n, ok, elapsed, limit, detail):
    ok = bool(ok) and elapsed < limit
    with capsys.disabled():
        print(f"\ncriterion {n} {'PASS' if ok else 'FAIL'}: {detail} ({elapsed:.1f} s, limit {limit} s)")
    assert ok, detail


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def test_criterion_01_gradients(capsys):
    t0 = time.perf_counter()
    r = np.random.default_rng(1)
    worst = 0.0
    for k in range(100):
        d_in, d_h, d = (int(v) for v in r.integers(1, 13, 3))
        dec = (int(r.integers(1, 13)), int(r.integers(1, 13)))
        arch = Architecture(d_in, d_h, d, decoder_dims=dec)
        theta, w = init_params(arch, r)
        tt = init_decoder(arch, r)
        x, rew = r.normal(size=d_in), float(r.normal())
        worst = max(worst, _rel(grad_w(arch, w, theta, x, rew),
                                central_diff(lambda v: (v @ forward(arch, theta, x) - rew) ** 2, w)))
        worst = max(worst, _rel(grad_theta(arch, w, theta, x, rew),
                                central_diff(lambda v: (w @ forward(arch, v, x) - rew) ** 2, theta)))
        B = int(r.integers(1, 7))
        X, rr, I = r.normal(size=(B, d_in)), r.normal(size=B), r.normal(size=(B, dec[-1]))
        cfg = PretrainConfig(*r.uniform(0, 2, 3))
        _, gw, gt, gtt = batch_loss(arch, w, theta, tt, X, rr, I, cfg)
        f = lambda a, b, c: batch_loss(arch, a, b, c, X, rr, I, cfg)[0]  # noqa: E731
        worst = max(worst, _rel(gw, central_diff(lambda v: f(v, theta, tt), w)),
                    _rel(gt, central_diff(lambda v: f(w, v, tt), theta)),
                    _rel(gtt, central_diff(lambda v: f(w, theta, v), tt)))
    verdict(capsys, 1, worst <= 1e-5, time.perf_counter() - t0, 10,
            f"worst relative FD error {worst:.2e} over 100 configs (<= 1e-5)")


def test_criterion_02_preconditioning(capsys):
    t0 = time.perf_counter()
    r = np.random.default_rng(2)
    arch = Architecture(3, 6, 5)
    worst_step, worst_acc = 0.0, 0.0
    for _ in range(20):
        theta, w = init_params(arch, r)
        lam = float(r.uniform(0.05, 1.0))
        S0 = random_spd(r, 5) / 5
        cov = RegularizedCovariance(S0, lam)
        Sm = spd_inv_sqrt(S0, lam)  # (S0 + lam I)^{-1/2}
        cfg = SgdConfig(0.01, 0.01, 1000, precondition=True)
        X, R = r.normal(size=(1000, 3)), r.normal(size=1000)
        st = ParameterState(w.copy(), theta.copy())
        v, th = np.linalg.solve(Sm, w), theta.copy()  # v = S^{1/2} w
        for x, rew in zip(X, R):
            nxt, _, _ = sgd_step(arch, st, x, rew, cfg, cov)
            # vanilla step in transformed coordinates from the same point
            wv = np.linalg.solve(Sm, st.w)
            psi = Sm @ forward(arch, st.theta, x)
            one = Sm @ (wv - cfg.zeta_w * 2 * (wv @ psi - rew) * psi)
            worst_step = max(worst_step, float(np.abs(one - nxt.w).max()))
            # independent transformed trajectory
            psi = Sm @ forward(arch, th, x)
            g_t = grad_theta(arch, Sm @ v, th, x, rew)
            v = v - cfg.zeta_w * 2 * (v @ psi - rew) * psi
            th = th - cfg.zeta_theta * g_t
            st = nxt
        worst_acc = max(worst_acc, float(np.abs(Sm @ v - st.w).max()), float(np.abs(th - st.theta).max()))
    verdict(capsys, 2, worst_step <= 1e-10 and worst_acc <= 1e-8, time.perf_counter() - t0, 5,
            f"max per-step diff {worst_step:.1e} (<= 1e-10), accumulated {worst_acc:.1e} (<= 1e-8)")


def test_criterion_03_ridge_decomposition(capsys):
    t0 = time.perf_counter()
    r = np.random.default_rng(3)
    bad, vr_nonzero, slack = 0, 0, np.inf
    for k in range(50):
        d = int(r.integers(1, 9))
        arch = Architecture(int(r.integers(1, 6)), int(r.integers(2, 10)), d)
        env = make_synthetic_env(arch, 2, 0.2, 300 + k, support_size=int(r.integers(2, 17)),
                                 eps_theta=float(r.uniform(0, 0.5)))
        n = int(r.integers(5, 200))
        X, _ = sample_contexts(env, r, n)
        X = X[:, 0]
        mu = mean_reward(env, X)
        lam = float(r.uniform(0.01, 2.0))
        noisy = oracle_excess_decomposition(env, env.theta0, lam, X, mu + r.uniform(-0.2, 0.2, n))
        clean = oracle_excess_decomposition(env, env.theta0, lam, X, mu)
        for dec in (noisy, clean):
            bad += not dec.holds
            slack = min(slack, 3 * (dec.eps_rg + dec.eps_bs + dec.eps_vr) + 1e-9 - dec.lhs)
        vr_nonzero += clean.eps_vr != 0.0
    verdict(capsys, 3, bad == 0 and vr_nonzero == 0, time.perf_counter() - t0, 10,
            f"{bad} decomposition violations in 100 fits (min slack {slack:.2e}); "
            f"noise-free eps_vr nonzero in {vr_nonzero}/50")


def test_criterion_04_ridge_consistency(capsys):
    t0 = time.perf_counter()
    means = []
    for T1 in (100, 400, 1600):
        errs = []
        for s in range(20):
            env = make_synthetic_env(ARCH, 2, 0.0, 400 + s, support_size=32)
            tr = run_weak_training(env, E2tcConfig(T1, T1, 0, precondition=False, seed=s), "data-poor")
            assert tr.info["lambda"] == T1 ** -0.5 and tr.info["eps0"] == 0.0
            errs.append(tr.info["w0_err_sq"])
        means.append(float(np.mean(errs)))
    # pilot and recorded run: 1.588e-02, 7.706e-03, 3.878e-03
    ok = means[0] > means[1] > means[2] and means[2] <= 1e-2
    verdict(capsys, 4, ok, time.perf_counter() - t0, 30,
            "mean ||w0 - w*||^2 at T1=100,400,1600: " + ", ".join(f"{m:.3e}" for m in means))


def test_criterion_05_concentration(capsys):
    t0 = time.perf_counter()
    r = np.random.default_rng(5)
    T, delta = 1000, 0.05
    bounds = np.array([uniform_azuma_bound(1.0, t, delta) for t in range(1, T + 1)])
    paths = np.cumsum(r.choice([-1.0, 1.0], size=(1000, T)), axis=1)
    az_viol = int(np.any(np.abs(paths) > bounds, axis=1).sum())
    az_cap = 50 + 3 * math.sqrt(1000 * 0.05 * 0.95)
    n, d, B = 200, 5, 1.0
    sigma = np.eye(d) / d  # uniform on the sphere of radius B
    bnd = second_moment_bound(B, 1.0 / d, n, d, 0.1)
    sm_viol = 0
    for _ in range(1000):
        U = r.normal(size=(n, d))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        sm_viol += np.linalg.norm(U.T @ U / n - sigma, 2) > bnd
    sm_cap = 100 + 3 * math.sqrt(1000 * 0.1 * 0.9)
    verdict(capsys, 5, az_viol <= az_cap and sm_viol <= sm_cap, time.perf_counter() - t0, 60,
            f"Azuma violations {az_viol}/1000 (cap {az_cap:.1f}); second-moment violations "
            f"{sm_viol}/1000 (cap {sm_cap:.1f})")


EPS_C = 0.5


def _basin_grad(x, rng):
    # convex bowl inside the basin, pushed outward beyond it, plus bounded noise
    n = float(np.linalg.norm(x))
    g = x if n <= EPS_C else (EPS_C - 2 * (n - EPS_C)) * x / n
    u = rng.normal(size=x.size)
    return g + 0.5 * u / np.linalg.norm(u)


def test_criterion_06_basin_containment(capsys):
    t0 = time.perf_counter()
    T, delta, eps = 1000, 0.05, 0.2
    zeta = largest_contained_rate(1.0, T, delta, EPS_C ** 2 - eps ** 2, 1.0)
    escapes = 0
    for k in range(200):
        rng = np.random.default_rng(600 + k)
        u = rng.normal(size=3)
        xs = projected_sgd(_basin_grad, eps * u / np.linalg.norm(u), zeta, T, 1.0, rng)
        escapes += bool(np.any(np.linalg.norm(xs, axis=1) >= EPS_C))
    cap = 0.10 * 200 + 3 * math.sqrt(200 * 0.1 * 0.9)
    verdict(capsys, 6, escapes <= cap and zeta > 0, time.perf_counter() - t0, 60,
            f"zeta = {zeta:.3e}; {escapes}/200 trajectories left the basin (cap {cap:.1f})")


def crit7_env(s):
    return make_synthetic_env(ARCH, 3, 0.1, 100 + s, support_size=512, eps_theta=0.1)


def test_criterion_07_suboptimality_scaling(capsys):
    t0 = time.perf_counter()
    T2s = (250, 500, 1000, 2000, 4000, 8000)
    gaps = []
    for T2 in T2s:
        z = 0.1 / math.sqrt(T2)
        vals = []
        for s in range(10):
            env = crit7_env(s)
            tr = run_e2tc(env, E2tcConfig(50 + T2, 50, T2, 0.1, z, z, True, s))
            vals.append(suboptimality_gap(env, tr.w_bar, tr.theta_bar))
        gaps.append(float(np.mean(vals)))
    curve = fit_power_curve(T2s, gaps)
    verdict(capsys, 7, -0.6 <= curve.alpha <= -0.15, time.perf_counter() - t0, 300,
            f"fitted alpha {curve.alpha:.4f} (target [-0.6, -0.15]); gaps "
            + ", ".join(f"{g:.3e}" for g in gaps))


def test_criterion_08_misspecification(capsys):
    t0 = time.perf_counter()
    wins, pairs = 0, []
    for s in range(20):
        env = make_synthetic_env(ARCH, 3, 0.1, 100 + s, support_size=512)
        u = np.random.default_rng(1000 + s).normal(size=ARCH.n_theta)
        u /= np.linalg.norm(u)
        per = []
        for target in (0.05, 0.2):
            th = theta_at_eps0(env, target, u)
            tr = run_weak_training(env, E2tcConfig(3000, 300, 0, precondition=False, seed=s), "data-poor",
                                   theta0=th)
            per.append(float(tr.regret[300:].mean()))
        pairs.append(per)
        wins += per[1] > per[0]
    m = np.mean(pairs, axis=0)
    verdict(capsys, 8, wins >= 15, time.perf_counter() - t0, 120,
            f"regret larger at eps0=0.2 in {wins}/20 seeds (need 15); mean per-step {m[0]:.4f} vs {m[1]:.4f}")


def _k90(c1, seed):
    items, labels = make_block_classification(300, 3, 16, 1.0, seed)
    data = classification_pretrain_data(items, labels, 3)
    arch = Architecture(48, 32, 32)
    res = pretrain(data, arch, PretrainConfig(c1=c1, epochs=50, lr=0.05, seed=seed), track=False)
    phi = forward(arch, res.theta, data.X)
    return spectrum_report(phi.T @ phi / phi.shape[0]).k90


def test_criterion_09_orthogonality(capsys):
    t0 = time.perf_counter()
    pairs = [(_k90(0.0, s), _k90(10.0, s)) for s in range(3)]
    ok = all(b > a for a, b in pairs)
    verdict(capsys, 9, ok, time.perf_counter() - t0, 120,
            "k90 (c1=0 -> c1=10) per seed: " + ", ".join(f"{a} -> {b}" for a, b in pairs))


# rates chosen per variant by a grid search on validation envs 300..305 with run
# seeds 50..55 (disjoint from the seeds below); recorded run: 30.2 (19.8),
# 70.0 (27.3), 41.8 (36.6)
RATES = {"pretrained": (0.03, 0.03), "from-scratch": (0.03, 0.03), "last-layer-only": (0.03, 0.0)}


def test_criterion_10_baseline_ordering(capsys):
    t0 = time.perf_counter()
    final = {v: [] for v in RATES}
    for s in range(20):
        env = crit7_env(s)
        for v, rates in RATES.items():
            final[v].append(float(run_greedy(env, v, rates, 5000, s).cum_regret[-1]))
    m = {v: float(np.mean(x)) for v, x in final.items()}
    sd = {v: float(np.std(x, ddof=1)) for v, x in final.items()}
    inversions, excused = 0, True
    for a, b in (("pretrained", "from-scratch"), ("from-scratch", "last-layer-only")):
        if m[a] > m[b]:
            inversions += 1
            # "within 1 aggregate std": pooled per-seed std of the two variants
            excused &= m[a] - m[b] <= math.sqrt((sd[a] ** 2 + sd[b] ** 2) / 2)
    ok = inversions == 0 or (inversions == 1 and excused)
    verdict(capsys, 10, ok, time.perf_counter() - t0, 300,
            "final regret mean (std): " + ", ".join(f"{v} {m[v]:.1f} ({sd[v]:.1f})" for v in RATES)
            + f"; {inversions} inversion(s)")


def test_criterion_11_determinism(capsys, tmp_path):
    t0 = time.perf_counter()
    cfg = ("[env]\ninput_dim = 4\nhidden_dim = 16\nfeature_dim = 8\nK = 3\nsupport_size = 64\n"
           "eps_theta = 0.1\n[algo]\nT = 1000\nT1 = 100\nT2 = 200\nlambda = 0.1\nseeds = 2\n"
           "[output]\ndir = out\n")
    digests = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        (d / "c.ini").write_text(cfg)
        assert cli_main(["run", str(d / "c.ini"), "--seed", "11"]) == 0
        digests.append([hashlib.sha256(p.read_bytes()).hexdigest()
                        for p in sorted((d / "out").glob("*_trace_seed*.csv"))])
    ok = len(digests[0]) == 2 and digests[0] == digests[1]
    verdict(capsys, 11, ok, time.perf_counter() - t0, 5,
            f"trace SHA-256 equal across reruns: {digests[0] == digests[1]} ({len(digests[0])} files)")
