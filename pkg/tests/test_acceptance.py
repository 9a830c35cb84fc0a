"""End-to-end acceptance criteria, one test per criterion.

Each test prints one PASS line with the measured margin when it
succeeds; a failed assert leaves the criterion marked FAILED by the
runner. Curve-level claims are checked as paired orderings on shared
channel draws, never as absolute values.
"""

import time
from functools import lru_cache

import mesh_oracle
import numpy as np
import pytest
from planted_util import planted_instance

from isacbeam import driver, harness
from isacbeam import metrics as mx
from isacbeam import numerics as nx
from isacbeam import rbf, txbf
from isacbeam import scenario as sc
from isacbeam.conic import Status
from isacbeam.conic.solver import solve_standard
from isacbeam.scenario import db_to_linear

SIZE_GRID = ((2, 1), (2, 2), (2, 4), (4, 1), (4, 2), (4, 4), (8, 1), (8, 2), (8, 4))
FORMULATIONS = (("extended", "I"), ("extended", "II"), ("point", "I"), ("point", "II"))

# RunTraces accumulated by the paired-run criteria, re-checked in 10
TRACES = []


def _run(ch, cfg, target, receiver, seed):
    sol, trace = driver.run_alternating(ch, cfg, target, receiver, seed)
    TRACES.append(trace)
    return sol


def _uv(seed, n):
    rng = np.random.default_rng(seed)
    return np.exp(1j * rng.uniform(0, 2 * np.pi, n))


def _rand_cov(rng, M, power):
    A = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    R = A @ A.conj().T
    return R * (power / np.trace(R).real)


@lru_cache(maxsize=None)
def _collect_instances(target, receiver):
    """Feasible solved instances across the size grid (>= 50)."""
    out = []
    for M, K in SIZE_GRID:
        gdb = 10.0 if K <= M else 0.0
        got = 0
        for attempt in range(14):
            if got == 6:
                break
            cfg = sc.SystemConfig(
                M=M, N=M, K=K, T=32, shadow_std_db=0.0,
                gamma_k=tuple([db_to_linear(gdb)] * K),
            )
            ch = sc.generate_channels(cfg, 1000 * M + 10 * K + attempt)
            v = _uv(100 * M + K + attempt, M)
            sol = txbf.solve_tx(ch, v, cfg, target, receiver)
            if sol.usable and np.isfinite(sol.objective):
                out.append((cfg, ch, v, sol))
                got += 1
    extra = 0
    while len(out) < 50 and extra < 20:
        cfg = sc.SystemConfig(M=4, N=4, K=2, T=32, shadow_std_db=0.0)
        ch = sc.generate_channels(cfg, 5000 + extra)
        v = _uv(600 + extra, 4)
        sol = txbf.solve_tx(ch, v, cfg, target, receiver)
        if sol.usable and np.isfinite(sol.objective):
            out.append((cfg, ch, v, sol))
        extra += 1
    return out


def _relaxed_objective(cfg, ch, v, sol, target):
    W_star, R0_star = sol.relaxed
    tx = mx.TxCovariance(tuple(W_star), R0_star)
    if target == "extended":
        return mx.crb_extended(ch.G, tx, cfg.sigma_R_sq, cfg.T).crb_value
    return mx.crb_point_tx_form(ch, v, tx, cfg.sigma_R_sq, cfg.T).crb_value


def test_01_sdr_tightness_suite():
    t0 = time.perf_counter()
    counts = {}
    worst_gap = 0.0
    for target, receiver in FORMULATIONS:
        instances = _collect_instances(target, receiver)
        assert len(instances) >= 50
        counts[(target, receiver)] = len(instances)
        for cfg, ch, v, sol in instances:
            rel_obj = _relaxed_objective(cfg, ch, v, sol, target)
            gap = abs(sol.objective - rel_obj) / max(abs(rel_obj), 1e-300)
            worst_gap = max(worst_gap, gap)
            assert gap <= 1e-6
            tx = sol.as_covariance()
            assert tx.power <= cfg.P0 * (1 + 1e-6)
            for k in range(cfg.K):
                s = mx.sinr(ch, v, tx, k, receiver, cfg.sigma_k_sq[k])
                assert s >= cfg.gamma_k[k] * (1 - 1e-6)
    elapsed = time.perf_counter() - t0
    assert elapsed < 600.0
    print(
        f"PASS 01 sdr tightness: {counts} instances, worst rel gap "
        f"{worst_gap:.2e}, {elapsed:.0f}s"
    )


def test_02_rank_one_construction_identities():
    checked = 0
    for target, receiver in FORMULATIONS:
        for cfg, ch, v, sol in _collect_instances(target, receiver):
            h_list = [sc.combined_channel(ch, v, k) for k in range(cfg.K)]
            W_star, R0_star = sol.relaxed
            if receiver == "I":
                W_in = txbf.restructure_r0_zero(list(W_star), R0_star, h_list)
                R0_in = np.zeros_like(R0_star)
            else:
                W_in, R0_in = list(W_star), R0_star
            ws, R0_out = txbf.extract_rank_one(W_in, R0_in, h_list)
            p_in = sum(np.trace(W).real for W in W_in) + np.trace(R0_in).real
            p_out = sum(np.linalg.norm(w) ** 2 for w in ws) + np.trace(R0_out).real
            assert abs(p_in - p_out) <= 1e-10 * max(1.0, p_in)
            for k in range(cfg.K):
                scale = max(np.trace(W_in[k]).real, 1e-300)
                resid = W_in[k] - np.outer(ws[k], ws[k].conj())
                assert np.linalg.eigvalsh(nx.hermitize(resid)).min() >= -1e-9 * scale
                q_in = mx._quad(h_list[k], W_in[k])
                q_out = abs(h_list[k].conj() @ ws[k]) ** 2
                assert abs(q_in - q_out) <= 1e-10 * max(q_in, 1e-300)
                checked += 1
    print(f"PASS 02 extraction identities on {checked} beams")


def test_03_extended_metric_phase_invariance():
    rng = np.random.default_rng(7)
    N = M = 3
    G = rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))
    tx = mx.TxCovariance((_rand_cov(rng, M, 1.0),), np.zeros((M, M)))
    vals = []
    for _ in range(20):
        v = np.exp(1j * rng.uniform(0, 2 * np.pi, N))
        F = mx.fim_extended_full(G, v, tx, 0.5, 16)
        vals.append(nx.trace_inverse(F))
    vals = np.array(vals)
    spread = (vals.max() - vals.min()) / vals.mean()
    assert spread <= 1e-8
    print(f"PASS 03 phase invariance: spread {spread:.2e} over 20 patterns")


def test_04_fim_cross_validation():
    rng = np.random.default_rng(11)
    worst_e = worst_p = worst_f = 0.0
    for i in range(100):
        N = M = int(rng.integers(2, 5))
        G = rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))
        tx = mx.TxCovariance((_rand_cov(rng, M, 2.0),), np.zeros((M, M)))
        crb = mx.crb_extended(G, tx, 0.5, 16).crb_value
        full = nx.trace_inverse(mx.fim_extended_full(G, _uv(i, N), tx, 0.5, 16))
        worst_e = max(worst_e, abs(crb - full) / full)
    assert worst_e <= 1e-6
    for i in range(100):
        cfg = sc.SystemConfig(M=3, N=3, K=1, T=16, shadow_std_db=0.0)
        ch = sc.generate_channels(cfg, i)
        v = _uv(i, 3)
        tx = mx.TxCovariance((_rand_cov(rng, 3, 1.0),), np.zeros((3, 3)))
        r_tx = mx.crb_point_tx_form(ch, v, tx, 1e-12, 16)
        if not r_tx.finite:
            continue
        F = mx.fim_point(ch, v, tx, 1e-12, 16)
        inv11 = float(np.linalg.inv(F)[0, 0])
        worst_p = max(worst_p, abs(r_tx.crb_value - inv11) / inv11)
        r_rf = mx.crb_point_reflect_form(ch, v, tx, 1e-12, 16)
        worst_f = max(
            worst_f, abs(r_tx.crb_value - r_rf.crb_value) / r_tx.crb_value
        )
    assert worst_p <= 1e-8
    assert worst_f <= 1e-8
    print(
        f"PASS 04 fim cross-validation: worst rel {worst_e:.2e} (extended), "
        f"{worst_p:.2e} (point vs FIM), {worst_f:.2e} (two point forms)"
    )


def test_05_ls_estimator_efficiency():
    t0 = time.perf_counter()
    rng = np.random.default_rng(21)
    N = M = 3
    T = 32
    G = rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))
    U, _, Vh = np.linalg.svd(G)
    G = U @ np.diag(np.linspace(1.0, 1.4, N)) @ Vh[:N]
    v = _uv(3, N)
    H = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    H = 0.5 * (H + H.T)
    lam = np.array([1.0, 1.3, 0.8])
    F = np.exp(-2j * np.pi * np.outer(np.arange(M), np.arange(T)) / T) / np.sqrt(T)
    X = np.sqrt(T) * (np.sqrt(lam)[:, None] * F)
    Rx = np.diag(lam)
    sigma = 0.01
    crb = mx.crb_extended(
        G, mx.TxCovariance((Rx,), np.zeros((M, M))), sigma, T
    ).crb_value
    PhiG = v[:, None] * G
    Y0 = PhiG.T @ H @ PhiG @ X
    acc = 0.0
    ndraw = 200
    for _ in range(ndraw):
        noise = np.sqrt(sigma / 2) * (
            rng.standard_normal(Y0.shape) + 1j * rng.standard_normal(Y0.shape)
        )
        acc += np.linalg.norm(mx.ls_estimate_trm(Y0 + noise, X, G, v) - H) ** 2
    mse = acc / ndraw
    elapsed = time.perf_counter() - t0
    assert 0.95 * crb <= mse <= 1.05 * crb
    assert elapsed < 120.0
    print(f"PASS 05 estimator efficiency: mse/crb {mse / crb:.4f} over {ndraw} draws")


def test_06_steering_derivative_check():
    rng = np.random.default_rng(5)
    N = 8
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        th = rng.uniform(-0.45 * np.pi, 0.45 * np.pi)
        d = sc.steering_derivative(th, N, 0.5)
        fd = (sc.steering(th + h, N, 0.5) - sc.steering(th - h, N, 0.5)) / (2 * h)
        worst = max(worst, np.linalg.norm(d - fd) / np.linalg.norm(fd))
    assert worst <= 1e-5
    print(f"PASS 06 steering derivative: worst rel err {worst:.2e} over 100 angles")


def test_07_single_user_receiver_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for target in ("extended", "point"):
        for gdb in (5.0, 10.0, 15.0):
            for seed in range(10):
                cfg = sc.SystemConfig(
                    M=3, N=3, K=1, T=32, shadow_std_db=0.0,
                    gamma_k=(db_to_linear(gdb),),
                )
                ch = sc.generate_channels(cfg, seed)
                s1 = _run(ch, cfg, target, "I", seed)
                s2 = _run(ch, cfg, target, "II", seed)
                assert s1.status != "Infeasible" and s2.status != "Infeasible"
                rel = abs(s1.crb - s2.crb) / max(s1.crb, s2.crb)
                worst = max(worst, rel)
                assert rel <= 1e-3
    elapsed = time.perf_counter() - t0
    assert elapsed < 900.0
    print(
        f"PASS 07 K=1 receiver equivalence: worst rel diff {worst:.2e} "
        f"over 60 paired runs, {elapsed:.0f}s"
    )


def test_08_type2_advantage_multiuser():
    sweep = (4.0, 8.0, 12.0)
    middle = 8.0
    msg = []
    for target in ("extended", "point"):
        wins = 0
        pairs = []
        for gdb in sweep:
            for seed in range(10):
                cfg = sc.SystemConfig(
                    M=4, N=4, K=4, T=64, shadow_std_db=0.0,
                    gamma_k=tuple([db_to_linear(gdb)] * 4),
                )
                ch = sc.generate_channels(cfg, seed)
                s1 = _run(ch, cfg, target, "I", seed)
                s2 = _run(ch, cfg, target, "II", seed)
                if gdb != middle:
                    continue
                if s1.status == "Infeasible" or s2.status == "Infeasible":
                    continue
                pairs.append((s1.crb, s2.crb))
                if s2.crb <= 0.99 * s1.crb:
                    wins += 1
        crb1 = np.array([p[0] for p in pairs])
        crb2 = np.array([p[1] for p in pairs])
        assert crb2.mean() <= crb1.mean()
        assert wins >= 7
        msg.append(f"{target}: mean ratio {crb2.mean() / crb1.mean():.3f} wins {wins}/10")
    print(f"PASS 08 type-II advantage at K=4, middle gamma: {'; '.join(msg)}")


def test_09_scheme_ordering_and_txonly_collapse():
    txonly_infeasible = 0
    ordered = 0
    for gdb in (10.0, 20.0, 30.0, 40.0):
        for trial in range(3):
            cfg = sc.SystemConfig(
                M=4, N=4, K=2, T=64, shadow_std_db=0.0,
                gamma_k=tuple([db_to_linear(gdb)] * 2),
            )
            ch = sc.generate_channels(cfg, trial)
            sp = _run(ch, cfg, "extended", "I", trial)
            st, ttr = driver.run_benchmark_tx_only(ch, cfg, "extended", "I", trial)
            ss, str_ = driver.run_benchmark_separate(ch, cfg, "extended", "I", trial)
            TRACES.extend([ttr, str_])
            if st.status == "Infeasible":
                txonly_infeasible += 1
            if sp.status != "Infeasible" and st.status != "Infeasible":
                assert sp.crb <= st.crb + 1e-6 * st.crb
                ordered += 1
            if sp.status != "Infeasible" and ss.status not in ("Infeasible",):
                assert sp.crb <= ss.crb + 1e-6 * ss.crb
                ordered += 1
    assert txonly_infeasible >= 1
    print(
        f"PASS 09 scheme ordering: {ordered} paired comparisons ordered, "
        f"txonly infeasible on {txonly_infeasible} high-threshold runs"
    )


def test_10_monotone_convergence():
    assert len(TRACES) >= 100
    for trace in TRACES:
        crbs = trace.crbs
        if len(crbs) > 1:
            # pairwise, not np.diff: stage-one records of the separate
            # scheme hold inf (no probe yet) and inf - inf is nan, while
            # inf <= inf is exactly the nonincreasing we mean
            assert (crbs[1:] <= crbs[:-1] + 1e-6 * np.abs(crbs[:-1])).all()
    sca_checked = 0
    for seed in range(10):
        cfg = sc.SystemConfig(M=3, N=3, K=1, T=32, shadow_std_db=0.0)
        ch = sc.generate_channels(cfg, seed)
        v = _uv(seed, 3)
        tx_sol = txbf.solve_tx(ch, v, cfg, "point", "I")
        if not tx_sol.usable:
            continue
        data = rbf.build_reflect_data(ch, tx_sol.as_covariance(), cfg, "I", "point")
        rsol = rbf.solve_reflect_point_sca(data, v, rng=np.random.default_rng(seed))
        tr = np.array(rsol.sca_trace)
        if len(tr) > 1:
            gains = np.diff(tr)
            assert gains.min() >= -1e-8 * np.maximum(1.0, np.abs(tr[:-1])).max()
        sca_checked += 1
    assert sca_checked >= 8
    print(
        f"PASS 10 monotone convergence: {len(TRACES)} outer traces, "
        f"{sca_checked} inner surrogate traces"
    )


def test_11_conic_planted_suite():
    rng = np.random.default_rng(2024)
    worst_obj = worst_kkt = 0.0
    for n in (2, 5, 10):
        for _ in range(20):
            m = int(rng.integers(2, n * (n + 1) // 2 + 1))
            scn, xs, ys, zs, opt = planted_instance(rng, [n], n, m)
            raw = solve_standard(scn)
            assert raw.status is Status.Optimal
            scale = max(1.0, abs(opt))
            worst_obj = max(worst_obj, abs(raw.pobj - opt) / scale)
            assert abs(raw.pobj - opt) <= 1e-6 * scale
            pres = np.linalg.norm(scn.A @ raw.x - scn.b)
            dres = np.abs(scn.c - scn.A.T @ raw.y - raw.z).max()
            gap = abs(float(raw.x @ raw.z))
            kkt = max(
                pres / max(1.0, np.abs(scn.b).max()),
                dres / max(1.0, np.abs(scn.c).max()),
                gap / scale,
            )
            worst_kkt = max(worst_kkt, kkt)
            assert kkt <= 1e-6
    print(
        f"PASS 11 planted conic suite: 60 instances, worst obj err {worst_obj:.2e}, "
        f"worst KKT {worst_kkt:.2e}"
    )


def _point_mesh_best(ch, cfg):
    thresh = cfg.gamma_k[0] * cfg.sigma_k_sq[0]
    psis = np.linspace(0.0, 2.0 * np.pi, 65)[:-1]

    def at_rel(rel):
        v0 = np.exp(1j * np.array([rel, 0.0]))
        Vs = v0[None, :] * np.exp(1j * psis)[:, None]
        H = np.stack([sc.combined_channel(ch, Vs[s], 0) for s in range(len(Vs))])

        def feas(R):
            q = np.einsum("si,nij,sj->ns", H.conj(), R, H).real
            return q.max(axis=1) >= thresh

        b, bd = mx._point_bvecs(ch, v0)
        try:
            _, R = mesh_oracle.search_rx(mesh_oracle.point_objective(b, bd), feas, cfg.P0)
        except AssertionError:
            return np.inf
        q = np.einsum("si,ij,sj->s", H.conj(), R, H).real
        v = Vs[int(np.argmax(q))]
        return mx.crb_point_tx_form(
            ch, v, mx.TxCovariance((R,), np.zeros((2, 2))), cfg.sigma_R_sq, cfg.T
        ).crb_value

    rels = np.linspace(0.0, 2.0 * np.pi, 49)[:-1]
    vals = np.array([at_rel(r) for r in rels])
    i = int(np.argmin(vals))
    step = rels[1] - rels[0]
    fine = np.linspace(rels[i] - step, rels[i] + step, 17)
    return min(vals.min(), min(at_rel(r) for r in fine))


def test_12_tiny_instance_brute_force():
    t0 = time.perf_counter()
    cfg = sc.SystemConfig(M=2, N=2, K=1, T=64, shadow_std_db=0.0)
    ch = sc.generate_channels(cfg, 5)

    sol_e, _ = driver.run_alternating(ch, cfg, "extended", "I", seed=1)
    assert sol_e.status == "Converged"
    alphas = np.linspace(0.0, 2.0 * np.pi, 33)[:-1]
    pa, pb = np.meshgrid(alphas, alphas, indexing="ij")
    V = np.exp(1j * np.stack([pa.ravel(), pb.ravel()], axis=1))
    H = np.stack([sc.combined_channel(ch, V[s], 0) for s in range(len(V))])
    thresh = cfg.gamma_k[0] * cfg.sigma_k_sq[0]

    def feas(R):
        q = np.einsum("si,nij,sj->ns", H.conj(), R, H).real
        return q.max(axis=1) >= thresh

    _, R_best = mesh_oracle.search_rx(mesh_oracle.extended_objective(ch.G), feas, cfg.P0)
    mesh_e = mx.crb_extended(
        ch.G, mx.TxCovariance((R_best,), np.zeros((2, 2))), cfg.sigma_R_sq, cfg.T
    ).crb_value
    rel_e = abs(sol_e.crb - mesh_e) / mesh_e
    assert rel_e <= 0.05

    sol_p, _ = driver.run_alternating(ch, cfg, "point", "I", seed=1)
    assert sol_p.status == "Converged"
    mesh_p = _point_mesh_best(ch, cfg)
    rel_p = abs(sol_p.crb - mesh_p) / mesh_p
    assert rel_p <= 0.05
    elapsed = time.perf_counter() - t0
    assert elapsed < 600.0
    print(
        f"PASS 12 tiny brute force: rel gap {rel_e:.3f} (extended), "
        f"{rel_p:.3f} (point), {elapsed:.0f}s"
    )


def test_13_experiment_determinism(tmp_path):
    texts = []
    for name in ("one.csv", "two.csv"):
        spec = harness.ExperimentSpec(
            base=sc.SystemConfig(M=2, N=2, K=1, T=16, shadow_std_db=0.0),
            sweep_db=(5.0, 10.0),
            schemes=("proposed", "txonly", "separate"),
            receivers=("I",),
            targets=("extended",),
            trials=2,
            master_seed=9,
            out=str(tmp_path / name),
        )
        rows = harness.run_experiment(spec)
        assert any(r.status == "Converged" for r in rows)
        with open(spec.out, "rb") as fh:
            texts.append(fh.read())
    assert texts[0] == texts[1]
    print(f"PASS 13 determinism: {len(texts[0])} identical bytes on rerun")
