"""Alternating optimization loops and the two benchmark schemes.

run_alternating: random-phase initialization (with retries while the
first transmit solve is infeasible), then rounds of {transmit SDR at
fixed v, reflection update at fixed covariances} with best-so-far
tracking, relative-change termination on the sensing metric, and a
nonincreasing accepted-CRB trace by construction.
run_benchmark_tx_only: one transmit solve at a single random pattern.
run_benchmark_separate: stage 1 minimizes communication power under
the SINR set (alternating power-min SDR and reflect slack SDR), stage
2 rescales the fixed beam directions and re-optimizes the probe
covariance for sensing in a single convex program.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import metrics as mx
from . import numerics as nx
from . import rbf, txbf
from .conic import ConicProblem, Status, herm_entry_im, herm_entry_re
from .scenario import combined_channel

log = logging.getLogger(__name__)

OUTER_TOL = 1e-3
OUTER_MAX = 20
INIT_RETRIES = 5
STALL_LIMIT = 3
# accepted relative backslide of the sensing metric between iterations
CRB_SLACK = 1e-6


@dataclass(frozen=True)
class BeamformingSolution:
    w: tuple                 # K beamformers, length M each
    R0: np.ndarray           # M x M probing covariance
    v: np.ndarray            # N reflection coefficients, unit modulus
    crb: float
    status: str              # Converged | MaxIter | Stalled | Infeasible
    receiver_type: str
    target_mode: str
    detail: str = ""

    def tx_covariance(self):
        W = tuple(np.outer(wk, wk.conj()) for wk in self.w)
        return mx.TxCovariance(W, self.R0)

    @property
    def feasible(self):
        return self.status != "Infeasible"


@dataclass(frozen=True)
class OuterRecord:
    iteration: int
    crb: float
    margins: tuple           # per-CU SINR slack at the iterate
    tr_R0: float
    tx_status: str
    reflect_status: str
    wall_s: float
    solver_iters: int


@dataclass(frozen=True)
class RunTrace:
    records: tuple
    termination: str         # Converged | MaxIter | Stalled | Infeasible
    init_attempts: int = 1
    detail: str = ""

    @property
    def crbs(self):
        return np.array([r.crb for r in self.records])

    @property
    def total_solver_iters(self):
        return int(sum(r.solver_iters for r in self.records))


def _rng_for(seed, *key):
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=key))
    )


def random_phases(seed, N, attempt=0):
    rng = _rng_for(seed, 101, attempt)
    return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, N))


def _crb_value(ch, v, tx, cfg, target_mode):
    if target_mode == "extended":
        rep = mx.crb_extended(ch.G, tx, cfg.sigma_R_sq, cfg.T)
    else:
        rep = mx.crb_point_tx_form(ch, v, tx, cfg.sigma_R_sq, cfg.T)
    return rep.crb_value if rep.finite else float("inf")


def _infeasible(ch, cfg, receiver_type, target_mode, detail):
    M = ch.G.shape[1]
    return BeamformingSolution(
        w=tuple(np.zeros(M, dtype=complex) for _ in range(cfg.K)),
        R0=np.zeros((M, M), dtype=complex),
        v=np.ones(ch.G.shape[0], dtype=complex),
        crb=float("inf"),
        status="Infeasible",
        receiver_type=receiver_type,
        target_mode=target_mode,
        detail=detail,
    )


def run_alternating(ch, cfg, target_mode, receiver_type, seed):
    """Joint design: alternate transmit and reflect steps to a fixed point."""
    N = ch.G.shape[0]
    v = None
    tx_sol = None
    attempts = 0
    for attempt in range(INIT_RETRIES):
        attempts += 1
        cand_v = random_phases(seed, N, attempt)
        cand = txbf.solve_tx(ch, cand_v, cfg, target_mode, receiver_type)
        if cand.usable:
            v, tx_sol = cand_v, cand
            break
        log.info(
            "init attempt %d/%d infeasible: %s", attempt + 1, INIT_RETRIES, cand.detail
        )
    if tx_sol is None:
        sol = _infeasible(
            ch, cfg, receiver_type, target_mode, "no feasible random pattern"
        )
        return sol, RunTrace(
            records=(),
            termination="Infeasible",
            init_attempts=attempts,
            detail="transmit step infeasible at every initialization",
        )

    best = None  # (crb, w, R0, v)
    records = []
    prev_crb = float("inf")
    stalls = 0
    termination = "MaxIter"
    detail = ""
    for it in range(1, OUTER_MAX + 1):
        t0 = time.perf_counter()
        iters = tx_sol.solver_iters
        tx = tx_sol.as_covariance()
        crb = tx_sol.objective

        data = rbf.build_reflect_data(ch, tx, cfg, receiver_type, target_mode)
        r_rng = _rng_for(seed, 102, it)
        if target_mode == "extended":
            rsol = rbf.solve_reflect_extended(data, v, rng=r_rng)
        else:
            rsol = rbf.solve_reflect_point_sca(data, v, rng=r_rng)
        iters += rsol.solver_iters
        v_new = np.asarray(rsol.v)
        crb_new = (
            crb
            if target_mode == "extended"
            else _crb_value(ch, v_new, tx, cfg, target_mode)
        )
        moved = not np.array_equal(v_new, v)
        # the reflect step is safeguarded, so a backslide is solver noise
        if crb_new <= crb * (1.0 + CRB_SLACK):
            v = v_new
            crb = min(crb, crb_new)
        else:
            moved = False
        if best is None or crb < best[0]:
            best = (crb, tx_sol.w, tx_sol.R0, v)
        records.append(
            OuterRecord(
                iteration=it,
                crb=crb,
                margins=tuple(rbf.margins(data, v)),
                tr_R0=float(np.real(np.trace(tx_sol.R0))),
                tx_status=tx_sol.solver_status,
                reflect_status=rsol.solver_status,
                wall_s=time.perf_counter() - t0,
                solver_iters=iters,
            )
        )
        rel = abs(prev_crb - crb) / max(abs(prev_crb), 1e-300)
        if it >= 2 and np.isfinite(prev_crb) and rel <= OUTER_TOL:
            termination = "Converged"
            break
        if not moved and rel <= 1e-9:
            stalls += 1
            if stalls >= STALL_LIMIT:
                termination = "Stalled"
                detail = "reflect step pinned and transmit objective frozen"
                break
        else:
            stalls = 0
        prev_crb = crb
        if it == OUTER_MAX:
            break
        tx_next = txbf.solve_tx(ch, v, cfg, target_mode, receiver_type)
        if not tx_next.usable:
            termination = "Stalled"
            detail = f"transmit step lost usability: {tx_next.detail}"
            break
        tx_sol = tx_next

    crb_best, w_best, R0_best, v_best = best
    sol = BeamformingSolution(
        w=w_best,
        R0=R0_best,
        v=v_best,
        crb=crb_best,
        status=termination,
        receiver_type=receiver_type,
        target_mode=target_mode,
        detail=detail,
    )
    return sol, RunTrace(
        records=tuple(records),
        termination=termination,
        init_attempts=attempts,
        detail=detail,
    )


def run_benchmark_tx_only(ch, cfg, target_mode, receiver_type, seed):
    """Transmit design at one random reflection pattern, no reflect step."""
    N = ch.G.shape[0]
    v = random_phases(seed, N, 0)
    t0 = time.perf_counter()
    tx_sol = txbf.solve_tx(ch, v, cfg, target_mode, receiver_type)
    if not tx_sol.usable:
        sol = _infeasible(ch, cfg, receiver_type, target_mode, tx_sol.detail)
        return sol, RunTrace(
            records=(),
            termination="Infeasible",
            detail=tx_sol.detail or "transmit-only design infeasible",
        )
    tx = tx_sol.as_covariance()
    data = rbf.build_reflect_data(ch, tx, cfg, receiver_type, target_mode)
    record = OuterRecord(
        iteration=1,
        crb=tx_sol.objective,
        margins=tuple(rbf.margins(data, v)),
        tr_R0=float(np.real(np.trace(tx_sol.R0))),
        tx_status=tx_sol.solver_status,
        reflect_status="",
        wall_s=time.perf_counter() - t0,
        solver_iters=tx_sol.solver_iters,
    )
    sol = BeamformingSolution(
        w=tx_sol.w,
        R0=tx_sol.R0,
        v=v,
        crb=tx_sol.objective,
        status="Converged",
        receiver_type=receiver_type,
        target_mode=target_mode,
    )
    return sol, RunTrace(records=(record,), termination="Converged")


# ---- separate communication/sensing benchmark -----------------------------


def _power_min_tx(ch, v, cfg, receiver_type):
    """Min-power communication-only beams meeting the SINR set (no probe)."""
    K = cfg.K
    M = ch.G.shape[1]
    h_list = [combined_channel(ch, v, k) for k in range(K)]
    if any(float(np.real(h.conj() @ h)) == 0.0 for h in h_list):
        return None, 0
    prob = ConicProblem()
    W_refs = [prob.add_hermitian(M) for _ in range(K)]
    eye = np.eye(M)
    prob.minimize([(r, eye) for r in W_refs])
    for k in range(K):
        h = h_list[k]
        nrm = float(np.real(h.conj() @ h))
        Hk = np.outer(h, h.conj()) / nrm
        terms = [(W_refs[k], Hk / cfg.gamma_k[k])]
        for i in range(K):
            if i != k:
                terms.append((W_refs[i], -Hk))
        prob.add_ge(terms, cfg.sigma_k_sq[k] / nrm)
    sol = prob.solve()
    resid = max(sol.pres, sol.dres, sol.relgap) if sol.raw.x is not None else np.inf
    usable = sol.status == Status.Optimal or (
        sol.status == Status.NumericalLimit and resid <= txbf.USABLE_RESID
    )
    if not usable:
        return None, sol.raw.iters
    W_star = [nx.hermitize(sol.value(r)) for r in W_refs]
    # rank-one projection; dropping the PSD residual can only reduce
    # cross interference and power, so feasibility survives
    ws, _ = txbf.extract_rank_one(W_star, np.zeros((M, M), dtype=complex), h_list)
    return ws, sol.raw.iters


def _stage2_rows(prob, a_ref, R0_ref, h_list, cfg, receiver_type, ws, Sbar, M):
    for k in range(len(h_list)):
        h = h_list[k]
        nrm = float(np.real(h.conj() @ h))
        own = float(np.real(h.conj() @ (np.outer(ws[k], ws[k].conj())) @ h))
        inter = float(np.real(h.conj() @ Sbar @ h)) - own
        coeff_a = (own / cfg.gamma_k[k] - inter) / nrm
        terms = [(a_ref, coeff_a)]
        if receiver_type == "I":
            terms.append((R0_ref, -np.outer(h, h.conj()) / nrm))
        prob.add_ge(terms, cfg.sigma_k_sq[k] / nrm)
    prob.add_le(
        [(a_ref, float(np.real(np.trace(Sbar)))), (R0_ref, np.eye(M))], cfg.P0
    )
    prob.add_ge([(a_ref, 1.0)], 1.0)


def _stage2_extended(ch, v, cfg, ws, receiver_type):
    """Convex rescale-plus-probe step for the matrix-valued target."""
    G = ch.G
    N, M = G.shape
    sv = np.linalg.svd(G, compute_uv=False)
    if sv.size < N or sv[-1] <= nx.RANK_TOL_FACTOR * sv[0]:
        return None
    Gb = G / sv[0]
    h_list = [combined_channel(ch, v, k) for k in range(cfg.K)]
    Sbar = np.zeros((M, M), dtype=complex)
    for wk in ws:
        Sbar += np.outer(wk, wk.conj())

    prob = ConicProblem()
    a_ref = prob.add_nonneg(1)
    R0_ref = prob.add_hermitian(M)
    Y_ref = prob.add_hermitian(2 * N)
    obj_sel = np.diag(np.concatenate([np.ones(N), np.zeros(N)]))
    prob.minimize([(Y_ref, obj_sel)])
    _stage2_rows(prob, a_ref, R0_ref, h_list, cfg, receiver_type, ws, Sbar, M)
    for i in range(N):
        for j in range(N):
            rhs = 1.0 if i == j else 0.0
            prob.add_eq([(Y_ref, herm_entry_re(2 * N, i, N + j))], rhs)
            prob.add_eq([(Y_ref, herm_entry_im(2 * N, i, N + j))], 0.0)
    for i in range(N):
        for j in range(i + 1):
            Cij = np.outer(Gb[j].conj(), Gb[i])
            tS = complex(np.trace(Cij @ Sbar))
            prob.add_eq(
                [
                    (Y_ref, herm_entry_re(2 * N, N + i, N + j)),
                    (a_ref, -tS.real),
                    (R0_ref, -Cij),
                ],
                0.0,
            )
            if i != j:
                prob.add_eq(
                    [
                        (Y_ref, herm_entry_im(2 * N, N + i, N + j)),
                        (a_ref, -tS.imag),
                        (R0_ref, 1j * Cij),
                    ],
                    0.0,
                )
    return prob, a_ref, R0_ref


def _stage2_point(ch, v, cfg, ws, receiver_type):
    """Convex rescale-plus-probe step for the DoA target."""
    G = ch.G
    N, M = G.shape
    b, bdot = mx._point_bvecs(ch, v)
    if np.linalg.norm(b) <= nx.RANK_TOL_FACTOR * np.linalg.norm(G) * np.sqrt(N):
        return None
    h_list = [combined_channel(ch, v, k) for k in range(cfg.K)]
    Sbar = np.zeros((M, M), dtype=complex)
    for wk in ws:
        Sbar += np.outer(wk, wk.conj())
    B = np.outer(b, b)
    Bd = np.outer(bdot, b) + np.outer(b, bdot)
    s_b = np.linalg.norm(B)
    s_d = np.linalg.norm(Bd)
    if s_d == 0.0:
        s_d = 1.0
    C_dd = (Bd.conj().T @ Bd) / s_d**2
    C_bd = (Bd.conj().T @ B) / (s_d * s_b)
    C_bb = (B.conj().T @ B) / s_b**2

    prob = ConicProblem()
    a_ref = prob.add_nonneg(1)
    R0_ref = prob.add_hermitian(M)
    L_ref = prob.add_hermitian(2)
    u_ref = prob.add_nonneg(1)
    prob.maximize([(u_ref, 1.0)])
    _stage2_rows(prob, a_ref, R0_ref, h_list, cfg, receiver_type, ws, Sbar, M)
    tdd = complex(np.trace(C_dd @ Sbar))
    tbd = complex(np.trace(C_bd @ Sbar))
    tbb = complex(np.trace(C_bb @ Sbar))
    prob.add_eq(
        [(L_ref, herm_entry_re(2, 0, 0)), (u_ref, 1.0), (a_ref, -tdd.real),
         (R0_ref, -C_dd)],
        0.0,
    )
    prob.add_eq(
        [(L_ref, herm_entry_re(2, 0, 1)), (a_ref, -tbd.real), (R0_ref, -C_bd)], 0.0
    )
    prob.add_eq(
        [(L_ref, herm_entry_im(2, 0, 1)), (a_ref, -tbd.imag), (R0_ref, 1j * C_bd)],
        0.0,
    )
    prob.add_eq(
        [(L_ref, herm_entry_re(2, 1, 1)), (a_ref, -tbb.real), (R0_ref, -C_bb)], 0.0
    )
    return prob, a_ref, R0_ref


def _solve_stage2(ch, v, cfg, ws, receiver_type, target_mode):
    built = (
        _stage2_extended(ch, v, cfg, ws, receiver_type)
        if target_mode == "extended"
        else _stage2_point(ch, v, cfg, ws, receiver_type)
    )
    if built is None:
        return None
    prob, a_ref, R0_ref = built
    sol = prob.solve()
    resid = max(sol.pres, sol.dres, sol.relgap) if sol.raw.x is not None else np.inf
    usable = sol.status == Status.Optimal or (
        sol.status == Status.NumericalLimit and resid <= txbf.USABLE_RESID
    )
    if not usable:
        return None
    a = float(sol.value(a_ref)[0])
    R0 = nx.hermitize(sol.value(R0_ref))
    return a, R0, sol.raw.iters


def run_benchmark_separate(ch, cfg, target_mode, receiver_type, seed):
    """Communication-first design, then convex sensing re-allocation."""
    N = ch.G.shape[0]
    v = None
    ws = None
    attempts = 0
    iters0 = 0
    for attempt in range(INIT_RETRIES):
        attempts += 1
        cand_v = random_phases(seed, N, attempt)
        cand_ws, iters0 = _power_min_tx(ch, cand_v, cfg, receiver_type)
        if cand_ws is not None:
            v, ws = cand_v, cand_ws
            break
    if ws is None:
        sol = _infeasible(
            ch, cfg, receiver_type, target_mode, "power stage infeasible"
        )
        return sol, RunTrace(
            records=(),
            termination="Infeasible",
            init_attempts=attempts,
            detail="communication power stage infeasible at every initialization",
        )

    records = []
    power_prev = float("inf")
    termination = "MaxIter"
    for it in range(1, OUTER_MAX + 1):
        t0 = time.perf_counter()
        iters = iters0 if it == 1 else 0
        power = float(sum(np.linalg.norm(wk) ** 2 for wk in ws))
        M = ch.G.shape[1]
        tx_comm = mx.TxCovariance(
            tuple(np.outer(wk, wk.conj()) for wk in ws),
            np.zeros((M, M), dtype=complex),
        )
        data = rbf.build_reflect_data(ch, tx_comm, cfg, receiver_type, "extended")
        rsol = rbf.solve_reflect_extended(data, v, rng=_rng_for(seed, 103, it))
        iters += rsol.solver_iters
        v = np.asarray(rsol.v)
        records.append(
            OuterRecord(
                iteration=it,
                crb=float("inf"),  # sensing enters in stage 2
                margins=tuple(rbf.margins(data, v)),
                tr_R0=0.0,
                tx_status="Optimal",
                reflect_status=rsol.solver_status,
                wall_s=time.perf_counter() - t0,
                solver_iters=iters,
            )
        )
        rel = abs(power_prev - power) / max(abs(power_prev), 1e-300)
        if it >= 2 and np.isfinite(power_prev) and rel <= OUTER_TOL:
            termination = "Converged"
            break
        power_prev = power
        if it == OUTER_MAX:
            break
        ws_next, it2 = _power_min_tx(ch, v, cfg, receiver_type)
        iters0 = it2
        if ws_next is None:
            termination = "Stalled"
            break
        ws = ws_next

    t0 = time.perf_counter()
    stage2 = _solve_stage2(ch, v, cfg, ws, receiver_type, target_mode)
    if stage2 is None:
        sol = _infeasible(
            ch, cfg, receiver_type, target_mode, "sensing reallocation infeasible"
        )
        return sol, RunTrace(
            records=tuple(records),
            termination="Infeasible",
            init_attempts=attempts,
            detail="stage-2 conic program not solved",
        )
    a, R0, iters2 = stage2
    if a < 1.0 - 1e-9:
        log.warning("stage-2 scale %.6f below 1, clipping", a)
        a = 1.0
    w_final = tuple(np.sqrt(a) * wk for wk in ws)
    tx = mx.TxCovariance(tuple(np.outer(wk, wk.conj()) for wk in w_final), R0)
    crb = _crb_value(ch, v, tx, cfg, target_mode)
    data = rbf.build_reflect_data(ch, tx, cfg, receiver_type, target_mode)
    records.append(
        OuterRecord(
            iteration=len(records) + 1,
            crb=crb,
            margins=tuple(rbf.margins(data, v)),
            tr_R0=float(np.real(np.trace(R0))),
            tx_status="Optimal",
            reflect_status="",
            wall_s=time.perf_counter() - t0,
            solver_iters=iters2,
        )
    )
    sol = BeamformingSolution(
        w=w_final,
        R0=R0,
        v=v,
        crb=crb,
        status=termination,
        receiver_type=receiver_type,
        target_mode=target_mode,
    )
    return sol, RunTrace(
        records=tuple(records), termination=termination, init_attempts=attempts
    )
