"""Reflection pattern design at fixed transmit covariances.

Per-CU SINR constraints become quadratic forms of the lifted phase
vector [v; 1] against Hermitian matrices Q_k, so both reflect
subproblems are semidefinite relaxations over the lifted outer product
V (unit diagonal, PSD) followed by Gaussian randomization back to unit
modulus.  The extended-target sensing metric does not depend on v, so
that step maximizes the total SINR slack; the point-target DoA metric
is a difference of convex quadratics in (V, t1, t2) and is driven by an
inner loop that linearizes the convex half at the current iterate and
keeps the concave half exact through epigraph blocks.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import metrics as mx
from . import numerics as nx
from .conic import ConicProblem, Status, herm_entry_im, herm_entry_re

log = logging.getLogger(__name__)

N_RANDOMIZATIONS = 1000
SCA_TOL = 1e-4
SCA_MAX_ITERS = 30
# accepted relative SINR slack for randomized candidates
MARGIN_SLACK = 1e-9
# residual accuracy below which a NumericalLimit iterate is still usable
USABLE_RESID = 1e-5


@dataclass(frozen=True)
class ReflectProblemData:
    """Per-CU quadratic forms and (point mode) sensing curvature data.

    Q_k acts on the lifted vector [v; 1]; the SINR constraint of CU k
    is [v;1]^H Q_k [v;1] >= gamma_sigma[k].  R1_tilde/R2_tilde/D_tilde
    are the zero-padded reflect-side curvature matrices (point mode
    only, None otherwise).
    """

    Q_k: tuple
    gamma_sigma: np.ndarray
    receiver_type: str
    target_mode: str
    R1_tilde: Optional[np.ndarray] = None
    R2_tilde: Optional[np.ndarray] = None
    D_tilde: Optional[np.ndarray] = None
    ch: object = None
    tx: object = None
    cfg: object = None


@dataclass(frozen=True)
class ReflectSolution:
    v: np.ndarray                     # length N, unit modulus
    V_relaxed: Optional[np.ndarray]   # (N+1) x (N+1) relaxed lift
    objective_surrogate: float
    n_randomizations_tried: int
    feasible: bool
    relaxed_objective: float = float("nan")
    solver_status: str = "Optimal"
    detail: str = ""
    solver_iters: int = 0
    sca_trace: tuple = ()


def lifted(v):
    """[v; 1] with the reference entry appended."""
    return np.append(np.asarray(v, dtype=complex), 1.0)


def margins(data, v):
    """Per-CU SINR slacks [v;1]^H Q_k [v;1] - gamma_sigma_k."""
    vt = lifted(v)
    return np.array(
        [
            float(np.real(vt.conj() @ Q @ vt)) - gs
            for Q, gs in zip(data.Q_k, data.gamma_sigma)
        ]
    )


def _validate(receiver_type, target_mode):
    if receiver_type not in ("I", "II"):
        raise nx.InvalidInput(f"receiver_type {receiver_type!r}")
    if target_mode not in ("extended", "point"):
        raise nx.InvalidInput(f"target_mode {target_mode!r}")


def _pad(A):
    n = A.shape[0]
    out = np.zeros((n + 1, n + 1), dtype=complex)
    out[:n, :n] = A
    return out


def build_reflect_data(ch, tx, cfg, receiver_type="I", target_mode="extended"):
    """Assemble the lifted SINR forms Q_k (and point curvature data).

    Q_k = A_k (W_k* - Gamma_k (sum_{i!=k} W_i* [+ R0*])) A_k^H with
    A_k = [conj(diag(h_r,k^H) G); h_d,k^T]; the R0* term is present for
    Type-I receivers only.  [v;1]^H Q_k [v;1] equals the SINR numerator
    minus Gamma_k times the interference seen at the combined channel.
    """
    _validate(receiver_type, target_mode)
    G = ch.G
    K = len(tx.W)
    Wc = [np.conj(w) for w in tx.W]
    R0c = np.conj(tx.R0)
    Qs = []
    gs = np.empty(K)
    for k in range(K):
        Gt = np.diag(np.conj(ch.h_r[k])) @ G
        A = np.vstack([np.conj(Gt), ch.h_d[k][None, :]])
        gamma = float(cfg.gamma_k[k])
        C = Wc[k].copy()
        for i in range(K):
            if i != k:
                C = C - gamma * Wc[i]
        if receiver_type == "I":
            C = C - gamma * R0c
        Qs.append(nx.hermitize(A @ C @ A.conj().T))
        gs[k] = gamma * float(cfg.sigma_k_sq[k])
    R1t = R2t = Dt = None
    if target_mode == "point":
        R1, R2, D = mx.point_reflect_data(ch, tx)
        R1t, R2t, Dt = _pad(R1), _pad(R2), _pad(D)
    return ReflectProblemData(
        Q_k=tuple(Qs),
        gamma_sigma=gs,
        receiver_type=receiver_type,
        target_mode=target_mode,
        R1_tilde=R1t,
        R2_tilde=R2t,
        D_tilde=Dt,
        ch=ch,
        tx=tx,
        cfg=cfg,
    )


# ---- randomization -------------------------------------------------------


def _psd_factor(V):
    """Factor L with L L^H = V; Cholesky when possible, eigen fallback."""
    V = nx.hermitize(np.asarray(V, dtype=complex))
    try:
        return np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        w, U = np.linalg.eigh(V)
        w = np.clip(w, 0.0, None)
        # eigenvalues at the round-off floor are noise, not signal
        w[w <= w.max(initial=0.0) * V.shape[0] * np.finfo(float).eps] = 0.0
        return U * np.sqrt(w)


def gaussian_randomize(V, count, evaluator, rng=None):
    """Best unit-modulus candidate recovered from the relaxed lift V.

    Draws count vectors r ~ CN(0, V), projects the phases relative to
    the reference entry, v = exp(j arg((r / r_last)[:-1])), and returns
    the candidate with the largest evaluator(v); None when count is 0
    or every candidate scores -inf.  Draws with |r_last| < 1e-12 are
    resampled.  Deterministic for a given rng state.
    """
    if count <= 0:
        return None
    if rng is None:
        rng = np.random.default_rng(0)
    L = _psd_factor(V)
    n = L.shape[0]
    best_v, best_s = None, -np.inf
    for _ in range(count):
        for _attempt in range(100):
            g = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
            r = L @ g
            if abs(r[-1]) >= 1e-12:
                break
        else:
            continue
        v = np.exp(1j * np.angle(r[:-1] / r[-1]))
        s = evaluator(v)
        if s > best_s:
            best_v, best_s = v, s
    return best_v if best_s > -np.inf else None


def _margin_evaluator(data):
    qs = np.maximum(data.gamma_sigma, 1e-300)

    def ev(v):
        m = margins(data, v)
        return float(np.min(m / qs)) if m.size else 0.0

    return ev


def _point_evaluator(data):
    qs = np.maximum(data.gamma_sigma, 1e-300)
    cfg = data.cfg

    def ev(v):
        m = margins(data, v)
        if m.size and float(np.min(m / qs)) < -MARGIN_SLACK:
            return -np.inf
        try:
            rep = mx.crb_point_reflect_form(
                data.ch, v, data.tx, cfg.sigma_R_sq, cfg.T
            )
        except nx.DegenerateGeometry:
            return -np.inf
        return -rep.crb_value if rep.finite else -np.inf

    return ev


# ---- extended target: SINR-margin maximization ---------------------------


def _clip_margin_sum(data, v):
    return float(np.clip(margins(data, v), 0.0, None).sum())


def solve_reflect_extended(data, v_init, rng=None, count=N_RANDOMIZATIONS):
    """Max total SINR slack over the reflection pattern at fixed tx.

    The sensing trace-inverse metric is invariant to v for the
    matrix-valued target, so this step maximizes sum_k beta_k subject
    to [v;1]^H Q_k [v;1] - gamma_sigma_k >= beta_k >= 0, relaxed over
    the lift V, then randomized.  Keeps v_init when no candidate beats
    its worst-user margin.
    """
    v_init = np.asarray(v_init, dtype=complex)
    K = len(data.Q_k)
    ev = _margin_evaluator(data)
    if K == 0:
        return ReflectSolution(
            v=v_init,
            V_relaxed=None,
            objective_surrogate=0.0,
            n_randomizations_tried=0,
            feasible=True,
            relaxed_objective=0.0,
        )
    n = data.Q_k[0].shape[0]
    qs = np.maximum(data.gamma_sigma, 1e-300)

    prob = ConicProblem()
    V_ref = prob.add_hermitian(n)
    b_ref = prob.add_nonneg(K)
    # objective in units of max(gamma sigma) so coefficients stay O(1)
    obj_scale = float(qs.max())
    prob.maximize([(b_ref, qs / obj_scale)])
    for i in range(n):
        prob.add_eq([(V_ref, herm_entry_re(n, i, i))], 1.0)
    for k in range(K):
        e_k = np.zeros(K)
        e_k[k] = 1.0
        prob.add_ge(
            [(V_ref, data.Q_k[k] / qs[k]), (b_ref, -e_k)],
            data.gamma_sigma[k] / qs[k],
        )

    sol = prob.solve()
    resid = max(sol.pres, sol.dres, sol.relgap) if sol.raw.x is not None else np.inf
    usable = sol.status == Status.Optimal or (
        sol.status == Status.NumericalLimit and resid <= USABLE_RESID
    )
    if not usable:
        return ReflectSolution(
            v=v_init,
            V_relaxed=None,
            objective_surrogate=_clip_margin_sum(data, v_init),
            n_randomizations_tried=0,
            feasible=bool(ev(v_init) >= -MARGIN_SLACK),
            solver_status=sol.status.name,
            detail="slack relaxation not solved at this phase",
            solver_iters=sol.raw.iters,
        )

    V_star = nx.hermitize(sol.value(V_ref))
    relaxed_obj = float(sol.objective) * obj_scale
    best = gaussian_randomize(V_star, count, ev, rng)
    chosen = v_init
    if best is not None and ev(best) > ev(v_init):
        chosen = best
    feasible = bool(ev(chosen) >= -MARGIN_SLACK)
    surrogate = _clip_margin_sum(data, chosen)
    if feasible and surrogate > relaxed_obj + 1e-6 * max(1.0, abs(relaxed_obj)):
        log.warning(
            "candidate slack %.6e above relaxation bound %.6e", surrogate, relaxed_obj
        )
    return ReflectSolution(
        v=chosen,
        V_relaxed=V_star,
        objective_surrogate=surrogate,
        n_randomizations_tried=count,
        feasible=feasible,
        relaxed_objective=relaxed_obj,
        solver_status=sol.status.name,
        solver_iters=sol.raw.iters,
    )


# ---- point target: linearize-and-lift inner loop -------------------------


def _tr(A, B):
    return float(np.real(np.trace(A @ B)))


def _f1_core(R1, R2, D, V, t1, t2):
    a = _tr(R2 + D @ R1 @ D, V)
    b = _tr(R2, V) - t1
    c = _tr(R1 + D @ R2 @ D, V)
    d = _tr(R1, V) - t2
    return 0.25 * (a * a + b * b + c * c + d * d)


def _f2_core(R1, R2, D, V, t1, t2):
    a = _tr(R2 - D @ R1 @ D, V)
    b = _tr(R2, V) + t1
    c = _tr(R1 - D @ R2 @ D, V)
    d = _tr(R1, V) + t2
    return -0.25 * (a * a + b * b + c * c + d * d)


def _f1_taylor_core(R1, R2, D, V, t1, t2, Vr, t1r, t2r):
    P = R2 + D @ R1 @ D
    S = R1 + D @ R2 @ D
    dV = V - Vr
    dt1 = t1 - t1r
    dt2 = t2 - t2r
    val = _f1_core(R1, R2, D, Vr, t1r, t2r)
    val += 0.5 * _tr(P, Vr) * _tr(P, dV)
    val += 0.5 * _tr(S, Vr) * _tr(S, dV)
    val += 0.5 * t1r * dt1 + 0.5 * t2r * dt2
    val += 0.5 * _tr(R2, Vr) * _tr(R2, dV)
    val += 0.5 * _tr(R1, Vr) * _tr(R1, dV)
    val -= 0.5 * _tr(R2, dV) * t1r
    val -= 0.5 * _tr(R1, dV) * t2r
    val -= 0.5 * _tr(R2, Vr) * dt1
    val -= 0.5 * _tr(R1, Vr) * dt2
    return val


def _tinit_core(R1, R2, D, V):
    q1 = _tr(R1, V)
    q2 = _tr(R2, V)
    t1 = abs(np.trace(D @ R1 @ V)) ** 2 / q1 if q1 > 1e-300 else 0.0
    t2 = abs(np.trace(D @ R2 @ V)) ** 2 / q2 if q2 > 1e-300 else 0.0
    return float(t1), float(t2)


def f1_value(data, V, t1, t2):
    return _f1_core(data.R1_tilde, data.R2_tilde, data.D_tilde, V, t1, t2)


def f2_value(data, V, t1, t2):
    return _f2_core(data.R1_tilde, data.R2_tilde, data.D_tilde, V, t1, t2)


def surrogate_value(data, V, t1, t2):
    """Lifted sensing objective: convex plus concave split, exact sum."""
    return f1_value(data, V, t1, t2) + f2_value(data, V, t1, t2)


def f1_taylor(data, V, t1, t2, Vr, t1r, t2r):
    """Affine minorant of the convex half, expanded at (Vr, t1r, t2r)."""
    return _f1_taylor_core(
        data.R1_tilde, data.R2_tilde, data.D_tilde, V, t1, t2, Vr, t1r, t2r
    )


def t_init(data, V):
    """Ratio values of the auxiliary variables at a given lift."""
    return _tinit_core(data.R1_tilde, data.R2_tilde, data.D_tilde, V)


def _solve_linearized(data, R1, R2, D, Vr, t1r, t2r):
    """One inner subproblem: maximize taylor(f1) + f2 over the lift.

    The concave half enters exactly through four 2x2 epigraph blocks
    [[e_i, a_i], [a_i, 1]] >= 0 (e_i >= a_i^2) penalized by -1/4 e_i;
    t1/t2 are tied into two 2x2 Hermitian ratio blocks
    [[t_i, tr(D Ri V)], [conj, tr(Ri V)]] >= 0.
    """
    n = R1.shape[0]
    qs = np.maximum(data.gamma_sigma, 1e-300)
    P = R2 + D @ R1 @ D
    S = R1 + D @ R2 @ D
    M2 = R2 - D @ R1 @ D
    M1 = R1 - D @ R2 @ D
    pb = _tr(P, Vr)
    sb = _tr(S, Vr)
    xb = _tr(R2, Vr)
    yb = _tr(R1, Vr)

    prob = ConicProblem()
    V_ref = prob.add_hermitian(n)
    t_ref = prob.add_nonneg(2)
    L1_ref = prob.add_hermitian(2)
    L2_ref = prob.add_hermitian(2)
    E_refs = [prob.add_psd(2) for _ in range(4)]

    # taylor(f1) collected: linear in V and in (t1, t2), plus a constant
    Cv = 0.5 * (pb * P + sb * S + (xb - t1r) * R2 + (yb - t2r) * R1)
    ct = np.array([0.5 * (t1r - xb), 0.5 * (t2r - yb)])
    const = (
        _f1_core(R1, R2, D, Vr, t1r, t2r)
        - 0.5 * (pb * pb + sb * sb + t1r * t1r + t2r * t2r + xb * xb + yb * yb)
        + xb * t1r
        + yb * t2r
    )
    e00 = np.array([[1.0, 0.0], [0.0, 0.0]])
    obj = [(V_ref, Cv), (t_ref, ct)]
    obj += [(E_ref, -0.25 * e00) for E_ref in E_refs]
    prob.maximize(obj, const=const)

    for i in range(n):
        prob.add_eq([(V_ref, herm_entry_re(n, i, i))], 1.0)
    for k in range(len(data.Q_k)):
        prob.add_ge([(V_ref, data.Q_k[k] / qs[k])], data.gamma_sigma[k] / qs[k])

    # ratio blocks: L[0,0]=t, L[0,1]=tr(D R V), L[1,1]=tr(R V)
    for L_ref, R, t_sel in ((L1_ref, R1, 0), (L2_ref, R2, 1)):
        e_t = np.zeros(2)
        e_t[t_sel] = 1.0
        C = D @ R
        prob.add_eq([(L_ref, herm_entry_re(2, 0, 0)), (t_ref, -e_t)], 0.0)
        prob.add_eq([(L_ref, herm_entry_re(2, 0, 1)), (V_ref, -C)], 0.0)
        prob.add_eq([(L_ref, herm_entry_im(2, 0, 1)), (V_ref, 1j * C)], 0.0)
        prob.add_eq([(L_ref, herm_entry_re(2, 1, 1)), (V_ref, -R)], 0.0)

    # epigraph blocks: E[1,1]=1, E[0,1] = the concave half's affine argument
    e11 = np.array([[0.0, 0.0], [0.0, 1.0]])
    e01 = np.array([[0.0, 0.5], [0.5, 0.0]])
    args = [
        (E_refs[0], [(V_ref, -M2)]),
        (E_refs[1], [(V_ref, -R2), (t_ref, np.array([-1.0, 0.0]))]),
        (E_refs[2], [(V_ref, -M1)]),
        (E_refs[3], [(V_ref, -R1), (t_ref, np.array([0.0, -1.0]))]),
    ]
    for E_ref, terms in args:
        prob.add_eq([(E_ref, e11)], 1.0)
        prob.add_eq([(E_ref, e01)] + terms, 0.0)

    sol = prob.solve()
    return sol, V_ref, t_ref


def solve_reflect_point_sca(
    data, v_init, cfg=None, rng=None, count=N_RANDOMIZATIONS
):
    """Reflection pattern for the DoA metric at fixed tx covariances.

    Inner loop: repeatedly maximize the linearized-convex-plus-exact-
    concave surrogate over (V, t1, t2); the surrogate value sequence is
    nondecreasing and stops on relative change below SCA_TOL (or after
    SCA_MAX_ITERS, or when a subproblem stops making numerical
    progress, keeping the best iterate).  Candidates recovered by
    randomization are ranked by the true DoA metric; v_init is kept
    when nothing improves it.
    """
    if data.target_mode != "point":
        raise nx.InvalidInput("point-mode data required")
    del cfg  # sensing scales travel with the data
    v_init = np.asarray(v_init, dtype=complex)
    # work in scale-free units: both curvature matrices get unit
    # Frobenius norm, the auxiliary ratios scale along with them
    s1 = max(float(np.linalg.norm(data.R1_tilde)), 1e-300)
    s2 = max(float(np.linalg.norm(data.R2_tilde)), 1e-300)
    R1 = np.asarray(data.R1_tilde) / s1
    R2 = np.asarray(data.R2_tilde) / s2
    D = np.asarray(data.D_tilde).real

    vt = lifted(v_init)
    V = np.outer(vt, vt.conj())
    t1, t2 = _tinit_core(R1, R2, D, V)
    cur = _f1_core(R1, R2, D, V, t1, t2) + _f2_core(R1, R2, D, V, t1, t2)
    trace = [cur * s1 * s2]
    status = "Optimal"
    detail = ""
    iters_total = 0
    feasible_relaxation = True
    for it in range(SCA_MAX_ITERS):
        sol, V_ref, t_ref = _solve_linearized(data, R1, R2, D, V, t1, t2)
        iters_total += sol.raw.iters
        if sol.status in (Status.Infeasible, Status.Unbounded):
            # the feasible set is iterate-independent, so this can only
            # happen on the first pass (no pattern meets the SINR set)
            status = sol.status.name
            detail = "inner subproblem lost feasibility"
            feasible_relaxation = it > 0
            break
        resid = max(sol.pres, sol.dres, sol.relgap)
        if sol.status == Status.NumericalLimit and resid > USABLE_RESID:
            status = sol.status.name
            detail = f"inner subproblem stalled at resid {resid:.2e}"
            break
        Vn = nx.hermitize(sol.value(V_ref))
        t1n, t2n = (float(x) for x in sol.value(t_ref))
        new = _f1_core(R1, R2, D, Vn, t1n, t2n) + _f2_core(R1, R2, D, Vn, t1n, t2n)
        if new < cur - 1e-8 * max(1.0, abs(cur)):
            # solver noise pushed the exact objective down; keep the
            # previous iterate
            break
        gain = new - cur
        V, t1, t2 = Vn, t1n, t2n
        cur = new
        trace.append(cur * s1 * s2)
        if gain <= SCA_TOL * max(abs(cur), 1e-12):
            break

    ev = _point_evaluator(data)
    qs = np.maximum(data.gamma_sigma, 1e-300)
    if not feasible_relaxation:
        m = margins(data, v_init)
        return ReflectSolution(
            v=v_init,
            V_relaxed=None,
            objective_surrogate=trace[-1],
            n_randomizations_tried=0,
            feasible=bool(m.size == 0 or float(np.min(m / qs)) >= -MARGIN_SLACK),
            solver_status=status,
            detail=detail,
            solver_iters=iters_total,
            sca_trace=tuple(trace),
        )
    best = gaussian_randomize(V, count, ev, rng)
    chosen = v_init
    if best is not None and ev(best) > ev(v_init):
        chosen = best
    m = margins(data, chosen)
    feasible = bool(m.size == 0 or float(np.min(m / qs)) >= -MARGIN_SLACK)
    return ReflectSolution(
        v=chosen,
        V_relaxed=V,
        objective_surrogate=trace[-1],
        n_randomizations_tried=count,
        feasible=feasible,
        relaxed_objective=trace[-1],
        solver_status=status,
        detail=detail,
        solver_iters=iters_total,
        sca_trace=tuple(trace),
    )


def solve_reflect(data, v_init, rng=None, count=N_RANDOMIZATIONS):
    if data.target_mode == "extended":
        return solve_reflect_extended(data, v_init, rng=rng, count=count)
    return solve_reflect_point_sca(data, v_init, rng=rng, count=count)
