"""Transmit covariance design at a fixed reflection pattern.

Both target models reduce to semidefinite programs over the per-user
covariances W_k and the probing covariance R0.  The matrix-inverse
sensing objective (extended target) is lifted with a Schur block
[[Z, I], [I, G R_x G^H]] >= 0 and tr(Z) is minimized; the point-target
objective enters through a 2x2 moment matrix whose smallest admissible
Schur complement is maximized.  Binding rows are re-solved exactly in
per-block power scales before reduction, so the returned design meets
them to round-off rather than to the interior-point residual floor.
Relaxed solutions are reduced to rank-one beamformers by the
constructive projection w_k propto W_k h_k, with the residual
covariance folded into R0 (exact: same objective, same power, same
SINR left sides).
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import metrics as mx
from . import numerics as nx
from . import scenario as sc
from .conic import ConicProblem, Status, herm_entry_im, herm_entry_re
from .conic.solver import SolveOptions

log = logging.getLogger(__name__)

# residual accuracy below which a NumericalLimit iterate is still usable
USABLE_RESID = 1e-5

# tighter than the default: binding SINR rows have right sides a few
# orders of magnitude below the pin rows, so they inherit a larger
# relative share of whatever residual the solve leaves behind
_TX_OPTS = SolveOptions(eps_feas=1e-9, eps_gap=1e-9)

# residual level a solve must certify for this module to call it Optimal;
# falling short of _TX_OPTS but inside this is still a clean solve
_CERT_EPS = 1e-7


def _status_name(sol):
    resid = max(sol.pres, sol.dres, sol.relgap)
    if sol.status == Status.NumericalLimit and resid <= _CERT_EPS:
        return "Optimal"
    return sol.status.name


@dataclass(frozen=True)
class TxSolution:
    w: tuple                      # K beamformers, each length M
    R0: np.ndarray                # M x M probing covariance
    relaxed: Optional[tuple]      # (W_star tuple, R0_star) before reduction
    objective: float              # CRB at the returned covariance
    solver_status: str
    detail: str = ""
    solver_iters: int = 0

    def as_covariance(self):
        W = tuple(np.outer(wk, wk.conj()) for wk in self.w)
        return mx.TxCovariance(W, self.R0)

    @property
    def usable(self):
        return self.solver_status in ("Optimal", "NumericalLimit") and self.w


def _failed(M, K, status, detail):
    return TxSolution(
        w=tuple(np.zeros(M, dtype=complex) for _ in range(K)),
        R0=np.zeros((M, M), dtype=complex),
        relaxed=None,
        objective=float("inf"),
        solver_status=status,
        detail=detail,
    )


def _phase_fix(w):
    mag = np.abs(w)
    if mag.max() == 0.0:
        return w
    idx = int(np.argmax(mag > 1e-12 * mag.max()))
    return w * np.exp(-1j * np.angle(w[idx]))


def extract_rank_one(W_list, R0_star, h_list):
    """Rank-one reduction of a relaxed transmit design.

    w_k = (h_k^H W_k h_k)^(-1/2) W_k h_k, residual W_k - w_k w_k^H
    moved into R0.  Preserves total covariance exactly and each
    h_k^H (.) h_k quadratic form, and the residual is PSD.
    """
    if len(W_list) != len(h_list):
        raise nx.InvalidInput("W/h count mismatch")
    R0 = nx.hermitize(np.asarray(R0_star, dtype=complex)).copy()
    ws = []
    for W, h in zip(W_list, h_list):
        W = nx.hermitize(np.asarray(W, dtype=complex))
        q = float(np.real(h.conj() @ W @ h))
        # q <= ||h||^2 tr(W); a q at the round-off floor of that ceiling
        # means the beam carries no usable signal for this user
        ceiling = float(np.real(h.conj() @ h)) * float(np.trace(W).real)
        if q <= nx.RANK_TOL_FACTOR * max(ceiling, 0.0):
            # SINR constraint inactive at this beam; keep feasibility by
            # zeroing it and folding the whole block into the probe
            log.debug("degenerate beam reconstruction, folding into R0")
            ws.append(np.zeros_like(h, dtype=complex))
            R0 = R0 + W
            continue
        w = (W @ h) / np.sqrt(q)
        ws.append(_phase_fix(w))
        R0 = R0 + W - np.outer(w, w.conj())
    return tuple(ws), nx.hermitize(R0)


def restructure_r0_zero(W_list, R0_star, h_list):
    """Fold the probe covariance into one user's W (Type-I receivers only).

    The receiving user is the one extracting the most power from R0;
    every Type-I SINR left side weakly improves and the sum covariance
    is unchanged.  Ties resolve to the lowest index.
    """
    gains = np.array(
        [float(np.real(h.conj() @ R0_star @ h)) for h in h_list]
    )
    i_star = int(np.argmax(gains))
    out = list(np.asarray(W, dtype=complex) for W in W_list)
    out[i_star] = out[i_star] + np.asarray(R0_star, dtype=complex)
    return tuple(out)


def check_sensing_null_space(sol, h1):
    """Power the probe covariance leaks into the single user's channel."""
    return float(np.real(h1.conj() @ sol.R0 @ h1))


# relative slack below which a row counts as binding for the polish,
# and the largest per-block power rescale the polish may apply
POLISH_SLACK = 1e-3
POLISH_CAP = 1e-3


def polish_powers(W_star, R0_star, h_list, cfg, receiver_type):
    """Rescale each covariance block so binding rows hold to round-off.

    Interior-point iterates meet binding constraints only to the
    solver's residual floor, which on badly scaled instances can sit
    above 1e-6 relative on rows whose right side is small.  At that
    accuracy the binding set is unambiguous, so solving the binding
    rows as a small linear system in per-block power factors repairs
    feasibility to machine precision without leaving the span of the
    relaxed solution.  Any doubt (sign flips, factors beyond
    POLISH_CAP, leftover violation) returns the input unchanged.
    """
    K = len(W_star)
    gam = np.asarray(cfg.gamma_k, dtype=float)
    sig = np.asarray(cfg.sigma_k_sq, dtype=float)
    own = np.zeros(K)
    cross = np.zeros((K, K))
    r0q = np.zeros(K)
    for k, h in enumerate(h_list):
        for i in range(K):
            cross[k, i] = float(np.real(h.conj() @ W_star[i] @ h))
        own[k] = cross[k, k]
        cross[k, k] = 0.0
        if receiver_type == "I":
            r0q[k] = float(np.real(h.conj() @ R0_star @ h))
    Pw = np.array([float(np.trace(W).real) for W in W_star])
    t0 = float(np.trace(R0_star).real)
    P0 = cfg.P0

    def ratios(s, sq):
        den = gam * (cross @ s + r0q * sq + sig)
        return np.divide(own * s, den, out=np.full(K, np.inf), where=den > 0)

    s = np.ones(K)
    sq = 1.0
    binding = ratios(s, sq) - 1.0 < POLISH_SLACK
    if np.any(binding & (own <= 0.0)):
        return W_star, R0_star
    E = np.diag(own / gam) - cross
    Eb = E[binding]
    # the probe trace and the interference it causes couple the two
    # repair steps, so alternate them; the coupling is tiny and two or
    # three passes reach round-off
    for _ in range(6):
        if np.any(binding):
            f = sig[binding] + r0q[binding] * sq
            xi, *_ = np.linalg.lstsq(Eb, f - Eb @ s, rcond=None)
            s = s + xi
        tw = float(Pw @ s)
        if t0 > 1e-12 * max(P0, tw):
            sq = (P0 - tw) / t0
        elif tw > P0:
            s = s * (P0 / tw)
        g = ratios(s, sq)
        power = float(Pw @ s) + t0 * sq
        if np.all(g >= 1.0 - 1e-12) and power <= P0 * (1.0 + 1e-13):
            break

    g = ratios(s, sq)
    power = float(Pw @ s) + t0 * sq
    ok = (
        bool(np.all(np.isfinite(s)))
        and np.isfinite(sq)
        and bool(np.all(s > 0.0))
        and sq >= 0.0
        and float(np.max(np.abs(s - 1.0))) <= POLISH_CAP
        and abs(sq - 1.0) * t0 <= POLISH_CAP * P0
        and bool(np.all(g >= 1.0 - 1e-9))
        and power <= P0 * (1.0 + 1e-12)
    )
    if not ok:
        log.debug("power polish rejected, keeping raw solver block scales")
        return W_star, R0_star
    return tuple(sk * W for sk, W in zip(s, W_star)), sq * R0_star


def _trace_coeff(ref_list, C):
    return [(ref, C) for ref in ref_list]


def _add_sinr_rows(prob, W_refs, R0_ref, h_list, cfg, receiver_type):
    K = len(W_refs)
    for k in range(K):
        h = h_list[k]
        nrm = float(np.real(h.conj() @ h))
        Hk = np.outer(h, h.conj()) / nrm
        gamma = cfg.gamma_k[k]
        terms = [(W_refs[k], Hk / gamma)]
        for i in range(K):
            if i != k:
                terms.append((W_refs[i], -Hk))
        if receiver_type == "I":
            terms.append((R0_ref, -Hk))
        prob.add_ge(terms, cfg.sigma_k_sq[k] / nrm)


def _add_power_row(prob, W_refs, R0_ref, M, P0):
    eye = np.eye(M)
    prob.add_le(_trace_coeff(list(W_refs) + [R0_ref], eye), P0)


def _check_receiver(receiver_type):
    if receiver_type not in ("I", "II"):
        raise nx.InvalidInput(f"receiver_type {receiver_type!r}")


def _solution_values(sol, W_refs, R0_ref):
    W_star = tuple(nx.hermitize(sol.value(r)) for r in W_refs)
    R0_star = nx.hermitize(sol.value(R0_ref))
    return W_star, R0_star


def _reduce(W_star, R0_star, h_list, receiver_type):
    # Type-I: the probe can always be absorbed into one user's beam with
    # the same sum covariance and no SINR loss, which also realizes the
    # K=1 null-space structure of the returned R0
    if receiver_type == "I":
        W_in = restructure_r0_zero(W_star, R0_star, h_list)
        R0_in = np.zeros_like(R0_star)
    else:
        W_in, R0_in = W_star, R0_star
    return extract_rank_one(W_in, R0_in, h_list)


def solve_tx_extended(ch, v, cfg, receiver_type="I"):
    """Min-CRB covariances for the matrix-valued (extended) target."""
    _check_receiver(receiver_type)
    G = ch.G
    N, M = G.shape
    K = cfg.K
    sv = np.linalg.svd(G, compute_uv=False)
    if sv.size < N or sv[-1] <= nx.RANK_TOL_FACTOR * sv[0]:
        return _failed(M, K, "Infeasible", "forward channel rank below N")
    h_list = [sc.combined_channel(ch, v, k) for k in range(K)]
    if any(float(np.real(h.conj() @ h)) == 0.0 for h in h_list):
        return _failed(M, K, "Infeasible", "vanishing user channel")

    g0 = sv[0]
    Gb = G / g0
    # balance the two lift blocks before solving: under a uniform-power
    # prior R_x ~ (P0/M) I the lower-right block averages tr(Q0)/N per
    # eigenvalue and the upper-left tr(Q0^-1)/N, and leaving them orders
    # of magnitude apart collapses the homogeneous embedding's tau,
    # which sets the residual floor the iterates can reach
    lam0 = np.linalg.eigvalsh((cfg.P0 / M) * (Gb @ Gb.conj().T))
    b2 = N / float(lam0.sum())
    ab = float(np.sqrt(b2 * N / (1.0 / lam0).sum()))

    prob = ConicProblem()
    W_refs = [prob.add_hermitian(M) for _ in range(K)]
    R0_ref = prob.add_hermitian(M)
    Y_ref = prob.add_hermitian(2 * N)

    obj_sel = np.diag(np.concatenate([np.ones(N), np.zeros(N)]))
    prob.minimize([(Y_ref, obj_sel)])

    _add_sinr_rows(prob, W_refs, R0_ref, h_list, cfg, receiver_type)
    _add_power_row(prob, W_refs, R0_ref, M, cfg.P0)

    # off-diagonal block of the lift pinned to a multiple of the identity
    for i in range(N):
        for j in range(N):
            rhs = ab if i == j else 0.0
            prob.add_eq([(Y_ref, herm_entry_re(2 * N, i, N + j))], rhs)
            prob.add_eq([(Y_ref, herm_entry_im(2 * N, i, N + j))], 0.0)
    # lower-right block tied to b2 * Gb R_x Gb^H
    cov_refs = list(W_refs) + [R0_ref]
    for i in range(N):
        for j in range(i + 1):
            Cij = b2 * np.outer(Gb[j].conj(), Gb[i])
            prob.add_eq(
                [(Y_ref, herm_entry_re(2 * N, N + i, N + j))]
                + _trace_coeff(cov_refs, -Cij),
                0.0,
            )
            if i != j:
                prob.add_eq(
                    [(Y_ref, herm_entry_im(2 * N, N + i, N + j))]
                    + _trace_coeff(cov_refs, 1j * Cij),
                    0.0,
                )

    sol = prob.solve(_TX_OPTS)
    if sol.status == Status.Infeasible:
        return _failed(M, K, "Infeasible", "SINR set empty at this phase")
    if sol.status == Status.Unbounded:
        return _failed(M, K, "Unbounded", "unexpected unbounded relaxation")
    resid = max(sol.pres, sol.dres, sol.relgap)
    if sol.status == Status.NumericalLimit and resid > USABLE_RESID:
        return _failed(M, K, "NumericalLimit", f"stalled at resid {resid:.2e}")

    W_star, R0_star = _solution_values(sol, W_refs, R0_ref)
    W_star, R0_star = polish_powers(W_star, R0_star, h_list, cfg, receiver_type)
    ws, R0 = _reduce(W_star, R0_star, h_list, receiver_type)
    tx = mx.TxCovariance(tuple(np.outer(w, w.conj()) for w in ws), R0)
    rep = mx.crb_extended(G, tx, cfg.sigma_R_sq, cfg.T)
    return TxSolution(
        w=ws,
        R0=R0,
        relaxed=(W_star, R0_star),
        objective=rep.crb_value if rep.finite else float("inf"),
        solver_status=_status_name(sol),
        solver_iters=sol.raw.iters,
    )


def solve_tx_point(ch, v, cfg, receiver_type="I"):
    """Min-CRB covariances for the angle of a point target."""
    _check_receiver(receiver_type)
    G = ch.G
    N, M = G.shape
    K = cfg.K
    b, bdot = mx._point_bvecs(ch, v)
    if np.linalg.norm(b) <= nx.RANK_TOL_FACTOR * np.linalg.norm(G) * np.sqrt(N):
        raise nx.DegenerateGeometry("target invisible through the array")
    h_list = [sc.combined_channel(ch, v, k) for k in range(K)]
    if any(float(np.real(h.conj() @ h)) == 0.0 for h in h_list):
        return _failed(M, K, "Infeasible", "vanishing user channel")

    B = np.outer(b, b)
    Bd = np.outer(bdot, b) + np.outer(b, bdot)
    s_b = np.linalg.norm(B)
    s_d = np.linalg.norm(Bd)
    if s_d == 0.0:
        s_d = 1.0  # derivative vanishes; u is forced to 0 below
    C_dd = (Bd.conj().T @ Bd) / s_d**2
    C_bd = (Bd.conj().T @ B) / (s_d * s_b)
    C_bb = (B.conj().T @ B) / s_b**2

    prob = ConicProblem()
    W_refs = [prob.add_hermitian(M) for _ in range(K)]
    R0_ref = prob.add_hermitian(M)
    L_ref = prob.add_hermitian(2)
    u_ref = prob.add_nonneg(1)

    prob.maximize([(u_ref, 1.0)])
    _add_sinr_rows(prob, W_refs, R0_ref, h_list, cfg, receiver_type)
    _add_power_row(prob, W_refs, R0_ref, M, cfg.P0)

    cov_refs = list(W_refs) + [R0_ref]
    prob.add_eq(
        [(L_ref, herm_entry_re(2, 0, 0)), (u_ref, 1.0)]
        + _trace_coeff(cov_refs, -C_dd),
        0.0,
    )
    prob.add_eq(
        [(L_ref, herm_entry_re(2, 0, 1))] + _trace_coeff(cov_refs, -C_bd),
        0.0,
    )
    prob.add_eq(
        [(L_ref, herm_entry_im(2, 0, 1))] + _trace_coeff(cov_refs, 1j * C_bd),
        0.0,
    )
    prob.add_eq(
        [(L_ref, herm_entry_re(2, 1, 1))] + _trace_coeff(cov_refs, -C_bb),
        0.0,
    )

    sol = prob.solve(_TX_OPTS)
    if sol.status == Status.Infeasible:
        return _failed(M, K, "Infeasible", "SINR set empty at this phase")
    if sol.status == Status.Unbounded:
        return _failed(M, K, "Unbounded", "unexpected unbounded relaxation")
    resid = max(sol.pres, sol.dres, sol.relgap)
    if sol.status == Status.NumericalLimit and resid > USABLE_RESID:
        return _failed(M, K, "NumericalLimit", f"stalled at resid {resid:.2e}")

    W_star, R0_star = _solution_values(sol, W_refs, R0_ref)
    W_star, R0_star = polish_powers(W_star, R0_star, h_list, cfg, receiver_type)
    ws, R0 = _reduce(W_star, R0_star, h_list, receiver_type)
    tx = mx.TxCovariance(tuple(np.outer(w, w.conj()) for w in ws), R0)
    rep = mx.crb_point_tx_form(ch, v, tx, cfg.sigma_R_sq, cfg.T)
    return TxSolution(
        w=ws,
        R0=R0,
        relaxed=(W_star, R0_star),
        objective=rep.crb_value if rep.finite else float("inf"),
        solver_status=_status_name(sol),
        solver_iters=sol.raw.iters,
    )


def solve_tx(ch, v, cfg, target, receiver_type="I"):
    if target == "extended":
        return solve_tx_extended(ch, v, cfg, receiver_type)
    if target == "point":
        return solve_tx_point(ch, v, cfg, receiver_type)
    raise nx.InvalidInput(f"target {target!r}")
