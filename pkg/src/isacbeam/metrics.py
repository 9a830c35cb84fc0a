"""SINR and estimation-theoretic figures of merit.

Covers both receiver models (Type I treats the sensing beam as
interference, Type II cancels it) and both target models: the extended
response matrix (trace-inverse CRB, Kronecker FIM) and the point target
DoA (3x3 FIM, with equivalent transmit-side and reflect-side closed
forms).
"""

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .scenario import combined_channel, steering, steering_derivative


@dataclass(frozen=True)
class TxCovariance:
    """Transmit covariance split into per-CU information beams W_k and
    a dedicated sensing part R0; R_x = sum_k W_k + R0."""

    W: tuple
    R0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "W", tuple(np.asarray(w, dtype=complex) for w in self.W))
        object.__setattr__(self, "R0", np.asarray(self.R0, dtype=complex))

    @property
    def R_x(self):
        R = self.R0.copy()
        for w in self.W:
            R = R + w
        return nx.hermitize(R)

    @property
    def power(self):
        return float(np.real(np.trace(self.R_x)))


@dataclass(frozen=True)
class CrbReport:
    crb_value: float
    finite: bool
    components: dict = field(default_factory=dict)

    @property
    def crb_db(self):
        if not self.finite:
            return np.inf
        return 10.0 * np.log10(self.crb_value)


def _quad(h, A):
    return float(np.real(h.conj() @ A @ h))


def sinr(ch, v, tx, k, receiver_type, sigma_k_sq):
    """Per-CU SINR. Type I counts the sensing beam as interference;
    Type II assumes it is known and cancelled."""
    if receiver_type not in ("I", "II"):
        raise nx.InvalidInput(f"unknown receiver type {receiver_type!r}")
    h = combined_channel(ch, v, k)
    num = _quad(h, tx.W[k])
    den = float(sigma_k_sq)
    for i, w in enumerate(tx.W):
        if i != k:
            den += _quad(h, w)
    if receiver_type == "I":
        den += _quad(h, tx.R0)
    return num / den


def crb_extended(G, tx, sigma_R_sq, T):
    """Trace-inverse CRB of the extended response. Finite only when
    rank(G) = N and rank(R_x) >= N."""
    G = np.asarray(G, dtype=complex)
    N = G.shape[0]
    sv = np.linalg.svd(G, compute_uv=False)
    if sv.size < N or sv[-1] <= nx.RANK_TOL_FACTOR * sv[0]:
        return CrbReport(np.nan, False, {"reason": "rank(G) < N"})
    Rx = tx.R_x
    try:
        t_sig = nx.trace_inverse(nx.hermitize(G @ Rx @ G.conj().T))
        t_geo = nx.trace_inverse(nx.hermitize(G @ G.conj().T))
    except nx.SingularMatrix:
        return CrbReport(np.nan, False, {"reason": "rank(R_x) < N"})
    val = (sigma_R_sq / T) * t_sig * t_geo
    return CrbReport(val, True, {"tr_inv_signal": t_sig, "tr_inv_geometry": t_geo})


def fim_extended_full(G, v, tx, sigma_R_sq, T):
    """Full 2N^2 x 2N^2 FIM of (Re vec H, Im vec H) for the extended
    response observed through Phi G."""
    G = np.asarray(G, dtype=complex)
    v = np.asarray(v)
    PhiG = v[:, None] * G
    A_mat = np.conj(PhiG @ tx.R_x @ PhiG.conj().T)
    B_mat = np.conj(PhiG @ PhiG.conj().T)
    kron = np.kron(nx.hermitize(A_mat), nx.hermitize(B_mat))
    return (2.0 * T / sigma_R_sq) * nx.real_embed(kron)


def _point_bvecs(ch, v):
    N = ch.G.shape[0]
    a = steering(ch.theta, N, ch.d_over_lambda)
    adot = steering_derivative(ch.theta, N, ch.d_over_lambda)
    v = np.asarray(v)
    b = ch.G.T @ (v * a)
    bdot = ch.G.T @ (v * adot)
    return b, bdot


def _point_traces(ch, v, tx):
    b, bdot = _point_bvecs(ch, v)
    B = np.outer(b, b)
    Bdot = np.outer(bdot, b) + np.outer(b, bdot)
    Rx = tx.R_x
    t_dd = float(np.real(np.trace(Bdot @ Rx @ Bdot.conj().T)))
    t_bd = complex(np.trace(B @ Rx @ Bdot.conj().T))
    t_bb = float(np.real(np.trace(B @ Rx @ B.conj().T)))
    return t_dd, t_bd, t_bb


def fim_point(ch, v, tx, sigma_R_sq, T):
    """3x3 FIM of (theta, Re alpha, Im alpha)."""
    t_dd, t_bd, t_bb = _point_traces(ch, v, tx)
    alpha = ch.alpha
    pref = 2.0 * T / sigma_R_sq
    F = np.zeros((3, 3))
    F[0, 0] = pref * abs(alpha) ** 2 * t_dd
    c = np.conj(alpha) * t_bd
    F[0, 1] = F[1, 0] = pref * np.real(c)
    F[0, 2] = F[2, 0] = -pref * np.imag(c)
    F[1, 1] = F[2, 2] = pref * t_bb
    return F


def crb_point_tx_form(ch, v, tx, sigma_R_sq, T):
    """DoA CRB in the transmit-side form (traces of B, Bdot against R_x)."""
    t_dd, t_bd, t_bb = _point_traces(ch, v, tx)
    b, bdot = _point_bvecs(ch, v)
    Rx = tx.R_x
    lam_max = float(np.linalg.eigvalsh(Rx)[-1]) if Rx.size else 0.0
    illum_scale = (np.linalg.norm(b) ** 4) * lam_max
    if t_bb <= nx.RANK_TOL_FACTOR * max(illum_scale, 1e-300):
        return CrbReport(np.nan, False, {"reason": "zero illumination"})
    den = t_dd - abs(t_bd) ** 2 / t_bb
    den_scale = max(t_dd, abs(t_bd) ** 2 / t_bb)
    if den <= nx.RANK_TOL_FACTOR * max(den_scale, 1e-300):
        return CrbReport(np.nan, False, {"reason": "derivative direction unobserved"})
    if abs(ch.alpha) == 0.0:
        return CrbReport(np.nan, False, {"reason": "alpha = 0"})
    val = sigma_R_sq / (2.0 * T * abs(ch.alpha) ** 2 * den)
    return CrbReport(val, True, {"t_dd": t_dd, "t_bd": t_bd, "t_bb": t_bb})


def point_reflect_data(ch, tx):
    """(R1, R2, D, prefactor_no_cos) for the reflect-side DoA CRB form.

    R1 = diag(a^H) conj(G) G^T diag(a), R2 uses conj(R_x) between the
    G factors, D = diag(0..N-1)."""
    N = ch.G.shape[0]
    a = steering(ch.theta, N, ch.d_over_lambda)
    Da = np.diag(a)
    DaH = np.diag(np.conj(a))
    Gc = np.conj(ch.G)
    R1 = nx.hermitize(DaH @ Gc @ ch.G.T @ Da)
    R2 = nx.hermitize(DaH @ Gc @ np.conj(tx.R_x) @ ch.G.T @ Da)
    D = np.diag(np.arange(N, dtype=float))
    return R1, R2, D


def crb_point_reflect_form(ch, v, tx, sigma_R_sq, T):
    """DoA CRB in the reflect-side form (quadratics of v against R1, R2, D)."""
    cos_t = np.cos(ch.theta)
    if abs(cos_t) <= 1e-12:
        raise nx.DegenerateGeometry("cos(theta) = 0: endfire target")
    if abs(ch.alpha) == 0.0:
        return CrbReport(np.nan, False, {"reason": "alpha = 0"})
    R1, R2, D = point_reflect_data(ch, tx)
    v = np.asarray(v)
    q1 = _quad(v, R1)
    q2 = _quad(v, R2)
    scale = max(np.abs(R1).max(), 1e-300) * max(np.abs(R2).max(), 1e-300) * v.size**2
    if q1 <= 0 or q2 <= 0 or q1 * q2 <= nx.RANK_TOL_FACTOR * scale:
        return CrbReport(np.nan, False, {"reason": "zero illumination"})
    Dv = D @ v
    s1 = complex(v.conj() @ R1 @ Dv)
    s2 = complex(v.conj() @ R2 @ Dv)
    p1 = _quad(Dv, R1)
    p2 = _quad(Dv, R2)
    den = q2 * (p1 - abs(s1) ** 2 / q1) + q1 * (p2 - abs(s2) ** 2 / q2)
    den_scale = q2 * p1 + q1 * p2
    if den <= nx.RANK_TOL_FACTOR * max(den_scale, 1e-300):
        return CrbReport(np.nan, False, {"reason": "derivative direction unobserved"})
    # lambda^2 / d_IRS^2 = 1 / d_over_lambda^2
    pref = sigma_R_sq / (
        8.0 * T * abs(ch.alpha) ** 2 * np.pi**2 * ch.d_over_lambda**2 * cos_t**2
    )
    val = pref / den
    return CrbReport(
        val, True, {"q1": q1, "q2": q2, "p1": p1, "p2": p2, "s1": s1, "s2": s2}
    )


def ls_estimate_trm(Y, X, G, v):
    """Least-squares estimate of the extended response from one frame:
    vec(Y) = (X^T G^T Phi^T kron G^T Phi^T) vec(H) + noise."""
    Y = np.asarray(Y, dtype=complex)
    X = np.asarray(X, dtype=complex)
    G = np.asarray(G, dtype=complex)
    v = np.asarray(v)
    N = G.shape[0]
    PhiG_T = (v[:, None] * G).T  # G^T Phi^T
    A = np.kron(X.T @ PhiG_T, PhiG_T)
    sv = np.linalg.svd(A, compute_uv=False)
    if A.shape[0] < N * N or sv[-1] <= nx.RANK_TOL_FACTOR * sv[0]:
        raise nx.SingularMatrix("stacked observation matrix is rank-deficient")
    h, *_ = np.linalg.lstsq(A, nx.vec(Y), rcond=None)
    return nx.unvec(h, N, N)
