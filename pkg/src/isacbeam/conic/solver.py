"""Dense homogeneous self-dual interior-point solver.

Standard form: minimize c.x subject to A x = b, x in K, where K is a
Cartesian product of real symmetric PSD blocks (svec coordinates) and a
nonnegative-orthant tail. Nesterov-Todd scaling on PSD blocks, Mehrotra
predictor-corrector steps, homogeneous embedding for infeasibility and
unboundedness certificates. Deterministic: fixed iteration schedule, no
randomized pivoting.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels

log = logging.getLogger("isacbeam.conic")


class Status(Enum):
    Optimal = "Optimal"
    Infeasible = "Infeasible"
    Unbounded = "Unbounded"
    NumericalLimit = "NumericalLimit"


@dataclass
class SolveOptions:
    eps_feas: float = 1e-7
    eps_gap: float = 1e-7
    max_iters: int = 200
    step_frac: float = 0.98
    ruiz_iters: int = 8
    static_reg: float = 1e-13


@dataclass
class StandardConic:
    """min c.x s.t. A x = b, x in PSD(psd_dims) x R+^nonneg (svec coords)."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    psd_dims: list
    nonneg: int


@dataclass
class RawSolution:
    status: Status
    x: np.ndarray = None  # x/tau, original scaling
    y: np.ndarray = None
    z: np.ndarray = None
    pobj: float = np.nan
    dobj: float = np.nan
    pres: float = np.nan
    dres: float = np.nan
    relgap: float = np.nan
    iters: int = 0
    cert: dict = field(default_factory=dict)


class _Layout:
    def __init__(self, psd_dims, nonneg):
        self.psd_dims = [int(n) for n in psd_dims]
        self.nonneg = int(nonneg)
        self.offs = []
        off = 0
        for n in self.psd_dims:
            self.offs.append(off)
            off += n * (n + 1) // 2
        self.nn_off = off
        self.dim = off + self.nonneg
        self.nu = sum(self.psd_dims) + self.nonneg

    def psd_seg(self, k):
        n = self.psd_dims[k]
        return slice(self.offs[k], self.offs[k] + n * (n + 1) // 2)

    def nn_seg(self):
        return slice(self.nn_off, self.dim)


def _psd_factor(X):
    """Factor X = F F^T for symmetric positive definite X, with an
    eigenvalue-floor fallback when Cholesky fails from roundoff."""
    try:
        return np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        w, Q = np.linalg.eigh(0.5 * (X + X.T))
        floor = max(w.max(), 1.0) * 1e-14
        return Q * np.sqrt(np.maximum(w, floor))


def _nt_block(Xs, Zs):
    """NT scaling point of one PSD block: returns (R, lam) with
    R^{-1} X R^{-T} = R^T Z R = diag(lam)."""
    Lx = _psd_factor(Xs)
    Lz = _psd_factor(Zs)
    U, s, Vt = np.linalg.svd(Lz.T @ Lx)
    s = np.maximum(s, 1e-300)
    R = (Lx @ Vt.T) / np.sqrt(s)
    return R, s


def _equilibrate(A, b, c, layout, iters):
    """Ruiz-style scaling: per-row scalars and per-PSD-block scalars
    (block-uniform column scaling is a congruence, so the cone is
    preserved)."""
    m, d = A.shape
    As = A.copy()
    dr = np.ones(m)
    dc = np.ones(d)
    nn = layout.nn_seg()
    for _ in range(iters):
        rmax = np.abs(As).max(axis=1)
        rmax[rmax == 0] = 1.0
        sr = 1.0 / np.sqrt(rmax)
        As *= sr[:, None]
        dr *= sr
        for k in range(len(layout.psd_dims)):
            seg = layout.psd_seg(k)
            bmax = np.abs(As[:, seg]).max()
            if bmax > 0:
                sb = 1.0 / np.sqrt(bmax)
                As[:, seg] *= sb
                dc[seg] *= sb
        if layout.nonneg:
            cmax = np.abs(As[:, nn]).max(axis=0)
            cmax[cmax == 0] = 1.0
            sc = 1.0 / np.sqrt(cmax)
            As[:, nn] *= sc
            dc[nn] *= sc
    bs = b * dr
    cs = c * dc
    beta_b = max(1.0, np.abs(bs).max(initial=0.0))
    beta_c = max(1.0, np.abs(cs).max(initial=0.0))
    return As, bs / beta_b, cs / beta_c, dr, dc, beta_b, beta_c


def solve_standard(sc, opts=None):
    opts = opts or SolveOptions()
    layout = _Layout(sc.psd_dims, sc.nonneg)
    A0 = np.ascontiguousarray(sc.A, dtype=float)
    b0 = np.asarray(sc.b, dtype=float)
    c0 = np.asarray(sc.c, dtype=float)
    m, d = A0.shape
    if d != layout.dim or b0.shape != (m,) or c0.shape != (d,):
        raise ValueError("inconsistent problem dimensions")
    if not (np.all(np.isfinite(A0)) and np.all(np.isfinite(b0)) and np.all(np.isfinite(c0))):
        raise ValueError("non-finite problem data")

    As, bs, cs, dr, dc, beta_b, beta_c = _equilibrate(
        A0, b0, c0, layout, opts.ruiz_iters
    )
    nblk = len(layout.psd_dims)
    nn = layout.nn_seg()
    has_nn = layout.nonneg > 0

    # per-block stacks of the scaled constraint matrices, plus active rows
    A_mats, act_rows = [], []
    for k in range(nblk):
        nk = layout.psd_dims[k]
        seg = As[:, layout.psd_seg(k)]
        act = np.flatnonzero(np.abs(seg).max(axis=1) > 0)
        act_rows.append(act)
        A_mats.append(np.ascontiguousarray(kernels.smat_batch(seg[act], nk)))
    c_mats = [kernels.smat(cs[layout.psd_seg(k)], layout.psd_dims[k]) for k in range(nblk)]

    # interior start
    x = np.zeros(d)
    z = np.zeros(d)
    for k in range(nblk):
        ide = kernels.svec(np.eye(layout.psd_dims[k]))
        x[layout.psd_seg(k)] = ide
        z[layout.psd_seg(k)] = ide
    x[nn] = 1.0
    z[nn] = 1.0
    y = np.zeros(m)
    tau, kappa = 1.0, 1.0

    nu1 = layout.nu + 1
    normb = 1.0 + np.linalg.norm(b0)
    normc = 1.0 + np.linalg.norm(c0)
    amax = 1.0 + np.abs(A0).max(initial=0.0)
    best = None
    best_score = np.inf

    def original_point():
        xo = dc * x * beta_b
        yo = dr * y * beta_c
        zo = (beta_c / dc) * z
        return xo, yo, zo

    def metrics(xo, yo, zo):
        xt, yt, zt = xo / tau, yo / tau, zo / tau
        pres = np.linalg.norm(A0 @ xt - b0) / normb
        dres = np.linalg.norm(A0.T @ yt + zt - c0) / normc
        pobj = float(c0 @ xt)
        dobj = float(b0 @ yt)
        gap = float(xt @ zt)
        rel = max(gap, abs(pobj - dobj)) / (1.0 + abs(pobj) + abs(dobj))
        return pres, dres, rel, pobj, dobj

    it = 0
    for it in range(opts.max_iters):
        xo, yo, zo = original_point()
        pres, dres, rel, pobj, dobj = metrics(xo, yo, zo)
        score = max(pres, dres, rel)
        if score < best_score:
            best_score = score
            best = (xo / tau, yo / tau, zo / tau, pres, dres, rel, pobj, dobj)
        log.debug(
            "it=%2d pres=%.2e dres=%.2e relgap=%.2e tau=%.2e kappa=%.2e",
            it, pres, dres, rel, tau, kappa,
        )
        if pres <= opts.eps_feas and dres <= opts.eps_feas and rel <= opts.eps_gap:
            return RawSolution(
                Status.Optimal, xo / tau, yo / tau, zo / tau,
                pobj, dobj, pres, dres, rel, it,
            )
        # certificates from the homogeneous embedding; only trusted once
        # tau has collapsed relative to kappa, and judged against the
        # size of the terms entering the residual so one huge data entry
        # cannot loosen the test
        by = float(b0 @ yo)
        cx = float(c0 @ xo)
        if by > 0 and 10.0 * tau < kappa:
            yn, zn = yo / by, zo / by
            res = np.abs(A0.T @ yn + zn).max(initial=0.0)
            den = amax * np.abs(yn).max(initial=0.0) + np.abs(zn).max(initial=0.0)
            if res <= opts.eps_feas * max(den, 1.0):
                return RawSolution(
                    Status.Infeasible, iters=it,
                    cert={"y": yn, "z": zn, "kind": "primal_infeasible"},
                )
        if cx < 0 and 10.0 * tau < kappa:
            xn = xo / (-cx)
            res = np.abs(A0 @ xn).max(initial=0.0)
            den = amax * np.abs(xn).max(initial=0.0)
            if res <= opts.eps_feas * max(den, 1.0):
                return RawSolution(
                    Status.Unbounded, iters=it,
                    cert={"x": xn, "kind": "dual_infeasible"},
                )

        mu = (float(x @ z) + tau * kappa) / nu1
        if mu <= 1e-300 or tau <= 1e-14:
            break

        # NT scaling per block
        Rs, lams = [], []
        for k in range(nblk):
            nk = layout.psd_dims[k]
            R, lam = _nt_block(
                kernels.smat(x[layout.psd_seg(k)], nk),
                kernels.smat(z[layout.psd_seg(k)], nk),
            )
            Rs.append(R)
            lams.append(lam)
        if has_nn:
            xn_, zn_ = x[nn], z[nn]
            w_nn = np.sqrt(xn_ / zn_)
            lam_nn = np.sqrt(xn_ * zn_)

        # scaled constraint matrix V: rows_i = svec(R^T A_i R) per block
        V = np.zeros((m, d))
        for k in range(nblk):
            if act_rows[k].size:
                seg = layout.psd_seg(k)
                cols = np.arange(seg.start, seg.stop)
                V[np.ix_(act_rows[k], cols)] = kernels.congruence_svec(Rs[k], A_mats[k])
        if has_nn:
            V[:, nn] = As[:, nn] * w_nn[None, :]

        chat = np.zeros(d)
        for k in range(nblk):
            chat[layout.psd_seg(k)] = kernels.svec(Rs[k].T @ c_mats[k] @ Rs[k])
        if has_nn:
            chat[nn] = cs[nn] * w_nn

        M = V @ V.T
        reg = opts.static_reg * max(1.0, np.trace(M) / max(m, 1))
        M[np.diag_indices_from(M)] += reg
        try:
            L = np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            M[np.diag_indices_from(M)] += 1e6 * reg
            L = np.linalg.cholesky(M)

        def msolve(rhs):
            # refine against the unregularized normal matrix so the static
            # regularization only biases the preconditioner, not the step;
            # bail out as soon as a pass stops reducing the residual
            s = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
            r = rhs - V @ (V.T @ s)
            rn = float(np.linalg.norm(r))
            for _ in range(3):
                if rn <= 1e-14 * max(1.0, float(np.linalg.norm(rhs))):
                    break
                s_try = s + np.linalg.solve(L.T, np.linalg.solve(L, r))
                r_try = rhs - V @ (V.T @ s_try)
                rn_try = float(np.linalg.norm(r_try))
                if not np.isfinite(rn_try) or rn_try >= rn:
                    break
                s, r, rn = s_try, r_try, rn_try
            return s

        y2 = msolve(bs + V @ chat)
        xh2 = V.T @ y2 - chat
        denom = float(bs @ y2 - chat @ xh2 + kappa / tau)

        rp = As @ x - bs * tau
        rd = -As.T @ y - z + cs * tau
        rg = float(bs @ y - cs @ x - kappa)

        lam_vec = np.zeros(d)
        for k in range(nblk):
            lam_vec[layout.psd_seg(k)] = kernels.svec(np.diag(lams[k]))
        if has_nn:
            lam_vec[nn] = lam_nn

        def qhat_of(rd_scaled):
            out = np.zeros(d)
            for k in range(nblk):
                nk = layout.psd_dims[k]
                Q = kernels.smat(rd_scaled[layout.psd_seg(k)], nk)
                out[layout.psd_seg(k)] = kernels.svec(Rs[k].T @ Q @ Rs[k])
            if has_nn:
                out[nn] = rd_scaled[nn] * w_nn
            return out

        def direction(eta, d_blocks, d_nn, d_tau):
            """Newton direction for residual weight eta and
            complementarity targets d (scaled space)."""
            hh = np.zeros(d)
            for k in range(nblk):
                hh[layout.psd_seg(k)] = kernels.svec(
                    kernels.jordan_ldiv(lams[k], d_blocks[k])
                )
            if has_nn:
                hh[nn] = d_nn / lam_nn
            qh = qhat_of(-eta * rd)
            y1 = msolve(-eta * rp - V @ (hh + qh))
            xh1 = hh + qh + V.T @ y1
            dtau = (-eta * rg + d_tau / tau - float(bs @ y1) + float(chat @ xh1)) / denom
            dy = y1 + dtau * y2
            xh = xh1 + dtau * xh2
            zh = hh - xh
            dz = -As.T @ dy + cs * dtau + eta * rd
            dkappa = (d_tau - kappa * dtau) / tau
            return xh, zh, dy, dz, dtau, dkappa

        def max_step(xh, zh, dtau, dkappa):
            alpha = np.inf
            if dtau < 0:
                alpha = min(alpha, -tau / dtau)
            if dkappa < 0:
                alpha = min(alpha, -kappa / dkappa)
            for k in range(nblk):
                nk = layout.psd_dims[k]
                isq = 1.0 / np.sqrt(lams[k])
                for hvec in (xh, zh):
                    H = kernels.smat(hvec[layout.psd_seg(k)], nk)
                    H = H * isq[:, None] * isq[None, :]
                    wmin = np.linalg.eigvalsh(H)[0]
                    if wmin < 0:
                        alpha = min(alpha, -1.0 / wmin)
            if has_nn:
                for hvec in (xh, zh):
                    hseg = hvec[nn]
                    neg = hseg < 0
                    if np.any(neg):
                        alpha = min(alpha, float(np.min(-lam_nn[neg] / hseg[neg])))
            return alpha

        # predictor
        d_blocks = [np.diag(-lams[k] ** 2) for k in range(nblk)]
        d_nn = -(lam_nn**2) if has_nn else None
        xh_a, zh_a, _, _, dtau_a, dkappa_a = direction(1.0, d_blocks, d_nn, -tau * kappa)
        a_aff = min(1.0, max_step(xh_a, zh_a, dtau_a, dkappa_a))
        lin = float(lam_vec @ (xh_a + zh_a)) + tau * dkappa_a + kappa * dtau_a
        quad = float(xh_a @ zh_a) + dtau_a * dkappa_a
        mu_aff = mu + (a_aff * lin + a_aff**2 * quad) / nu1
        sigma = min(1.0, max(0.0, (max(mu_aff, 0.0) / mu) ** 3))

        # combined corrector
        d_blocks = []
        for k in range(nblk):
            Dx = kernels.smat(xh_a[layout.psd_seg(k)], layout.psd_dims[k])
            Dz = kernels.smat(zh_a[layout.psd_seg(k)], layout.psd_dims[k])
            corr = 0.5 * (Dx @ Dz + Dz @ Dx)
            d_blocks.append(sigma * mu * np.eye(layout.psd_dims[k]) - np.diag(lams[k] ** 2) - corr)
        if has_nn:
            d_nn = sigma * mu - lam_nn**2 - xh_a[nn] * zh_a[nn]
        d_tau = sigma * mu - tau * kappa - dtau_a * dkappa_a
        xh, zh, dy, dz, dtau, dkappa = direction(1.0 - sigma, d_blocks, d_nn, d_tau)
        alpha = min(1.0, opts.step_frac * max_step(xh, zh, dtau, dkappa))
        if not np.isfinite(alpha) or alpha <= 0:
            break

        # back to unscaled primal coordinates and update
        dx = np.zeros(d)
        for k in range(nblk):
            seg = layout.psd_seg(k)
            nk = layout.psd_dims[k]
            dx[seg] = kernels.svec(Rs[k] @ kernels.smat(xh[seg], nk) @ Rs[k].T)
        if has_nn:
            dx[nn] = xh[nn] * w_nn
        x = x + alpha * dx
        z = z + alpha * dz
        y = y + alpha * dy
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

    if best is None:
        return RawSolution(Status.NumericalLimit, iters=it)
    xb, yb, zb, pres, dres, rel, pobj, dobj = best
    return RawSolution(
        Status.NumericalLimit, xb, yb, zb, pobj, dobj, pres, dres, rel, it
    )
