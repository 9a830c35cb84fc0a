"""System configuration and random channel generation.

Geometry: all arrays are ULAs along the x-axis, so only sin(angle)
between endpoints enters the steering phases. Links are Rician with
distance pathloss L(d) = K0 (d/d0)^{-a}, d0 = 1 m; the BS-CU link gets
an extra lognormal shadow term. Streams are counter-based (Philox) and
keyed per link, so adding CUs does not perturb earlier draws.
"""

from dataclasses import dataclass, field

import numpy as np

from .numerics import InvalidInput

# stream keys (spawn_key prefixes) per link kind
_STREAM_G = 0
_STREAM_CU_POS = 1
_STREAM_HD = 2
_STREAM_HR = 3
_STREAM_TRM = 4
_STREAM_ALPHA = 5
_STREAM_ECHO = 6

BS_D_OVER_LAMBDA = 0.5  # BS ULA is half-wavelength spaced


def dbm_to_watts(p_dbm):
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def db_to_linear(x_db):
    return 10.0 ** (x_db / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    M: int = 8
    N: int = 8
    K: int = 4
    T: int = 256
    P0: float = dbm_to_watts(30.0)
    sigma_R_sq: float = dbm_to_watts(-110.0)
    sigma_k_sq: tuple = None  # per-CU noise, watts
    gamma_k: tuple = None  # per-CU linear SINR thresholds
    d_over_lambda: float = 0.5
    pos_bs: tuple = (0.0, 0.0)
    pos_irs: tuple = (4.0, 5.0)
    pos_target: tuple = (4.0, 1.0)
    cu_region: tuple = ((40.0, 0.0), (50.0, -10.0))
    K0: float = db_to_linear(-30.0)
    alpha_BI: float = 2.2
    alpha_IU: float = 2.2
    alpha_BU: float = 3.0
    rician_factor: float = 0.5
    shadow_std_db: float = 10.0
    rcs: float = 1.0
    wavelength: float = 0.1

    def __post_init__(self):
        if self.sigma_k_sq is None:
            object.__setattr__(
                self, "sigma_k_sq", tuple([dbm_to_watts(-80.0)] * self.K)
            )
        if self.gamma_k is None:
            object.__setattr__(self, "gamma_k", tuple([db_to_linear(10.0)] * self.K))
        if not (self.M > 1 and self.N > 1 and self.K >= 1 and self.T >= 1):
            raise InvalidInput("need M > 1, N > 1, K >= 1, T >= 1")
        if not (self.P0 > 0 and self.sigma_R_sq > 0):
            raise InvalidInput("powers must be positive")
        if len(self.sigma_k_sq) != self.K or len(self.gamma_k) != self.K:
            raise InvalidInput("per-CU arrays must have length K")
        if any(s <= 0 for s in self.sigma_k_sq) or any(g <= 0 for g in self.gamma_k):
            raise InvalidInput("sigma_k_sq and gamma_k must be positive")
        if self.d_over_lambda <= 0:
            raise InvalidInput("d_over_lambda must be positive")

    def replace(self, **kw):
        from dataclasses import replace

        return replace(self, **kw)


@dataclass(frozen=True)
class ChannelSet:
    G: np.ndarray  # N x M
    h_d: tuple  # K vectors length M
    h_r: tuple  # K vectors length N
    theta: float  # target DoA at the IRS, radians
    alpha: complex  # round-trip reflection coefficient (point target)
    h_trm: np.ndarray  # N x N complex symmetric (extended target)
    d_over_lambda: float


def _rng(seed, *key):
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))
    )


def steering(theta, N, d_over_lambda):
    """ULA response, element n = exp(j 2 pi n (d/lambda) sin theta)."""
    n = np.arange(int(N))
    return np.exp(2j * np.pi * n * d_over_lambda * np.sin(theta))


def steering_derivative(theta, N, d_over_lambda):
    """d/dtheta of `steering` at theta."""
    n = np.arange(int(N))
    phase = 2.0 * np.pi * n * d_over_lambda
    return 1j * phase * np.cos(theta) * np.exp(1j * phase * np.sin(theta))


def _sin_from_to(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    dist = float(np.linalg.norm(q - p))
    if dist == 0.0:
        raise InvalidInput("coincident endpoints")
    return (q[0] - p[0]) / dist, dist


def _cscg(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _pathloss(cfg, dist, exponent):
    return cfg.K0 * dist ** (-exponent)


def _rician_weights(kappa):
    if np.isinf(kappa):
        return 1.0, 0.0
    return np.sqrt(kappa / (1.0 + kappa)), np.sqrt(1.0 / (1.0 + kappa))


def generate_channels(cfg, seed):
    """Draw one channel realization. Pure function of (cfg, seed).

    Both target models are populated: (theta, alpha) for the point
    target and h_trm for the extended one, so a single draw can be
    shared across target modes.
    """
    w_los, w_nlos = _rician_weights(cfg.rician_factor)

    # BS -> IRS
    sin_at_bs, d_bi = _sin_from_to(cfg.pos_bs, cfg.pos_irs)
    sin_at_irs, _ = _sin_from_to(cfg.pos_irs, cfg.pos_bs)
    a_irs = steering(np.arcsin(sin_at_irs), cfg.N, cfg.d_over_lambda)
    a_bs = steering(np.arcsin(sin_at_bs), cfg.M, BS_D_OVER_LAMBDA)
    g_los = np.outer(a_irs, a_bs)
    g_nlos = _cscg(_rng(seed, _STREAM_G, 0), (cfg.N, cfg.M))
    G = np.sqrt(_pathloss(cfg, d_bi, cfg.alpha_BI)) * (w_los * g_los + w_nlos * g_nlos)

    (x0, y0), (x1, y1) = cfg.cu_region
    h_d, h_r = [], []
    for k in range(cfg.K):
        pos_rng = _rng(seed, _STREAM_CU_POS, k)
        cu = (pos_rng.uniform(min(x0, x1), max(x0, x1)),
              pos_rng.uniform(min(y0, y1), max(y0, y1)))

        sin_bu, d_bu = _sin_from_to(cfg.pos_bs, cu)
        hd_rng = _rng(seed, _STREAM_HD, k)
        hd_los = steering(np.arcsin(sin_bu), cfg.M, BS_D_OVER_LAMBDA)
        hd_nlos = _cscg(hd_rng, cfg.M)
        shadow = 10.0 ** (hd_rng.normal(0.0, cfg.shadow_std_db) / 20.0)
        h_d.append(
            shadow
            * np.sqrt(_pathloss(cfg, d_bu, cfg.alpha_BU))
            * (w_los * hd_los + w_nlos * hd_nlos)
        )

        sin_iu, d_iu = _sin_from_to(cfg.pos_irs, cu)
        hr_los = steering(np.arcsin(sin_iu), cfg.N, cfg.d_over_lambda)
        hr_nlos = _cscg(_rng(seed, _STREAM_HR, k), cfg.N)
        h_r.append(
            np.sqrt(_pathloss(cfg, d_iu, cfg.alpha_IU))
            * (w_los * hr_los + w_nlos * hr_nlos)
        )

    # point target: DoA + round-trip coefficient
    sin_it, d_it = _sin_from_to(cfg.pos_irs, cfg.pos_target)
    theta = float(np.arcsin(sin_it))
    loss_it = _pathloss(cfg, d_it, cfg.alpha_BI)
    alpha_rng = _rng(seed, _STREAM_ALPHA, 0)
    alpha = np.sqrt(cfg.rcs) * loss_it * np.exp(2j * np.pi * alpha_rng.uniform())

    # extended target: superposition of 3 scatterers, unit total RCS
    trm_rng = _rng(seed, _STREAM_TRM, 0)
    h_trm = np.zeros((cfg.N, cfg.N), dtype=complex)
    n_scat = 3
    for _ in range(n_scat):
        th = trm_rng.uniform(-np.pi / 2, np.pi / 2)
        amp = np.sqrt(cfg.rcs / n_scat) * loss_it
        ph = np.exp(2j * np.pi * trm_rng.uniform())
        a = steering(th, cfg.N, cfg.d_over_lambda)
        h_trm = h_trm + amp * ph * np.outer(a, a)
    # outer products are symmetric in exact arithmetic; enforce it bitwise
    h_trm = 0.5 * (h_trm + h_trm.T)

    return ChannelSet(
        G=G,
        h_d=tuple(h_d),
        h_r=tuple(h_r),
        theta=theta,
        alpha=complex(alpha),
        h_trm=h_trm,
        d_over_lambda=cfg.d_over_lambda,
    )


def combined_channel(ch, v, k):
    """Effective BS->CU k channel h_d,k + G^H diag(v)^H h_r,k."""
    if not (0 <= k < len(ch.h_d)):
        raise InvalidInput(f"CU index {k} out of range")
    v = np.asarray(v)
    return ch.h_d[k] + ch.G.conj().T @ (np.conj(v) * ch.h_r[k])


def target_response(ch, target):
    """N x N target response: h_trm for 'extended', alpha a a^T for 'point'."""
    if target == "extended":
        if ch.h_trm is None:
            raise InvalidInput("extended mode needs h_trm")
        return ch.h_trm
    if target == "point":
        a = steering(ch.theta, ch.G.shape[0], ch.d_over_lambda)
        H = ch.alpha * np.outer(a, a)
        return 0.5 * (H + H.T)
    raise InvalidInput(f"unknown target mode {target!r}")


def simulate_echo(ch, v, X, sigma_R_sq, seed, target="extended"):
    """One received echo frame Y = G^T Phi^T H Phi G X + noise."""
    X = np.asarray(X, dtype=complex)
    M = ch.G.shape[1]
    if X.shape[0] != M:
        raise InvalidInput(f"X must have {M} rows")
    H = target_response(ch, target)
    v = np.asarray(v)
    PhiG = v[:, None] * ch.G  # Phi G
    Y = PhiG.T @ (H @ (PhiG @ X))
    if sigma_R_sq > 0:
        noise = np.sqrt(sigma_R_sq) * _cscg(_rng(seed, _STREAM_ECHO, 0), X.shape)
        Y = Y + noise
    return Y
