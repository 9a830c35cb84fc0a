"""Kernel dispatch: compiled extension when built, NumPy fallback
otherwise. ISACBEAM_PURE=1 forces the fallback (used by the kernel
benchmark and for A/B correctness tests)."""

import os

import numpy as np

from ._kernels_py import tril_meta

if os.environ.get("ISACBEAM_PURE") == "1":
    from . import _kernels_py as _impl

    HAVE_COMPILED = False
else:
    try:
        from . import _kernels as _impl  # compiled

        HAVE_COMPILED = True
    except ImportError:
        from . import _kernels_py as _impl

        HAVE_COMPILED = False

svec_batch = _impl.svec_batch
smat_batch = _impl.smat_batch
congruence_svec = _impl.congruence_svec


def svec(S):
    S = np.asarray(S, dtype=float)
    r, c, s = tril_meta(S.shape[0])
    return S[r, c] * s


def smat(v, n):
    v = np.asarray(v, dtype=float)
    r, c, s = tril_meta(n)
    out = np.zeros((n, n))
    vals = v / s
    out[r, c] = vals
    out[c, r] = vals
    return out


def jordan_ldiv(lam, D):
    """Solve (Lam U + U Lam)/2 = D for U, Lam = diag(lam)."""
    lam = np.asarray(lam, dtype=float)
    return 2.0 * D / (lam[:, None] + lam[None, :])
