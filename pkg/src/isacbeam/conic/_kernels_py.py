"""NumPy implementations of the solver hot kernels.

svec convention: lower triangle in row scan order with sqrt(2) on
off-diagonal entries, so that dot(svec(A), svec(B)) = tr(AB) for
symmetric A, B.
"""

import numpy as np

_TRIL_CACHE = {}


def tril_meta(n):
    """(rows, cols, scale) index arrays for the svec layout of dim n."""
    cached = _TRIL_CACHE.get(n)
    if cached is None:
        r, c = np.tril_indices(n)
        scale = np.where(r == c, 1.0, np.sqrt(2.0))
        cached = (r, c, scale)
        _TRIL_CACHE[n] = cached
    return cached


def svec_batch(mats):
    """(m, n, n) symmetric stack -> (m, p) svec rows."""
    mats = np.asarray(mats, dtype=float)
    _, n, _ = mats.shape
    r, c, s = tril_meta(n)
    return mats[:, r, c] * s


def smat_batch(vecs, n):
    """(m, p) svec rows -> (m, n, n) symmetric stack."""
    vecs = np.asarray(vecs, dtype=float)
    m = vecs.shape[0]
    r, c, s = tril_meta(n)
    out = np.zeros((m, n, n))
    vals = vecs / s
    out[:, r, c] = vals
    out[:, c, r] = vals
    return out


def congruence_svec(R, mats):
    """Rows svec(R^T A_i R) for a stack of symmetric A_i.

    This is the per-iteration hot spot of the interior-point solver:
    the scaled constraint matrix V is assembled from these rows and the
    Schur complement is V V^T.
    """
    R = np.asarray(R, dtype=float)
    mats = np.asarray(mats, dtype=float)
    n = R.shape[0]
    tmp = mats @ R
    B = np.matmul(R.T, tmp)
    r, c, s = tril_meta(n)
    return B[:, r, c] * s
