"""Dense complex linear-algebra primitives shared across the package.

Everything here is a pure function on ndarrays. Complex Hermitian
matrices are symmetrized on entry so downstream eigensolvers never see
drift from accumulated arithmetic.
"""

import numpy as np

# Scale-invariant rank threshold: eigenvalues at or below
# RANK_TOL_FACTOR * lambda_max are treated as zero.
RANK_TOL_FACTOR = 1e-9


class InvalidInput(ValueError):
    """Malformed or non-finite input."""


class SingularMatrix(ArithmeticError):
    """Matrix is singular at the working rank tolerance."""


class DegenerateGeometry(ArithmeticError):
    """Geometry makes the requested quantity undefined (e.g. zero
    derivative of the array response)."""


class ReconstructionDegenerate(ArithmeticError):
    """Rank-one reconstruction hit a zero denominator."""


def _as_complex_matrix(A):
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2:
        raise InvalidInput(f"expected a matrix, got ndim={A.ndim}")
    if not np.all(np.isfinite(A.view(float))):
        raise InvalidInput("non-finite entries")
    return A


def hermitize(A):
    """Return (A + A^H)/2 as a new array."""
    A = _as_complex_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise InvalidInput(f"square matrix required, got {A.shape}")
    return 0.5 * (A + A.conj().T)


def is_hermitian(A, tol=1e-12):
    A = np.asarray(A)
    scale = max(np.abs(A).max(initial=0.0), 1.0)
    return bool(np.abs(A - A.conj().T).max(initial=0.0) <= tol * scale)


def rank_tol(eigenvalues):
    """Threshold below which eigenvalues count as zero."""
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    if eigenvalues.size == 0:
        return 0.0
    return RANK_TOL_FACTOR * float(np.abs(eigenvalues).max())


def hermitian_evd(A):
    """Eigendecomposition of a Hermitian matrix.

    Returns (w, U) with eigenvalues w sorted descending and unitary U
    such that A = U diag(w) U^H.
    """
    A = hermitize(A)
    w, U = np.linalg.eigh(A)
    order = np.argsort(w)[::-1]
    return w[order], U[:, order]


def trace_inverse(A):
    """tr(A^{-1}) for Hermitian positive definite A.

    Raises SingularMatrix when the smallest eigenvalue falls at or
    below the rank tolerance, which signals an unbounded trace.
    """
    w, _ = hermitian_evd(A)
    if w[-1] <= rank_tol(w):
        raise SingularMatrix(
            f"matrix not positive definite at tolerance (min eig {w[-1]:.3e})"
        )
    return float(np.sum(1.0 / w))


def vec(X):
    """Column-major stacking of a matrix into a vector."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(x, rows, cols):
    return np.asarray(x).reshape(rows, cols, order="F")


def kron_vec_identities(A, B, X):
    """vec(A X B) computed through the Kronecker route (B^T kron A) vec(X).

    The direct product A @ X @ B and the Kronecker form agree to
    floating-point accuracy; the Kronecker form is what the stacked
    least-squares path consumes.
    """
    A = _as_complex_matrix(A)
    B = _as_complex_matrix(B)
    X = _as_complex_matrix(X)
    if A.shape[1] != X.shape[0] or X.shape[1] != B.shape[0]:
        raise InvalidInput(
            f"non-conformable shapes {A.shape} x {X.shape} x {B.shape}"
        )
    return np.kron(B.T, A) @ vec(X)


def real_embed(A):
    """Real symmetric embedding [[Re A, -Im A], [Im A, Re A]] of a
    Hermitian matrix. PSD is preserved both ways and
    tr(embed(A) embed(B)) = 2 Re tr(AB)."""
    A = hermitize(A)
    Ar, Ai = A.real, A.imag
    return np.block([[Ar, -Ai], [Ai, Ar]])


def real_unembed(S):
    """Inverse of real_embed up to the J-rotation average.

    For a real symmetric 2n x 2n matrix S returns the Hermitian matrix
    X = (S11 + S22)/2 + 1j (S21 - S12)/2. When S is PSD and feasible
    for constraints given by embedded coefficients, so is X (averaging
    S with its J-conjugate preserves both).
    """
    S = np.asarray(S, dtype=float)
    n2 = S.shape[0]
    if S.ndim != 2 or S.shape[0] != S.shape[1] or n2 % 2:
        raise InvalidInput(f"even-dimensional square matrix required, got {S.shape}")
    n = n2 // 2
    S11, S12 = S[:n, :n], S[:n, n:]
    S21, S22 = S[n:, :n], S[n:, n:]
    return hermitize(0.5 * (S11 + S22) + 0.5j * (S21 - S12))


def schur_psd_test(a11, a12, a22):
    """True iff the 2x2 Hermitian [[a11, a12], [conj(a12), a22]] is PSD."""
    a11 = float(np.real(a11))
    a22 = float(np.real(a22))
    return a11 >= 0.0 and a22 >= 0.0 and a11 * a22 >= abs(a12) ** 2
