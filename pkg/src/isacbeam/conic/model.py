"""Block-structured conic modeling layer.

Variables live in declared blocks: real symmetric PSD, complex
Hermitian PSD (handled through the real embedding), nonnegative
scalars, free scalars. Linear functionals are lists of (ref, coeff)
terms; for a Hermitian block the complex coefficient C contributes
Re tr(C X). Constraints are affine equalities and inequalities.
Lowered to `solver.StandardConic`: free scalars split into differences
of nonnegatives, inequalities get slack scalars.
"""

import numpy as np

from .. import numerics as nx
from . import kernels
from .solver import RawSolution, SolveOptions, StandardConic, Status, solve_standard


class BlockRef:
    __slots__ = ("index", "kind", "dim")

    def __init__(self, index, kind, dim):
        self.index = index
        self.kind = kind
        self.dim = dim

    def __repr__(self):
        return f"BlockRef({self.index}, {self.kind}, {self.dim})"


class Solution:
    def __init__(self, status, objective, values, raw, duals=None):
        self.status = status
        self.objective = objective
        self._values = values
        self.raw = raw
        self._duals = duals

    @property
    def pres(self):
        return self.raw.pres

    @property
    def dres(self):
        return self.raw.dres

    @property
    def relgap(self):
        return self.raw.relgap

    def value(self, ref):
        if self._values is None:
            raise RuntimeError(f"no primal values for status {self.status.value}")
        return self._values[ref.index]


def extract_dual(sol):
    """Per-constraint multipliers y such that c - A^T y in K*.

    Sign convention: ge-constraints report y >= 0, le-constraints
    y <= 0 at optimality. Only available for Optimal solves.
    """
    if sol.status is not Status.Optimal:
        raise RuntimeError(f"duals unavailable for status {sol.status.value}")
    return sol._duals.copy()


class ConicProblem:
    def __init__(self):
        self._blocks = []
        self._obj = None  # (terms, const, sense) sense=+1 minimize
        self._cons = []  # (coeff_by_block: dict, op: 'eq'|'ge'|'le', rhs: float)

    # ---- declarations -------------------------------------------------
    def add_psd(self, n):
        if n < 1:
            raise nx.InvalidInput("PSD block needs n >= 1")
        ref = BlockRef(len(self._blocks), "psd", int(n))
        self._blocks.append(ref)
        return ref

    def add_hermitian(self, n):
        if n < 1:
            raise nx.InvalidInput("Hermitian block needs n >= 1")
        ref = BlockRef(len(self._blocks), "herm", int(n))
        self._blocks.append(ref)
        return ref

    def add_nonneg(self, q=1):
        ref = BlockRef(len(self._blocks), "nonneg", int(q))
        self._blocks.append(ref)
        return ref

    def add_free(self, q=1):
        ref = BlockRef(len(self._blocks), "free", int(q))
        self._blocks.append(ref)
        return ref

    # ---- functionals ---------------------------------------------------
    def _coerce(self, ref, coeff):
        """Normalize a term coefficient to the block's svec/real layout."""
        blk = self._blocks[ref.index]
        if blk.kind == "psd":
            C = np.asarray(coeff, dtype=float)
            if C.shape != (blk.dim, blk.dim):
                raise nx.InvalidInput(f"psd coeff shape {C.shape} != {(blk.dim, blk.dim)}")
            return kernels.svec(0.5 * (C + C.T))
        if blk.kind == "herm":
            C = np.asarray(coeff, dtype=complex)
            if C.shape != (blk.dim, blk.dim):
                raise nx.InvalidInput(f"herm coeff shape {C.shape} != {(blk.dim, blk.dim)}")
            # Re tr(C X) = tr((embed(herm(C))/2) embed(X))
            return kernels.svec(0.5 * nx.real_embed(C))
        v = np.atleast_1d(np.asarray(coeff, dtype=float))
        if v.shape != (blk.dim,):
            raise nx.InvalidInput(f"scalar coeff shape {v.shape} != ({blk.dim},)")
        return v

    def _accumulate(self, terms):
        acc = {}
        for ref, coeff in terms:
            vec = self._coerce(ref, coeff)
            if ref.index in acc:
                acc[ref.index] = acc[ref.index] + vec
            else:
                acc[ref.index] = vec
        return acc

    def minimize(self, terms, const=0.0):
        self._obj = (self._accumulate(terms), float(const), 1.0)

    def maximize(self, terms, const=0.0):
        self._obj = (self._accumulate(terms), float(const), -1.0)

    def add_eq(self, terms, rhs):
        self._cons.append((self._accumulate(terms), "eq", float(rhs)))

    def add_ge(self, terms, rhs):
        self._cons.append((self._accumulate(terms), "ge", float(rhs)))

    def add_le(self, terms, rhs):
        self._cons.append((self._accumulate(terms), "le", float(rhs)))

    # ---- lowering -------------------------------------------------------
    def _layout(self):
        psd_dims = []
        seg_of = {}
        off = 0
        for blk in self._blocks:
            if blk.kind in ("psd", "herm"):
                n = blk.dim if blk.kind == "psd" else 2 * blk.dim
                psd_dims.append(n)
                p = n * (n + 1) // 2
                seg_of[blk.index] = (off, off + p)
                off += p
        scal_off = off
        for blk in self._blocks:
            if blk.kind == "nonneg":
                seg_of[blk.index] = (off, off + blk.dim)
                off += blk.dim
            elif blk.kind == "free":
                seg_of[blk.index] = (off, off + 2 * blk.dim)  # plus then minus
                off += 2 * blk.dim
        n_slack = sum(1 for _, op, _ in self._cons if op != "eq")
        slack_off = off
        dim = off + n_slack
        return psd_dims, seg_of, scal_off, slack_off, dim

    def _fill_row(self, row, acc, seg_of):
        for index, vec in acc.items():
            blk = self._blocks[index]
            lo, hi = seg_of[index]
            if blk.kind == "free":
                q = blk.dim
                row[lo : lo + q] += vec
                row[lo + q : hi] -= vec
            else:
                row[lo:hi] += vec

    def lower(self):
        if self._obj is None:
            raise nx.InvalidInput("objective not set")
        if not self._cons:
            raise nx.InvalidInput("at least one constraint required")
        psd_dims, seg_of, scal_off, slack_off, dim = self._layout()
        m = len(self._cons)
        A = np.zeros((m, dim))
        b = np.zeros(m)
        slack = slack_off
        for i, (acc, op, rhs) in enumerate(self._cons):
            sign = -1.0 if op == "le" else 1.0
            row = np.zeros(dim)
            self._fill_row(row, acc, seg_of)
            row *= sign
            if op != "eq":
                row[slack] = -1.0
                slack += 1
            A[i] = row
            b[i] = sign * rhs
        obj_acc, obj_const, sense = self._obj
        c = np.zeros(dim)
        self._fill_row(c, obj_acc, seg_of)
        c *= sense
        nonneg = dim - scal_off
        return StandardConic(A, b, c, psd_dims, nonneg), seg_of, sense, obj_const

    def solve(self, opts=None):
        sc, seg_of, sense, obj_const = self.lower()
        raw = solve_standard(sc, opts)
        values = None
        duals = None
        if raw.x is not None and raw.status in (Status.Optimal, Status.NumericalLimit):
            values = []
            for blk in self._blocks:
                lo, hi = seg_of[blk.index]
                seg = raw.x[lo:hi]
                if blk.kind == "psd":
                    values.append(kernels.smat(seg, blk.dim))
                elif blk.kind == "herm":
                    values.append(nx.real_unembed(kernels.smat(seg, 2 * blk.dim)))
                elif blk.kind == "free":
                    q = blk.dim
                    values.append(seg[:q] - seg[q:])
                else:
                    values.append(seg.copy())
        if raw.status is Status.Optimal:
            duals = np.array(
                [
                    (-1.0 if op == "le" else 1.0) * raw.y[i]
                    for i, (_, op, _) in enumerate(self._cons)
                ]
            )
        objective = np.nan
        if raw.x is not None:
            objective = sense * raw.pobj + obj_const
        return Solution(raw.status, objective, values, raw, duals)

    # ---- debug dump ------------------------------------------------------
    def dump(self, fileobj):
        """Dense text dump (objective, constraints row-major) for
        external cross-checking."""
        sc, _, sense, obj_const = self.lower()
        fileobj.write(f"sense {'min' if sense > 0 else 'max'} const {obj_const!r}\n")
        fileobj.write(f"psd_dims {sc.psd_dims} nonneg {sc.nonneg}\n")
        fileobj.write("c " + " ".join(repr(v) for v in sc.c) + "\n")
        for i in range(sc.A.shape[0]):
            fileobj.write(
                f"row {i} rhs {sc.b[i]!r} : "
                + " ".join(repr(v) for v in sc.A[i])
                + "\n"
            )


def herm_entry_re(n, i, j):
    """Coefficient C with Re tr(C X) = Re X[i, j] for Hermitian X."""
    C = np.zeros((n, n), dtype=complex)
    C[j, i] = 1.0
    return C


def herm_entry_im(n, i, j):
    """Coefficient C with Re tr(C X) = Im X[i, j] for Hermitian X."""
    C = np.zeros((n, n), dtype=complex)
    C[j, i] = -1.0j
    return C
