import io

import numpy as np
import pytest
from planted_util import planted_instance

from isacbeam.conic import (
    ConicProblem,
    SolveOptions,
    Status,
    extract_dual,
    herm_entry_im,
    herm_entry_re,
    solve_standard,
)
from isacbeam.conic import _kernels_py
from isacbeam.conic import kernels


def lp_min_x():
    p = ConicProblem()
    x = p.add_nonneg(1)
    p.minimize([(x, [1.0])])
    p.add_ge([(x, [1.0])], 5.0)
    return p, x


class TestExamples:
    def test_lp(self):
        p, x = lp_min_x()
        s = p.solve()
        assert s.status is Status.Optimal
        assert s.objective == pytest.approx(5.0, abs=1e-6)
        assert s.value(x)[0] == pytest.approx(5.0, abs=1e-6)

    def test_eigenvalue_sdp(self):
        rng = np.random.default_rng(0)
        C = rng.standard_normal((3, 3))
        C = 0.5 * (C + C.T)
        p = ConicProblem()
        X = p.add_psd(3)
        p.minimize([(X, C)])
        p.add_eq([(X, np.eye(3))], 1.0)
        s = p.solve()
        assert s.status is Status.Optimal
        assert s.objective == pytest.approx(np.linalg.eigvalsh(C)[0], abs=1e-6)

    def test_hermitian_eigenvalue_sdp(self):
        rng = np.random.default_rng(1)
        C = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        C = 0.5 * (C + C.conj().T)
        p = ConicProblem()
        X = p.add_hermitian(4)
        p.minimize([(X, C)])
        p.add_eq([(X, np.eye(4))], 1.0)
        s = p.solve()
        assert s.status is Status.Optimal
        assert s.objective == pytest.approx(np.linalg.eigvalsh(C)[0], abs=1e-6)
        V = s.value(X)
        assert np.allclose(V, V.conj().T)
        assert np.linalg.eigvalsh(V).min() >= -1e-7

    def test_infeasible(self):
        p = ConicProblem()
        x = p.add_nonneg(1)
        p.minimize([(x, [1.0])])
        p.add_ge([(x, [1.0])], 1.0)
        p.add_le([(x, [1.0])], 0.0)
        s = p.solve()
        assert s.status is Status.Infeasible
        with pytest.raises(RuntimeError):
            extract_dual(s)

    def test_unbounded(self):
        p = ConicProblem()
        x = p.add_nonneg(2)
        p.minimize([(x, [-1.0, 0.0])])
        p.add_eq([(x, [0.0, 1.0])], 1.0)
        s = p.solve()
        assert s.status is Status.Unbounded

    def test_free_variable(self):
        # min (f - 2)^2 epigraph-free: f free, f = -3 via equality
        p = ConicProblem()
        f = p.add_free(1)
        x = p.add_nonneg(1)
        p.minimize([(x, [1.0])])
        p.add_eq([(f, [1.0])], -3.0)
        p.add_ge([(x, [1.0]), (f, [-1.0])], 0.0)  # x >= f
        s = p.solve()
        assert s.status is Status.Optimal
        assert s.value(f)[0] == pytest.approx(-3.0, abs=1e-6)
        assert s.value(x)[0] == pytest.approx(0.0, abs=1e-6)

    def test_maximize_with_constant(self):
        p = ConicProblem()
        x = p.add_nonneg(1)
        p.maximize([(x, [2.0])], const=1.0)
        p.add_le([(x, [1.0])], 3.0)
        s = p.solve()
        assert s.objective == pytest.approx(7.0, abs=1e-6)


class TestDuals:
    def test_lp_active_dual(self):
        p, _ = lp_min_x()
        s = p.solve()
        duals = extract_dual(s)
        assert duals[0] == pytest.approx(1.0, abs=1e-6)

    def test_le_dual_sign(self):
        p = ConicProblem()
        x = p.add_nonneg(1)
        p.maximize([(x, [1.0])])
        p.add_le([(x, [1.0])], 2.0)
        s = p.solve()
        assert extract_dual(s)[0] == pytest.approx(-1.0, abs=1e-6)

    def test_planted_kkt(self):
        rng = np.random.default_rng(42)
        sc, xs, ys, zs, opt = planted_instance(rng, [4, 3], 3, 8)
        raw = solve_standard(sc)
        assert raw.status is Status.Optimal
        scale = max(1.0, abs(opt))
        assert abs(raw.pobj - opt) <= 1e-6 * scale
        # complementarity at the reported point
        gap = float(raw.x @ raw.z)
        assert abs(gap) <= 1e-6 * scale
        # dual feasibility: c - A^T y = z in cone
        resid = sc.c - sc.A.T @ raw.y - raw.z
        assert np.abs(resid).max() <= 1e-6 * max(1.0, np.abs(sc.c).max())


class TestPlantedSuite:
    @pytest.mark.parametrize("n", [2, 5, 10, 16])
    def test_single_block_sizes(self, n):
        rng = np.random.default_rng(100 + n)
        for trial in range(5):
            m = int(rng.integers(2, n * (n + 1) // 2 + 1))
            sc, xs, ys, zs, opt = planted_instance(rng, [n], 0, m)
            raw = solve_standard(sc)
            assert raw.status is Status.Optimal, f"n={n} trial={trial}"
            assert abs(raw.pobj - opt) <= 1e-6 * max(1.0, abs(opt))

    def test_mixed_blocks(self):
        rng = np.random.default_rng(7)
        for trial in range(10):
            sc, xs, ys, zs, opt = planted_instance(rng, [3, 2], 4, 6)
            raw = solve_standard(sc)
            assert raw.status is Status.Optimal
            assert abs(raw.pobj - opt) <= 1e-6 * max(1.0, abs(opt))


class TestProperties:
    def test_weak_duality(self):
        rng = np.random.default_rng(3)
        for trial in range(10):
            sc, *_ , opt = planted_instance(rng, [3], 2, 5)
            raw = solve_standard(sc)
            assert raw.status is Status.Optimal
            scale = 1.0 + abs(raw.pobj) + abs(raw.dobj)
            assert raw.dobj <= raw.pobj + 1e-6 * scale

    def test_objective_scaling_invariance(self):
        rng = np.random.default_rng(4)
        sc, *_ , opt = planted_instance(rng, [4], 2, 6)
        raw1 = solve_standard(sc)
        sc2 = type(sc)(sc.A, sc.b, sc.c * 37.0, sc.psd_dims, sc.nonneg)
        raw2 = solve_standard(sc2)
        assert raw1.status is Status.Optimal and raw2.status is Status.Optimal
        scale = max(1.0, np.abs(raw1.x).max())
        assert np.abs(raw1.x - raw2.x).max() <= 1e-6 * scale
        assert raw2.pobj == pytest.approx(37.0 * raw1.pobj, rel=1e-6)

    def test_deterministic_repeat(self):
        rng = np.random.default_rng(5)
        sc, *_ = planted_instance(rng, [5], 3, 8)
        raw1 = solve_standard(sc)
        raw2 = solve_standard(sc)
        assert np.array_equal(raw1.x, raw2.x)
        assert raw1.pobj == raw2.pobj and raw1.iters == raw2.iters

    def test_numerical_limit_attaches_best(self):
        rng = np.random.default_rng(6)
        sc, *_ = planted_instance(rng, [4], 2, 6)
        raw = solve_standard(sc, SolveOptions(max_iters=3))
        assert raw.status is Status.NumericalLimit
        assert raw.x is not None and np.all(np.isfinite(raw.x))

    def test_psd_value_min_eig(self):
        rng = np.random.default_rng(8)
        p = ConicProblem()
        X = p.add_psd(4)
        C = rng.standard_normal((4, 4))
        C = 0.5 * (C + C.T)
        p.minimize([(X, C)])
        p.add_eq([(X, np.eye(4))], 1.0)
        s = p.solve()
        val = s.value(X)
        scale = max(1.0, np.abs(val).max())
        assert np.linalg.eigvalsh(val).min() >= -1e-7 * scale


class TestHermitianEntries:
    def test_entry_extractors(self):
        rng = np.random.default_rng(9)
        n = 3
        # pin X[0,1] = 2 - 1j through entry constraints, maximize nothing real
        p = ConicProblem()
        X = p.add_hermitian(n)
        p.minimize([(X, np.eye(n))])
        p.add_eq([(X, herm_entry_re(n, 0, 1))], 2.0)
        p.add_eq([(X, herm_entry_im(n, 0, 1))], -1.0)
        s = p.solve()
        assert s.status is Status.Optimal
        V = s.value(X)
        assert V[0, 1] == pytest.approx(2.0 - 1.0j, abs=1e-5)


class TestKernels:
    def test_pure_vs_selected_congruence(self):
        rng = np.random.default_rng(10)
        n, m = 7, 13
        R = rng.standard_normal((n, n))
        mats = rng.standard_normal((m, n, n))
        mats = 0.5 * (mats + np.swapaxes(mats, 1, 2))
        a = kernels.congruence_svec(R, mats)
        b = _kernels_py.congruence_svec(R, mats)
        assert np.abs(a - b).max() <= 1e-12 * max(1.0, np.abs(b).max())

    def test_pure_vs_selected_svec_smat(self):
        rng = np.random.default_rng(11)
        n, m = 5, 9
        mats = rng.standard_normal((m, n, n))
        mats = 0.5 * (mats + np.swapaxes(mats, 1, 2))
        va = kernels.svec_batch(mats)
        vb = _kernels_py.svec_batch(mats)
        assert np.allclose(va, vb, atol=1e-14)
        back = kernels.smat_batch(va, n)
        assert np.allclose(back, mats, atol=1e-14)

    def test_svec_inner_product_is_trace(self):
        rng = np.random.default_rng(12)
        A = rng.standard_normal((6, 6))
        A = 0.5 * (A + A.T)
        B = rng.standard_normal((6, 6))
        B = 0.5 * (B + B.T)
        assert kernels.svec(A) @ kernels.svec(B) == pytest.approx(
            np.trace(A @ B), rel=1e-12
        )


class TestDump:
    def test_dump_roundtrip_text(self):
        p, _ = lp_min_x()
        buf = io.StringIO()
        p.dump(buf)
        text = buf.getvalue()
        assert "sense min" in text and "row 0" in text
