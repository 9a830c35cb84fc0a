"""A/B benchmark: compiled conic kernels vs the NumPy fallback.

Times the three batch kernels the interior-point solver leans on
(svec_batch, smat_batch, congruence_svec) on sizes matching the
transmit-design SDPs, checks the two implementations agree to float
round-off, and prints a speedup table.

Run from a checkout with the extension built:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from isacbeam.conic import _kernels_py

try:
    from isacbeam.conic import _kernels as _compiled
except ImportError:
    _compiled = None


def _bench(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(rng):
    # (label, kernel name, args); n spans the small W blocks up to the
    # 2N Schur lift of the largest default scenario (N = M = 8)
    for n, m in ((4, 20), (8, 60), (16, 150), (32, 400)):
        mats = rng.standard_normal((m, n, n))
        mats = mats + mats.transpose(0, 2, 1)
        d = n * (n + 1) // 2
        vecs = rng.standard_normal((m, d))
        R = rng.standard_normal((n, n))
        yield f"svec_batch      n={n:2d} m={m:3d}", "svec_batch", (mats,)
        yield f"smat_batch      n={n:2d} m={m:3d}", "smat_batch", (vecs, n)
        yield f"congruence_svec n={n:2d} m={m:3d}", "congruence_svec", (R, mats)


def main():
    if _compiled is None:
        print("compiled extension not built; nothing to compare")
        return
    rng = np.random.default_rng(0)
    repeats = 200
    print(f"{'kernel':32s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}")
    for label, name, args in _cases(rng):
        ref = getattr(_kernels_py, name)(*args)
        got = getattr(_compiled, name)(*args)
        if not np.allclose(ref, got, rtol=1e-12, atol=1e-12):
            raise AssertionError(f"{name} implementations disagree")
        t_py = _bench(getattr(_kernels_py, name), args, repeats)
        t_c = _bench(getattr(_compiled, name), args, repeats)
        print(f"{label:32s} {t_py * 1e6:8.1f}us {t_c * 1e6:8.1f}us {t_py / t_c:7.2f}x")


if __name__ == "__main__":
    main()
