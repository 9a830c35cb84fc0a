"""Command-line front end.

Subcommands: `run` executes a config-driven Monte-Carlo sweep and
writes the results CSV, `summarize` aggregates a results CSV (and can
emit a gnuplot script), `selftest` exercises the built-in invariant
checks. Exit codes: 0 success, 2 config or output-path error, 3 every
run infeasible, 4 numerical failure. ISAC_LOG=off|info|trace controls
verbosity.
"""

import argparse
import logging
import os
import sys
import tempfile

import numpy as np

from . import harness

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4

_LOG_LEVELS = {"off": logging.WARNING, "info": logging.INFO, "trace": logging.DEBUG}


def _configure_logging():
    name = os.environ.get("ISAC_LOG", "off").lower()
    logging.basicConfig(
        level=_LOG_LEVELS.get(name, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if name not in _LOG_LEVELS:
        log.warning("unknown ISAC_LOG value %r, using off", name)


def _cmd_run(args):
    try:
        spec = harness.load_spec(args.config, args.trials, args.seed, args.out)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = harness.run_experiment(spec, jobs=args.jobs, debug=args.debug)
    except OSError as exc:
        print(f"cannot write {spec.out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if all(r.status == "Infeasible" for r in rows):
        print("every run infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"wrote {len(rows)} rows to {spec.out}")
    return EXIT_OK


def _cmd_summarize(args):
    try:
        rows = harness.load_rows(args.infile)
        table = harness.summarize(rows, plot_path=args.plot)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot summarize: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(
        f"{'scheme':<10}{'rx':<4}{'target':<10}{'gamma_db':>9}"
        f"{'n':>4}{'rate':>7}{'mean_crb_db':>13}"
    )
    for entry in table:
        mean = "-" if entry["mean_crb_db"] is None else f"{entry['mean_crb_db']:.3f}"
        print(
            f"{entry['scheme']:<10}{entry['receiver']:<4}{entry['target']:<10}"
            f"{entry['gamma_db']:>9.2f}{entry['n']:>4}"
            f"{entry['feasibility_rate']:>7.2f}{mean:>13}"
        )
    if args.plot:
        print(f"plot script written to {args.plot}")
    return EXIT_OK


# ---- selftest ---------------------------------------------------------------


def _check_kernel_paths():
    from .conic import _kernels_py, kernels

    rng = np.random.default_rng(0)
    mats = rng.normal(size=(5, 6, 6))
    mats = mats + mats.transpose(0, 2, 1)
    vecs = _kernels_py.svec_batch(mats)
    assert np.allclose(kernels.svec_batch(mats), vecs, atol=1e-13)
    assert np.allclose(kernels.smat_batch(vecs, 6), mats, atol=1e-13)
    R = rng.normal(size=(6, 6))
    assert np.allclose(
        kernels.congruence_svec(R, mats),
        _kernels_py.congruence_svec(R, mats),
        atol=1e-12,
    )


def _check_conic_planted():
    from .conic import ConicProblem, Status, herm_entry_re

    prob = ConicProblem()
    X = prob.add_hermitian(3)
    prob.minimize([(X, np.eye(3))])
    prob.add_eq([(X, herm_entry_re(3, 0, 0))], 1.0)
    sol = prob.solve()
    assert sol.status == Status.Optimal
    assert abs(sol.objective - 1.0) <= 1e-6


def _check_alternating_invariants():
    from . import driver
    from . import scenario as sc

    cfg = sc.SystemConfig(M=2, N=2, K=1, T=16, shadow_std_db=0.0)
    ch = sc.generate_channels(cfg, 1)
    sol1, tr1 = driver.run_alternating(ch, cfg, "extended", "I", seed=1)
    sol2, tr2 = driver.run_alternating(ch, cfg, "extended", "I", seed=1)
    assert sol1.status == "Converged"
    assert sol1.crb == sol2.crb and np.array_equal(sol1.v, sol2.v)
    crbs = tr1.crbs
    assert (np.diff(crbs) <= 1e-6 * np.abs(crbs[:-1])).all()


def _check_csv_determinism():
    from .scenario import SystemConfig

    base = SystemConfig(M=2, N=2, K=1, T=16, shadow_std_db=0.0)
    with tempfile.TemporaryDirectory() as tmp:
        texts = []
        for name in ("a.csv", "b.csv"):
            spec = harness.ExperimentSpec(
                base=base,
                sweep_db=(5.0,),
                schemes=("txonly",),
                trials=1,
                master_seed=3,
                out=os.path.join(tmp, name),
            )
            harness.run_experiment(spec)
            with open(spec.out, "rb") as fh:
                texts.append(fh.read())
        assert texts[0] == texts[1]


def _cmd_selftest(args):
    del args
    checks = (
        ("kernel paths agree", _check_kernel_paths),
        ("conic planted instance", _check_conic_planted),
        ("alternating determinism and monotonicity", _check_alternating_invariants),
        ("csv byte determinism", _check_csv_determinism),
    )
    failed = 0
    for name, fn in checks:
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - report and keep going
            failed += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"PASS {name}")
    return EXIT_OK if failed == 0 else EXIT_NUMERICAL


def build_parser():
    parser = argparse.ArgumentParser(
        prog="isacbeam",
        description="CRB-minimizing joint transmit/reflect beamforming experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a config-driven sweep")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--trials", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--out", default=None)
    p_run.add_argument(
        "--debug", action="store_true", help="append a channel_hash column"
    )
    p_run.set_defaults(fn=_cmd_run)

    p_sum = sub.add_parser("summarize", help="aggregate a results CSV")
    p_sum.add_argument("--in", dest="infile", required=True)
    p_sum.add_argument("--plot", default=None)
    p_sum.set_defaults(fn=_cmd_summarize)

    p_self = sub.add_parser("selftest", help="run built-in invariant checks")
    p_self.set_defaults(fn=_cmd_selftest)
    return parser


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
