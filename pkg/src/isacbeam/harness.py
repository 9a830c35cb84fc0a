"""Monte-Carlo experiment runner and result serialization.

Config files are flat key-value text with dotted keys (`scenario.M =
8`, `experiment.trials = 10`); scenario powers are given in dBm/dB and
converted once. One channel draw per trial is shared by every scheme,
receiver, target, and sweep point, so curves are paired sample by
sample. The CSV is the single artifact of record: header comments
carry the fully resolved config, rows follow a fixed column order, and
every field is rendered deterministically so identical specs produce
identical bytes. runtime_ms holds the interior-point iteration count
of the run, a machine-independent cost proxy; wall-clock time is
nondeterministic and never reaches the file.
"""

import concurrent.futures
import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, fields

import numpy as np

from . import driver
from . import numerics as nx
from .scenario import SystemConfig, db_to_linear, dbm_to_watts, generate_channels

log = logging.getLogger(__name__)

SCHEMES = ("proposed", "txonly", "separate")
RECEIVERS = ("I", "II")
TARGETS = ("extended", "point")

COLUMNS = (
    "trial",
    "seed",
    "scheme",
    "receiver",
    "target",
    "gamma_db",
    "crb",
    "crb_db",
    "outer_iters",
    "status",
    "tr_R0",
    "runtime_ms",
)


@dataclass(frozen=True)
class ExperimentSpec:
    base: SystemConfig
    sweep_db: tuple
    schemes: tuple = ("proposed",)
    receivers: tuple = ("I",)
    targets: tuple = ("extended",)
    trials: int = 10
    master_seed: int = 1
    out: str = "results.csv"

    def __post_init__(self):
        if self.trials < 1:
            raise nx.InvalidInput("trials must be >= 1")
        if len(self.sweep_db) == 0:
            raise nx.InvalidInput("sweep must be nonempty")
        for name, got, allowed in (
            ("schemes", self.schemes, SCHEMES),
            ("receivers", self.receivers, RECEIVERS),
            ("targets", self.targets, TARGETS),
        ):
            if len(got) == 0 or any(x not in allowed for x in got):
                raise nx.InvalidInput(f"{name} must be a nonempty subset of {allowed}")
        if not self.out:
            raise nx.InvalidInput("output path must be nonempty")


@dataclass(frozen=True)
class ResultRow:
    trial: int
    seed: int
    scheme: str
    receiver: str
    target: str
    gamma_db: float
    crb: float
    crb_db: float
    outer_iters: int
    status: str
    tr_R0: float
    runtime_ms: int


def child_seed(master_seed, trial):
    return int(np.random.SeedSequence(master_seed, spawn_key=(trial,)).generate_state(1)[0])


def _scheme_fn(scheme):
    return {
        "proposed": driver.run_alternating,
        "txonly": driver.run_benchmark_tx_only,
        "separate": driver.run_benchmark_separate,
    }[scheme]


def _run_trial(spec, trial):
    seed = child_seed(spec.master_seed, trial)
    ch = generate_channels(spec.base, seed)
    rows = []
    for gamma_db in spec.sweep_db:
        cfg = spec.base.replace(
            gamma_k=tuple([db_to_linear(gamma_db)] * spec.base.K)
        )
        for scheme in spec.schemes:
            for receiver in spec.receivers:
                for target in spec.targets:
                    sol, trace = _scheme_fn(scheme)(ch, cfg, target, receiver, seed)
                    crb = float(sol.crb)
                    rows.append(
                        ResultRow(
                            trial=trial,
                            seed=seed,
                            scheme=scheme,
                            receiver=receiver,
                            target=target,
                            gamma_db=float(gamma_db),
                            crb=crb,
                            crb_db=10.0 * math.log10(crb) if crb > 0 else float("-inf"),
                            outer_iters=len(trace.records),
                            status=sol.status,
                            tr_R0=(
                                float(trace.records[-1].tr_R0)
                                if trace.records
                                else 0.0
                            ),
                            runtime_ms=trace.total_solver_iters,
                        )
                    )
    return rows


def _fmt(x):
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".12g")
    return str(x)


def resolved_config_lines(spec):
    out = []
    for f in fields(spec.base):
        val = getattr(spec.base, f.name)
        if isinstance(val, tuple):
            flat = []
            for item in val:
                if isinstance(item, tuple):
                    flat.extend(item)
                else:
                    flat.append(item)
            val = ", ".join(_fmt(float(x) if isinstance(x, float) else x) for x in flat)
        else:
            val = _fmt(val)
        out.append(f"# scenario.{f.name} = {val}")
    out.append(f"# experiment.sweep_db = {', '.join(_fmt(float(g)) for g in spec.sweep_db)}")
    out.append(f"# experiment.schemes = {', '.join(spec.schemes)}")
    out.append(f"# experiment.receivers = {', '.join(spec.receivers)}")
    out.append(f"# experiment.targets = {', '.join(spec.targets)}")
    out.append(f"# experiment.trials = {spec.trials}")
    out.append(f"# experiment.master_seed = {spec.master_seed}")
    return out


def _channel_hash(ch):
    parts = [ch.G] + list(ch.h_d) + list(ch.h_r)
    acc = np.concatenate([np.asarray(p).ravel() for p in parts])
    return hashlib.sha256(acc.tobytes()).hexdigest()[:12]


def rows_to_csv_text(spec, rows, debug_hashes=None):
    buf = io.StringIO()
    for line in resolved_config_lines(spec):
        buf.write(line + "\n")
    cols = COLUMNS + (("channel_hash",) if debug_hashes is not None else ())
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        rec = [_fmt(getattr(row, c)) for c in COLUMNS]
        if debug_hashes is not None:
            rec.append(debug_hashes[row.trial])
        writer.writerow(rec)
    return buf.getvalue()


def run_experiment(spec, jobs=1, debug=False):
    """Run the grid, write the CSV, return the rows in canonical order."""
    # fail on an unwritable destination before burning solver time
    handle = open(spec.out, "w")
    try:
        if jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
                chunks = list(
                    pool.map(_run_trial, [spec] * spec.trials, range(spec.trials))
                )
        else:
            chunks = [_run_trial(spec, t) for t in range(spec.trials)]
        rows = [r for chunk in chunks for r in chunk]
        rows.sort(
            key=lambda r: (r.trial, r.gamma_db, r.scheme, r.receiver, r.target)
        )
        hashes = None
        if debug:
            hashes = {
                t: _channel_hash(generate_channels(spec.base, child_seed(spec.master_seed, t)))
                for t in range(spec.trials)
            }
        handle.write(rows_to_csv_text(spec, rows, hashes))
    finally:
        handle.close()
    log.info("wrote %d rows to %s", len(rows), spec.out)
    return rows


def load_rows(path):
    """Read back a results CSV (header comments skipped)."""
    types = {
        "trial": int,
        "seed": int,
        "gamma_db": float,
        "crb": float,
        "crb_db": float,
        "outer_iters": int,
        "tr_R0": float,
        "runtime_ms": int,
    }
    rows = []
    with open(path) as fh:
        body = [ln for ln in fh if not ln.startswith("#")]
    for rec in csv.DictReader(body):
        kw = {c: types.get(c, str)(rec[c]) for c in COLUMNS}
        rows.append(ResultRow(**kw))
    return rows


def summarize(rows, plot_path=None):
    """Aggregate per (scheme, receiver, target, gamma).

    Mean CRB in dB is taken over Converged rows only; the feasibility
    rate counts every non-Infeasible row. Sweep points where nothing
    converged keep rate 0 and carry no mean.
    """
    if not rows:
        raise nx.InvalidInput("no rows to summarize")
    groups = {}
    for r in rows:
        groups.setdefault((r.scheme, r.receiver, r.target, r.gamma_db), []).append(r)
    table = []
    for key in sorted(groups):
        members = groups[key]
        conv = [r.crb_db for r in members if r.status == "Converged" and np.isfinite(r.crb_db)]
        feasible = sum(1 for r in members if r.status != "Infeasible")
        table.append(
            {
                "scheme": key[0],
                "receiver": key[1],
                "target": key[2],
                "gamma_db": key[3],
                "n": len(members),
                "feasibility_rate": feasible / len(members),
                "mean_crb_db": float(np.mean(conv)) if conv else None,
            }
        )
    if plot_path is not None:
        with open(plot_path, "w") as fh:
            fh.write(plot_script(table))
    return table


def plot_script(table):
    """Gnuplot-ready text: inline data blocks plus plot commands."""
    curves = {}
    for entry in table:
        curves.setdefault(
            (entry["scheme"], entry["receiver"], entry["target"]), []
        ).append(entry)
    lines = [
        'set xlabel "SINR threshold (dB)"',
        'set ylabel "mean CRB (dB)"',
        "set key outside",
    ]
    names = []
    for i, key in enumerate(sorted(curves)):
        name = f"$curve{i}"
        names.append((name, "/".join(key)))
        lines.append(f"{name} << EOD")
        for entry in curves[key]:
            if entry["mean_crb_db"] is not None:
                lines.append(f"{_fmt(entry['gamma_db'])} {_fmt(entry['mean_crb_db'])}")
        lines.append("EOD")
    plots = ", ".join(
        f'{name} using 1:2 with linespoints title "{title}"' for name, title in names
    )
    lines.append(f"plot {plots}")
    return "\n".join(lines) + "\n"


# ---- config documents ------------------------------------------------------

# scenario.* keys in natural units -> SystemConfig kwargs
_SCALAR_KEYS = {
    "scenario.M": ("M", int),
    "scenario.N": ("N", int),
    "scenario.K": ("K", int),
    "scenario.T": ("T", int),
    "scenario.P0_dbm": ("P0", lambda x: dbm_to_watts(float(x))),
    "scenario.sigma_R_dbm": ("sigma_R_sq", lambda x: dbm_to_watts(float(x))),
    "scenario.d_over_lambda": ("d_over_lambda", float),
    "scenario.K0_db": ("K0", lambda x: db_to_linear(float(x))),
    "scenario.alpha_BI": ("alpha_BI", float),
    "scenario.alpha_IU": ("alpha_IU", float),
    "scenario.alpha_BU": ("alpha_BU", float),
    "scenario.rician_factor": ("rician_factor", float),
    "scenario.shadow_std_db": ("shadow_std_db", float),
    "scenario.rcs": ("rcs", float),
    "scenario.wavelength": ("wavelength", float),
}
_PAIR_KEYS = {
    "scenario.pos_bs": "pos_bs",
    "scenario.pos_irs": "pos_irs",
    "scenario.pos_target": "pos_target",
}


def parse_config_text(text):
    doc = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise nx.InvalidInput(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in doc:
            raise nx.InvalidInput(f"line {lineno}: duplicate key {key!r}")
        doc[key] = val
    return doc


def _split_list(val):
    return [s.strip() for s in val.split(",") if s.strip()]


def build_spec(doc, trials=None, master_seed=None, out=None):
    """ExperimentSpec from a parsed config document plus CLI overrides."""
    doc = dict(doc)
    kw = {}
    for key, (field_name, conv) in _SCALAR_KEYS.items():
        if key in doc:
            kw[field_name] = conv(doc.pop(key))
    for key, field_name in _PAIR_KEYS.items():
        if key in doc:
            vals = [float(x) for x in _split_list(doc.pop(key))]
            if len(vals) != 2:
                raise nx.InvalidInput(f"{key} needs two coordinates")
            kw[field_name] = tuple(vals)
    if "scenario.cu_region" in doc:
        vals = [float(x) for x in _split_list(doc.pop("scenario.cu_region"))]
        if len(vals) != 4:
            raise nx.InvalidInput("scenario.cu_region needs four coordinates")
        kw["cu_region"] = ((vals[0], vals[1]), (vals[2], vals[3]))
    if "scenario.sigma_k_dbm" in doc:
        k = kw.get("K", SystemConfig.K)
        kw["sigma_k_sq"] = tuple(
            [dbm_to_watts(float(doc.pop("scenario.sigma_k_dbm")))] * k
        )
    base = SystemConfig(**kw)

    def take(key, default=None):
        return doc.pop(key) if key in doc else default

    sweep_raw = take("experiment.sweep_db")
    if sweep_raw is None:
        raise nx.InvalidInput("experiment.sweep_db is required")
    spec_kw = dict(
        base=base,
        sweep_db=tuple(float(x) for x in _split_list(sweep_raw)),
    )
    for key, name, conv in (
        ("experiment.schemes", "schemes", lambda v: tuple(_split_list(v))),
        ("experiment.receivers", "receivers", lambda v: tuple(_split_list(v))),
        ("experiment.targets", "targets", lambda v: tuple(_split_list(v))),
        ("experiment.trials", "trials", int),
        ("experiment.master_seed", "master_seed", int),
        ("experiment.out", "out", str),
    ):
        raw = take(key)
        if raw is not None:
            spec_kw[name] = conv(raw)
    if doc:
        raise nx.InvalidInput(f"unknown config keys: {sorted(doc)}")
    if trials is not None:
        spec_kw["trials"] = int(trials)
    if master_seed is not None:
        spec_kw["master_seed"] = int(master_seed)
    if out is not None:
        spec_kw["out"] = out
    return ExperimentSpec(**spec_kw)


def load_spec(path, trials=None, master_seed=None, out=None):
    with open(path) as fh:
        text = fh.read()
    return build_spec(parse_config_text(text), trials, master_seed, out)
