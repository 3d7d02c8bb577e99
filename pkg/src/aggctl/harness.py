"""Batch experiments: configuration, seeded replicates, certification and
plot-ready output files.

A batch sweeps population sizes and replicates of one scenario.  Replicate
(size, r) draws its population and initial state from the seed
``SeedSequence(base_seed, spawn_key=(size, r))``, so adding sizes or
replicates never perturbs the existing ones.  Everything written to disk is a
pure function of the configuration, except the manifest's timestamp, host and
wall-time entries.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import coordinator as co
from . import scenarios as sc
from . import verify as vf
from .errors import InvalidInputError

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (1e-2, 1e-3, 1e-4)
FORMATS = ("csv", "json")

# config sections and the ExperimentConfig fields they hold
_SECTIONS = {
    "scenario": {"name": "scenario", "params": "params"},
    "experiment": {
        "sizes": "sizes",
        "replicates": "replicates",
        "thresholds": "thresholds",
        "base_seed": "base_seed",
    },
    "run": {
        "tol": "tol",
        "max_iter": "max_iter",
        "alpha_bar": "alpha_bar",
        "epsilon": "epsilon",
        "tight": "tight",
        "cert_tol": "cert_tol",
    },
    "output": {"out": "out", "workers": "workers", "format": "format", "traces": "traces"},
}


@dataclass
class ExperimentConfig:
    """One sweep over population sizes and replicates.

    Attributes
    ----------
    scenario : str
        Builder name: "congestion", "pev", "symmetric", "random" or
        "two_agent" (which needs sizes = [2]).
    params : dict
        Builder parameters; unknown keys are rejected by the builder.
    sizes : list of int
    replicates : int
        Experiments per size.
    thresholds : list of float
        Residual levels whose first-hit iteration is reported, strictly
        decreasing.
    base_seed : int
    tol : float, optional
        Stopping tolerance on ||Theta||; defaults to the smallest threshold.
    max_iter : int
    alpha_bar : float
        Constant relaxation step.
    epsilon : float, optional
        Forward step; defaults to 0.9 beta.
    tight : bool
        Use the sharper cocoercivity constant.
    cert_tol : float, optional
        Certificate tolerance; by default the bound implied by each run's
        final residual (see ``verify.certificate_tolerance``).
    out : str
    workers : int
    format : {"csv", "json"}
    traces : bool
        Write per-iteration residual tables.
    """

    scenario: str = "congestion"
    params: dict = field(default_factory=dict)
    sizes: list = field(default_factory=lambda: [100, 1000, 10000])
    replicates: int = 10
    thresholds: list = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    base_seed: int = 0
    tol: float = None
    max_iter: int = 200_000
    alpha_bar: float = 1.0
    epsilon: float = None
    tight: bool = False
    cert_tol: float = None
    out: str = "results"
    workers: int = 1
    format: str = "csv"
    traces: bool = True

    def __post_init__(self):
        self.sizes = [int(s) for s in self.sizes]
        self.thresholds = [float(x) for x in self.thresholds]
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise InvalidInputError("sizes must be positive")
        if len(set(self.sizes)) != len(self.sizes):
            raise InvalidInputError("sizes must be distinct")
        if not self.thresholds or any(x <= 0 for x in self.thresholds):
            raise InvalidInputError("thresholds must be positive")
        if any(b >= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise InvalidInputError("thresholds must be strictly decreasing")
        if int(self.replicates) < 1:
            raise InvalidInputError("replicates must be >= 1")
        if int(self.workers) < 1:
            raise InvalidInputError("workers must be >= 1")
        if int(self.max_iter) < 1:
            raise InvalidInputError("max_iter must be >= 1")
        if self.format not in FORMATS:
            raise InvalidInputError(f"format must be one of {FORMATS}")
        if self.tol is not None and not float(self.tol) > 0:
            raise InvalidInputError("tol must be positive")
        if self.cert_tol is not None and not float(self.cert_tol) > 0:
            raise InvalidInputError("cert_tol must be positive")
        if int(self.base_seed) < 0 or int(self.base_seed) >= 2**64:
            raise InvalidInputError("base_seed must be an unsigned 64-bit integer")
        self.replicates = int(self.replicates)
        self.workers = int(self.workers)
        self.max_iter = int(self.max_iter)
        self.base_seed = int(self.base_seed)
        self.params = dict(self.params or {})
        co.Constant(self.alpha_bar)  # validates the step

    @property
    def stop_tol(self):
        return float(self.tol) if self.tol is not None else min(self.thresholds)

    def run_config(self):
        return co.RunConfig(
            epsilon=self.epsilon,
            schedule=co.Constant(self.alpha_bar),
            tol=self.stop_tol,
            max_iter=self.max_iter,
            tight=self.tight,
        )

    def to_dict(self):
        """Sectioned form, the layout of a config file."""
        flat = asdict(self)
        return {sec: {key: flat[attr] for key, attr in keys.items()} for sec, keys in _SECTIONS.items()}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise InvalidInputError("config must be a mapping")
        unknown = set(d) - set(_SECTIONS)
        if unknown:
            raise InvalidInputError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for sec, body in d.items():
            if not isinstance(body, dict):
                raise InvalidInputError(f"section {sec!r} must be a mapping")
            bad = set(body) - set(_SECTIONS[sec])
            if bad:
                raise InvalidInputError(f"unknown keys in [{sec}]: {sorted(bad)}")
            for key, value in body.items():
                kwargs[_SECTIONS[sec][key]] = value
        return cls(**kwargs)

    def replace(self, **changes):
        flat = asdict(self)
        flat.update({k: v for k, v in changes.items() if v is not None})
        return ExperimentConfig(**flat)


def load_config(path):
    """Read a JSON config file (or a manifest, whose "config" entry is used)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(data, dict) and "manifest_version" in data:
        data = data["config"]
    return ExperimentConfig.from_dict(data)


def derive_seed(base_seed, size, replicate):
    """Stable 64-bit seed for replicate `replicate` at population size `size`."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(size), int(replicate)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# --------------------------------------------------------------------------
# single experiment


@dataclass
class ExperimentRecord:
    scenario: str
    N: int
    replicate: int
    seed: int
    status: str
    iterations: int
    final_residual: float
    hits: dict
    epsilon: float
    certificate: dict
    aggregate: np.ndarray
    demand: np.ndarray
    caps: np.ndarray
    trace: dict = field(repr=False)
    strategies: np.ndarray = field(repr=False, default=None)
    lam: np.ndarray = field(repr=False, default=None)
    wall_time: float = 0.0

    @property
    def converged(self):
        return self.status == "converged"

    @property
    def certified(self):
        return bool(self.certificate.get("passed", False))

    def row(self):
        """Deterministic summary row (no timings)."""
        out = {
            "scenario": self.scenario,
            "N": self.N,
            "replicate": self.replicate,
            "seed": self.seed,
            "status": self.status,
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "epsilon": self.epsilon,
            "cert_passed": self.certified,
            "cert_tol": self.certificate.get("tol"),
            "cert_max_residual": self.certificate.get("max_residual"),
            "cert_feasibility": self.certificate.get("feasibility"),
        }
        for thr, it in self.hits.items():
            out[f"iters_to_{thr:g}"] = it
        return out


def build_replicate(config, size, replicate):
    """Population, scenario and initial state of one replicate."""
    seed = derive_seed(config.base_seed, size, replicate)
    pop, scen = sc.build(config.scenario, size, seed, config.params)
    z0 = sc.initial_state(pop, seed, 0)
    return pop, scen, z0, seed


def run_one(config, size, replicate):
    """Build, run and certify one replicate."""
    pop, scen, z0, seed = build_replicate(config, size, replicate)
    traj = co.run(pop, config.run_config(), z0)
    state = traj.final_state
    x_bar = co.equilibrium_strategies(pop, state)
    final_res = float(traj.residual[-1])
    if config.cert_tol is not None:
        cert_tol = float(config.cert_tol)
    else:
        # the bound implied by the residual, with room for solver round-off
        cert_tol = vf.certificate_tolerance(pop, final_res) * (1.0 + 1e-6) + 1e-12
    cert = vf.check_equilibrium(pop, x_bar, state.lam, tol=cert_tol)
    demand = None
    if config.scenario == "pev":
        demand = np.asarray(scen.params["d_profile"], dtype=float)
    caps = pop.S.bounds()[1]
    trace = {
        "t": traj.t,
        "residual": traj.residual,
        "alpha_t": traj.alpha,
        "sigma": traj.sigma,
        "lambda": traj.lam,
    }
    return ExperimentRecord(
        scenario=config.scenario,
        N=size,
        replicate=replicate,
        seed=seed,
        status=traj.status,
        iterations=int(traj.t[-1]),
        final_residual=final_res,
        hits={thr: traj.iterations_to(thr) for thr in config.thresholds},
        epsilon=float(traj.epsilon),
        certificate=cert.as_dict(),
        aggregate=x_bar.mean(axis=0),
        demand=demand,
        caps=caps,
        trace=trace if config.traces else None,
        strategies=x_bar,
        lam=state.lam,
        wall_time=traj.wall_time,
    )


def _run_task(args):
    config, size, replicate = args
    return run_one(config, size, replicate)


# --------------------------------------------------------------------------
# batch


@dataclass
class BatchResult:
    config: ExperimentConfig
    records: list
    wall_time: float = 0.0

    @property
    def all_converged(self):
        return all(r.converged for r in self.records)

    @property
    def all_certified(self):
        return all(r.certified for r in self.records)

    @property
    def exit_code(self):
        return 0 if self.all_converged and self.all_certified else 1

    def iterations(self, size, threshold):
        """Iterations-to-threshold over the replicates of one size (None = not reached)."""
        return [r.hits[threshold] for r in self.records if r.N == size]

    def summary(self):
        """Rows keyed by (N, threshold) with mean/min/max/median iterations."""
        rows = []
        for size in self.config.sizes:
            for thr in self.config.thresholds:
                its = self.iterations(size, thr)
                hit = np.array([i for i in its if i is not None], dtype=float)
                row = {
                    "scenario": self.config.scenario,
                    "N": size,
                    "threshold": thr,
                    "runs": len(its),
                    "reached": int(hit.size),
                }
                for name, fn in (("mean", np.mean), ("min", np.min), ("max", np.max), ("median", np.median)):
                    row[name] = float(fn(hit)) if hit.size else None
                rows.append(row)
        return rows

    def median_iterations(self, threshold):
        """{N: median iterations to threshold} over replicates that reached it."""
        out = {}
        for size in self.config.sizes:
            hit = [i for i in self.iterations(size, threshold) if i is not None]
            out[size] = float(np.median(hit)) if hit else None
        return out


def run_experiments(config, progress=None):
    """Run every (size, replicate) of `config`; deterministic given the config.

    Replicates are distributed over ``config.workers`` processes; results come
    back in (size, replicate) order regardless of scheduling.
    """
    tasks = [(config, s, r) for s in config.sizes for r in range(config.replicates)]
    start = time.perf_counter()
    records = []
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for rec in pool.map(_run_task, tasks):
                records.append(rec)
                if progress:
                    progress(rec)
    else:
        for task in tasks:
            rec = _run_task(task)
            records.append(rec)
            if progress:
                progress(rec)
    for rec in records:
        if rec.status == "diverged":
            log.warning("N=%d replicate %d diverged", rec.N, rec.replicate)
    return BatchResult(config, records, time.perf_counter() - start)


# --------------------------------------------------------------------------
# output


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _write_table(path, header, rows, fmt):
    try:
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for row in rows:
                    w.writerow([_fmt(v) for v in row])
        else:
            records = [dict(zip(header, row)) for row in rows]
            path.write_text(json.dumps(records, indent=1, default=_json_default) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def trace_table(record):
    """Header and rows of the per-iteration table: t, residual, alpha_t,
    sigma_1..sigma_n, lambda_1..lambda_n."""
    tr = record.trace
    n = tr["sigma"].shape[1]
    header = (
        ["t", "residual", "alpha_t"]
        + [f"sigma_{j + 1}" for j in range(n)]
        + [f"lambda_{j + 1}" for j in range(n)]
    )
    rows = []
    for k in range(len(tr["t"])):
        rows.append(
            [int(tr["t"][k]), float(tr["residual"][k]), float(tr["alpha_t"][k])]
            + [float(v) for v in tr["sigma"][k]]
            + [float(v) for v in tr["lambda"][k]]
        )
    return header, rows


def profile_rows(record):
    """Equilibrium aggregate per slot; for PEV also demand and their sum."""
    rows = []
    for j, a in enumerate(record.aggregate):
        d = None if record.demand is None else float(record.demand[j])
        rows.append(
            [
                record.scenario,
                record.N,
                record.replicate,
                j + 1,
                float(a),
                float(record.caps[j]),
                d,
                None if d is None else d + float(a),
            ]
        )
    return rows


def versions():
    import numba

    return {
        "aggctl": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "numba": numba.__version__,
        "platform": platform.platform(),
    }


def emit(result, out=None, fmt=None):
    """Write traces, summary, run table, profiles and manifest to `out`.

    Returns the list of written paths.
    """
    config = result.config
    out = Path(out or config.out)
    fmt = fmt or config.format
    if fmt not in FORMATS:
        raise InvalidInputError(f"format must be one of {FORMATS}")
    ext = "csv" if fmt == "csv" else "json"
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    if config.traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for rec in result.records:
            if rec.trace is None:
                continue
            header, rows = trace_table(rec)
            name = f"{rec.scenario}_N{rec.N}_r{rec.replicate}.{ext}"
            written.append(_write_table(tdir / name, header, rows, fmt))

    summary = result.summary()
    header = ["scenario", "N", "threshold", "runs", "reached", "mean", "min", "max", "median"]
    written.append(
        _write_table(out / f"summary.{ext}", header, [[r[h] for h in header] for r in summary], fmt)
    )

    runs = [rec.row() for rec in result.records]
    header = list(runs[0]) if runs else []
    written.append(_write_table(out / f"runs.{ext}", header, [[r[h] for h in header] for r in runs], fmt))

    header = ["scenario", "N", "replicate", "slot", "aggregate", "cap", "demand", "demand_plus_aggregate"]
    rows = [row for rec in result.records for row in profile_rows(rec)]
    written.append(_write_table(out / f"profiles.{ext}", header, rows, fmt))

    manifest = {
        "manifest_version": 1,
        "config": config.to_dict(),
        "versions": versions(),
        "seeds": [
            {"N": rec.N, "replicate": rec.replicate, "seed": rec.seed} for rec in result.records
        ],
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "wall_time": {
            "total": result.wall_time,
            "runs": [
                {"N": rec.N, "replicate": rec.replicate, "seconds": rec.wall_time}
                for rec in result.records
            ],
        },
        "cpu_count": os.cpu_count(),
        "exit_code": result.exit_code,
        "files": sorted(str(p.relative_to(out)) for p in written),
    }
    path = out / "manifest.json"
    try:
        path.write_text(json.dumps(manifest, indent=1, default=_json_default) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    written.append(path)
    return written


# --------------------------------------------------------------------------
# saved strategy profiles


def profile_document(config, record):
    """JSON-ready description of a run's equilibrium candidate for ``certify``."""
    return {
        "scenario": {"name": config.scenario, "params": config.params},
        "N": record.N,
        "seed": record.seed,
        "strategies": np.asarray(record.strategies).tolist(),
        "lambda": np.asarray(record.lam).tolist(),
    }


def certify_document(doc, tol=vf.DEFAULT_CERT_TOL):
    """Rebuild the population named in a profile document and certify it."""
    try:
        scen = doc["scenario"]
        pop, _ = sc.build(scen["name"], int(doc["N"]), int(doc["seed"]), scen.get("params"))
        x_bar = np.asarray(doc["strategies"], dtype=float)
        lam = np.asarray(doc["lambda"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"malformed profile document: {exc}") from exc
    return vf.check_equilibrium(pop, x_bar, lam, tol=tol)
