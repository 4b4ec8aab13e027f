"""Experiment runner: multi-seed runs, ablation sweeps, CSV traces and JSON run records."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from statistics import NormalDist

import numpy as np

from . import __version__
from .acquisition import AcquisitionConfig
from .baselines import BASELINES, BaselineConfig, run_baseline
from .distribution import SearchDistribution
from .optimizer import ALGORITHMS, OptimizerConfig, iterations_for_budget, run
from .testfunctions import get_function

log = logging.getLogger(__name__)

PRIORS = {
    "default": (-1.0, 1.0),
    "wrong": (-3.0, 1.0),
    "weak": (-1.0, 4.0),
}
SWEEP_AXES = {
    "dim": "dim",
    "batch": "batch",
    "acq.mode": "acq_mode",
    "conf": "conf",
    "gradient_mode": "gradient_mode",
    "prior": "prior",
    "eta": "eta",
}
Z95 = NormalDist().inv_cdf(0.975)


@dataclass(frozen=True)
class ExperimentSpec:
    function: str = "ackley"
    dim: int | None = None
    algorithm: str = "prob_cmaes"
    seeds: tuple = (0,)
    budget: int = 150
    eta: float = 0.1
    batch: int = 5
    init_points: int | None = None
    acq_mode: str = "best_of_random"
    candidates: int = 1000
    conf: float = 0.9973
    gradient_mode: str = "expected"
    prior: str = "default"
    box: tuple = (-3.0, 3.0)
    restarts: int = 3
    population: int | None = None
    wall_time: bool = False

    def __post_init__(self):
        seeds = tuple(int(s) for s in np.atleast_1d(self.seeds))
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be distinct")
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "box", tuple(float(b) for b in self.box))
        fn = get_function(self.function)
        object.__setattr__(self, "dim", fn.check_dim(self.dim))
        if self.algorithm not in ALGORITHMS + BASELINES:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.prior not in PRIORS:
            raise ValueError(f"unknown prior {self.prior!r}; choose from {sorted(PRIORS)}")
        if self.is_probnes and self.budget < self.n_init:
            raise ValueError("budget must be at least the number of initial points")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")
        self.optimizer_config()  # validates the remaining fields

    @property
    def is_probnes(self) -> bool:
        return self.algorithm in ALGORITHMS

    @property
    def n_init(self) -> int:
        return 2 * self.dim if self.init_points is None else int(self.init_points)

    def init_dist(self) -> SearchDistribution:
        mean, var = PRIORS[self.prior]
        return SearchDistribution.isotropic(np.full(self.dim, mean), var)

    def box_arrays(self):
        lo, hi = self.box
        return np.full(self.dim, lo), np.full(self.dim, hi)

    def optimizer_config(self) -> OptimizerConfig:
        if not self.is_probnes:
            return None
        iterations, final = iterations_for_budget(self.budget, self.n_init, self.batch)
        acq = AcquisitionConfig(
            mode=self.acq_mode,
            batch_size=self.batch,
            candidates=max(self.candidates, self.batch),
            conf=self.conf,
            box=self.box_arrays() if self.acq_mode == "global_box" else None,
        )
        return OptimizerConfig(
            eta=self.eta,
            batch=self.batch,
            init_points=self.n_init,
            iterations=iterations,
            acq=acq,
            gradient_mode=self.gradient_mode,
            algorithm=self.algorithm,
            restarts=self.restarts,
            final_batch=final,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["seeds"] = list(self.seeds)
        out["box"] = list(self.box)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SeedResult:
    seed: int
    rows: list
    final_regret: float
    stalled: bool
    hyperparameters: list = field(default_factory=list)
    acq_values: list = field(default_factory=list)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    seeds: list
    summary: dict
    csv_path: Path | None = None
    json_path: Path | None = None

    @property
    def stalled(self) -> bool:
        return any(r.stalled for r in self.seeds)


def simple_regret(values, optimum_value: float) -> np.ndarray:
    """Running best observed value minus the optimum; failed evaluations never improve it."""
    y = np.asarray(values, dtype=float)
    y = np.where(np.isfinite(y), y, np.inf)
    if y.size == 0:
        raise ValueError("empty trace")
    return np.minimum.accumulate(y) - optimum_value


def summarize(final_regrets) -> dict:
    """Median plus a normal-approximation 95% interval for the mean."""
    r = np.asarray(final_regrets, dtype=float)
    n = r.size
    mean = float(np.mean(r))
    half = float(Z95 * np.std(r, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return {
        "n": n,
        "median": float(np.median(r)),
        "mean": mean,
        "ci95_low": mean - half,
        "ci95_high": mean + half,
    }


class _TimedObjective:
    def __init__(self, fn, enabled: bool):
        self.fn = fn
        self.enabled = enabled
        self.t0 = time.perf_counter()
        self.stamps = []

    def __call__(self, x):
        y = self.fn(x)
        self.stamps.append((time.perf_counter() - self.t0) * 1e3 if self.enabled else 0.0)
        return y


def run_seed(spec: ExperimentSpec, seed: int) -> SeedResult:
    fn = get_function(spec.function)
    opt = fn.optimum_value(spec.dim)
    objective = _TimedObjective(fn, spec.wall_time)
    init = spec.init_dist()
    hyper, acq_values, stalled = [], [], False
    if spec.is_probnes:
        trace = run(objective, spec.optimizer_config(), init, seed)
        X, y, its = trace.queries, trace.values, trace.query_iterations
        stalled = trace.stalled
        for rec in trace.records:
            hyper.append({"iteration": rec.iteration, **(rec.hyperparameters or {})})
            acq_values.append(rec.acq_value)
    else:
        cfg = BaselineConfig(spec.algorithm, population=spec.population, eta=spec.eta, eta_mean=spec.eta)
        trace = run_baseline(objective, cfg, init, spec.budget, seed)
        X, y, its = trace.queries, trace.values, trace.query_iterations
    regret = simple_regret(y, opt) if y.size else np.zeros(0)
    best = regret + opt
    rows = [
        (seed, int(its[i]), i, *X[i].tolist(), float(y[i]), float(best[i]), float(regret[i]), objective.stamps[i])
        for i in range(y.size)
    ]
    final = float(regret[-1]) if regret.size else float("nan")
    return SeedResult(seed, rows, final, stalled, hyper, acq_values)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def csv_header(d: int) -> list:
    return ["seed", "iteration", "query_index", *[f"x{i}" for i in range(d)], "y", "best_so_far", "simple_regret", "wall_time_ms"]


def write_csv(path: Path, d: int, results) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_header(d))
        for res in results:
            for row in res.rows:
                writer.writerow([_fmt(v) for v in row])


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def run_record(spec: ExperimentSpec, results, summary: dict) -> dict:
    fn = get_function(spec.function)
    return _clean(
        {
            "spec": spec.to_dict(),
            "version": __version__,
            "optimum_value": fn.optimum_value(spec.dim),
            "bounds_context": {"lower": spec.box[0], "upper": spec.box[1]},
            "summary": summary,
            "seeds": [
                {
                    "seed": r.seed,
                    "final_regret": r.final_regret,
                    "evaluations": len(r.rows),
                    "stalled": r.stalled,
                    "acq_values": r.acq_values,
                    "hyperparameters": r.hyperparameters,
                }
                for r in results
            ],
        }
    )


def _run_seed_args(args):
    return run_seed(*args)


def run_experiment(spec: ExperimentSpec, out_dir=None, name: str | None = None, workers: int = 1) -> ExperimentResult:
    """Run every seed; files are written once all seeds have finished."""
    jobs = [(spec, s) for s in spec.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_seed_args, jobs))
    else:
        results = [run_seed(*job) for job in jobs]
    summary = summarize([r.final_regret for r in results])
    out = ExperimentResult(spec, results, summary)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = name or f"{spec.function}_d{spec.dim}_{spec.algorithm}"
        out.csv_path = out_dir / f"{stem}.csv"
        out.json_path = out_dir / f"{stem}.json"
        write_csv(out.csv_path, spec.dim, results)
        with open(out.json_path, "w") as fh:
            json.dump(run_record(spec, results, summary), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return out


def _coerce(field_name: str, value):
    if field_name in ("dim", "batch"):
        return int(value)
    if field_name in ("conf", "eta"):
        return float(value)
    return str(value)


def sweep(base: ExperimentSpec, axis: str, values, out_dir=None, workers: int = 1) -> list:
    """One experiment per value; all share the base spec's seeds for paired comparison."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"invalid sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    name = SWEEP_AXES[axis]
    results = []
    for value in values:
        spec = replace(base, **{name: _coerce(name, value)})
        stem = f"{spec.function}_{spec.algorithm}_{axis}={value}"
        results.append(run_experiment(spec, out_dir, stem, workers))
    return results
