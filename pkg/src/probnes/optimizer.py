"""The ProbNES loop: select a batch, evaluate, refit the local GP, step the distribution."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import AcquisitionConfig, batch_score, select_batch
from .distribution import SearchDistribution
from .gaussian import as_generator, sample_mvn
from .gp import Dataset, GPModel, KernelSpec, active_mask, fit_hyperparameters
from .quadrature import cmaes_weights, gradient_belief, sample_gradient
from .updates import UpdateResult, apply_update, natural_step

log = logging.getLogger(__name__)

ALGORITHMS = ("prob_cmaes", "prob_xnes", "prob_snes")
KIND_OF = {"prob_cmaes": "full", "prob_xnes": "factor", "prob_snes": "diagonal"}
GRADIENT_MODES = ("expected", "sampled")


@dataclass(frozen=True)
class FixedHyperparameters:
    """Kernel, constant mean and noise held fixed instead of being refit."""

    amplitude: float
    bandwidth: tuple
    mean_const: float
    noise: float

    def model(self, data: Dataset) -> GPModel:
        return GPModel(KernelSpec(self.amplitude, np.asarray(self.bandwidth)), self.mean_const, self.noise, data)


@dataclass(frozen=True)
class OptimizerConfig:
    eta: float = 0.1
    batch: int = 5
    init_points: int | None = None  # defaults to 2d
    iterations: int = 10
    acq: AcquisitionConfig | None = None  # batch_size is overridden by ``batch``
    gradient_mode: str = "expected"
    algorithm: str = "prob_cmaes"
    restarts: int = 3
    max_stalls: int = 6
    final_batch: int | None = None  # size of the last batch, for exact budgets
    fixed: FixedHyperparameters | None = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"unknown gradient mode {self.gradient_mode!r}")

    def n_init(self, d: int) -> int:
        return 2 * d if self.init_points is None else int(self.init_points)

    def acquisition(self, batch: int | None = None) -> AcquisitionConfig:
        acq = self.acq or AcquisitionConfig()
        b = self.batch if batch is None else batch
        return replace(acq, batch_size=b, candidates=max(acq.candidates, b))


@dataclass
class OptimizerState:
    dist: SearchDistribution
    data_full: Dataset
    model: GPModel | None = None
    x_best: np.ndarray | None = None
    y_best: float = float("inf")
    iter: int = 0
    evals: int = 0


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    queries: np.ndarray
    values: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    acq_value: float
    hyperparameters: dict | None
    eta_used: float
    stalled: bool
    n_active: int


@dataclass
class RunTrace:
    init_dist: SearchDistribution
    records: list = field(default_factory=list)
    stalled: bool = False

    @property
    def queries(self) -> np.ndarray:
        return np.vstack([r.queries for r in self.records])

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([r.values for r in self.records])

    @property
    def query_iterations(self) -> np.ndarray:
        return np.concatenate([np.full(len(r.values), r.iteration) for r in self.records])

    @property
    def final_dist(self) -> SearchDistribution:
        last = self.records[-1]
        return SearchDistribution(last.mu, last.sigma, kind=self.init_dist.kind)

    @property
    def best_so_far(self) -> np.ndarray:
        y = np.where(np.isfinite(self.values), self.values, np.inf)
        return np.minimum.accumulate(y)


def _evaluate(objective, X) -> np.ndarray:
    out = np.empty(X.shape[0])
    for i, x in enumerate(X):
        try:
            out[i] = float(objective(x))
        except (ArithmeticError, ValueError) as exc:
            log.debug("objective failed at %s: %s", x, exc)
            out[i] = np.nan
    return np.where(np.isfinite(out), out, np.nan)


def _fit(state: OptimizerState, cfg: OptimizerConfig, rng) -> tuple[GPModel | None, int]:
    """Model conditioned on the active subset (full data when it is too small)."""
    data = state.data_full
    d = state.dist.dim
    conf = cfg.acquisition().conf
    mask = active_mask(data, state.dist, conf)
    active = data.subset(mask) if mask.sum() >= d + 2 else data
    if len(active) < 2:
        return None, len(active)
    if cfg.fixed is not None:
        return cfg.fixed.model(active), len(active)
    model = fit_hyperparameters(active, restarts=cfg.restarts, rng_seed=rng, init=state.model)
    return model, len(active)


def _update(state: OptimizerState, model: GPModel, cfg: OptimizerConfig, rng) -> UpdateResult:
    dist = state.dist
    if cfg.gradient_mode == "expected":
        w = cmaes_weights(model, dist)
        return apply_update(cfg.algorithm, dist, w, model.X, model.kernel, cfg.eta)
    belief = gradient_belief(model, dist)
    draw = sample_gradient(belief, rng)
    g_mu, G = belief.split(draw)
    return natural_step(dist, g_mu, G, cfg.eta, cfg.algorithm)


def _absorb(state: OptimizerState, X, y):
    ok = np.isfinite(y)
    if ok.any():
        state.data_full = state.data_full.append(X[ok], y[ok])
        i = int(np.argmin(np.where(ok, y, np.inf)))
        if y[i] < state.y_best:
            state.y_best, state.x_best = float(y[i]), X[i].copy()
    state.evals += X.shape[0]


def run(objective, cfg: OptimizerConfig, init_dist: SearchDistribution, rng_seed=None) -> RunTrace:
    """Minimize ``objective`` starting from ``init_dist``; returns the full trace."""
    rng = as_generator(rng_seed)
    dist = init_dist.as_kind(KIND_OF[cfg.algorithm])
    d = dist.dim
    state = OptimizerState(dist=dist, data_full=Dataset.empty(d))
    trace = RunTrace(init_dist=dist)

    def step(X, y, acq_value, iteration):
        _absorb(state, X, y)
        model, n_active = _fit(state, cfg, rng)
        state.model = model
        eta_used, stalled = 0.0, False
        # the initial design only conditions the model; steps start at iteration 1
        if model is not None and iteration > 0:
            result = _update(state, model, cfg, rng)
            state.dist, eta_used, stalled = result.dist, result.eta_used, result.stalled
        trace.records.append(
            IterationRecord(
                iteration=iteration,
                queries=X,
                values=y,
                mu=state.dist.mu.copy(),
                sigma=state.dist.sigma.copy(),
                acq_value=acq_value,
                hyperparameters=None if model is None else model.hyperparameters(),
                eta_used=eta_used,
                stalled=stalled,
                n_active=n_active,
            )
        )
        return stalled

    X0 = sample_mvn(dist, cfg.n_init(d), rng)
    step(X0, _evaluate(objective, X0), float("nan"), 0)

    stalls = 0
    for t in range(1, cfg.iterations + 1):
        b = cfg.final_batch if (t == cfg.iterations and cfg.final_batch) else cfg.batch
        acq = cfg.acquisition(b)
        X = select_batch(state.model, state.dist, acq, rng)
        score = batch_score(state.model, state.dist, X)
        state.iter = t
        stalled = step(X, _evaluate(objective, X), score, t)
        stalls = stalls + 1 if stalled else 0
        if stalls >= cfg.max_stalls:
            trace.stalled = True
            log.warning("run stopped after %d consecutive rejected steps", stalls)
            break
    return trace


def iterations_for_budget(budget: int, n_init: int, batch: int) -> tuple[int, int | None]:
    """(iterations, final batch size) so that n_init + evaluations == budget."""
    if budget < n_init:
        raise ValueError("budget must be at least the number of initial points")
    full, rest = divmod(budget - n_init, batch)
    if rest:
        return full + 1, rest
    return full, None
