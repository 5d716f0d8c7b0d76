"""
Differential Evolution (DE/rand/1/bin) over box bounds, the output-mismatch
objective and the two-stage estimation driver.

Stage 1 fits the parameters that shape the pre-disturbance operating point on
the steady window; stage 2 fits the remaining dynamic parameters on the
disturbance window with the stage-1 values held fixed.
"""

import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core import config
from core.exceptions import ConfigurationError, ObjectiveError, WindowOrderError
from core.logger import setup_logger
from services.parameters import NAMES, SG_NAMES, STAGE1, STAGE2, ParameterSet
from services.playin_simulator import SimConfig, simulate_batch, with_anchor
from services.validation_report import output_error, series_through
from utils.timeseries_io import BaseSystem, PccTimeSeries, Window, window_slice

logger = setup_logger(__name__)

INIT_METHODS = ("uniform_in_bounds", "around_reference")
HISTORY_COLUMNS = ["stage", "generation", "best_eps"]


@dataclass(frozen=True)
class DeConfig:
    population_size: int = 15
    f_s: float = 0.8
    c_r: float = 0.3
    max_generations: int = 300
    target_eps: float = field(default_factory=lambda: config.settings.target_eps)
    seed: int = field(default_factory=lambda: config.settings.seed)
    init: str = "uniform_in_bounds"
    init_fraction: float = 0.2
    reference_names: Optional[Tuple[str, ...]] = None   # None: every coordinate
    progress_every: int = field(default_factory=lambda: config.settings.progress_every)

    def __post_init__(self):
        if self.population_size < 4:
            raise ConfigurationError(
                f"population_size must be >= 4 (rand/1 needs 3 members besides the target), got {self.population_size}")
        if not 0.0 < self.f_s <= 2.0:
            raise ConfigurationError(f"f_s must be in (0, 2], got {self.f_s}")
        if not 0.0 <= self.c_r <= 1.0:
            raise ConfigurationError(f"c_r must be in [0, 1], got {self.c_r}")
        if self.max_generations < 0:
            raise ConfigurationError(f"max_generations must be >= 0, got {self.max_generations}")
        if self.init not in INIT_METHODS:
            raise ConfigurationError(f"init must be one of {INIT_METHODS}, got '{self.init}'")
        if not 0.0 < self.init_fraction < 1.0:
            raise ConfigurationError(f"init_fraction must be in (0, 1), got {self.init_fraction}")

    @classmethod
    def stage1(cls, seed: Optional[int] = None, **overrides) -> "DeConfig":
        """15 individuals, F_s 0.8, C_r 0.3; SG parameters start within 80-120 % of reference."""
        seed = config.settings.seed if seed is None else seed
        kwargs = dict(population_size=15, f_s=0.8, c_r=0.3, max_generations=300, seed=seed,
                      init="around_reference", init_fraction=0.2, reference_names=SG_NAMES)
        kwargs.update(overrides)
        return cls(**kwargs)

    @classmethod
    def stage2(cls, seed: Optional[int] = None, **overrides) -> "DeConfig":
        """30 individuals, F_s 0.8, C_r 0.7, all within 80-120 % of reference."""
        seed = config.settings.seed + 1 if seed is None else seed
        kwargs = dict(population_size=30, f_s=0.8, c_r=0.7, max_generations=600, seed=seed,
                      init="around_reference", init_fraction=0.2, reference_names=None)
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass(frozen=True)
class DeResult:
    best_x: np.ndarray
    best_eps: float
    history: Tuple[float, ...]
    evaluations: int
    penalties: int


@dataclass(frozen=True)
class EstimationResult:
    fitted: ParameterSet
    best_x: Tuple[float, ...]
    best_eps: float
    history: Tuple[float, ...]
    evaluations: int
    stage_label: str
    free_names: Tuple[str, ...] = ()
    penalties: int = 0
    stages: Tuple["EstimationResult", ...] = ()


# =============================================================================
# Objective
# =============================================================================

class ParameterObjective:
    """
    Batch objective over free-parameter vectors:
    eps = mse(P, P_hat) + mse(Q, Q_hat) in pu on the window. A failed
    simulation scores `penalty` and is counted.
    """

    def __init__(self, base_params: ParameterSet, names: Sequence[str], measured: PccTimeSeries,
                 window: Window, cfg: Optional[SimConfig] = None, base: Optional[BaseSystem] = None,
                 penalty: Optional[float] = None):
        self.base_params = base_params
        self.names = tuple(names)
        self.window = window
        self.series = series_through(measured, window)
        window_slice(self.series, window)
        self.cfg = cfg or SimConfig()
        self.base = base or BaseSystem.default()
        self.penalty = config.settings.penalty if penalty is None else penalty
        self.penalties = 0
        self.evaluations = 0

    def parameter_set(self, theta) -> ParameterSet:
        return self.base_params.with_values(dict(zip(self.names, (float(v) for v in theta))))

    def __call__(self, population) -> np.ndarray:
        population = np.atleast_2d(np.asarray(population, dtype=float))
        sets = [self.parameter_set(row) for row in population]
        result = simulate_batch(sets, self.series, self.cfg, self.base)
        eps = np.empty(len(sets))
        for i in range(len(sets)):
            if result.failed[i]:
                eps[i] = self.penalty
                self.penalties += 1
                logger.debug(f"[⚠] Penalised candidate {dict(zip(self.names, population[i]))}: {result.errors[i]}")
                continue
            mse_p, mse_q = output_error(self.series, result.p_hat[i], result.q_hat[i], self.window, self.base.s_base)
            eps[i] = mse_p + mse_q
        self.evaluations += len(sets)
        return eps


def objective(theta, base_params: ParameterSet, measured: PccTimeSeries, window: Window,
              cfg: Optional[SimConfig] = None, names: Optional[Sequence[str]] = None,
              base: Optional[BaseSystem] = None) -> float:
    """eps(theta) for the free parameters of base_params (or `names`)."""
    names = tuple(names) if names is not None else base_params.free_names()
    return float(ParameterObjective(base_params, names, measured, window, cfg, base)([list(theta)])[0])


def vectorize(fn: Callable[[np.ndarray], float]) -> Callable[[np.ndarray], np.ndarray]:
    """Lift a scalar objective to the batch form de_optimize evaluates."""
    def batch(population):
        return np.array([fn(np.asarray(row, dtype=float)) for row in np.atleast_2d(population)], dtype=float)
    return batch


# =============================================================================
# DE/rand/1/bin
# =============================================================================

def reflect(x: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Fold out-of-box coordinates back by reflection at the bounds; in-box ones are untouched."""
    lower = np.broadcast_to(lower, x.shape)
    upper = np.broadcast_to(upper, x.shape)
    out = np.array(x, dtype=float)
    outside = (out < lower) | (out > upper)
    if not np.any(outside):
        return out
    width = (upper - lower)[outside]
    offset = np.mod(out[outside] - lower[outside], np.where(width > 0, 2.0 * width, 1.0))
    offset = np.where(offset > width, 2.0 * width - offset, offset)
    offset = np.where(width > 0, offset, 0.0)
    out[outside] = lower[outside] + offset
    return np.clip(out, lower, upper)


def _initial_population(rng, lower, upper, cfg: DeConfig, reference, mask):
    u = rng.random((cfg.population_size, len(lower)))
    pop = lower + u * (upper - lower)
    if cfg.init == "around_reference":
        around = reference * (1.0 + cfg.init_fraction * (2.0 * u - 1.0))
        pop = np.where(mask[None, :], reflect(around, lower, upper), pop)
    return pop


def _check_finite(values, population, generation):
    bad = ~np.isfinite(values)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ObjectiveError(
            f"Objective returned {values[i]!r} at generation {generation} for candidate {population[i].tolist()}")


def de_optimize(obj: Callable[[np.ndarray], np.ndarray], bounds: Sequence[Tuple[float, float]], cfg: DeConfig,
                reference: Optional[Sequence[float]] = None, names: Optional[Sequence[str]] = None,
                label: str = "de") -> DeResult:
    """
    Minimise obj over the box. obj takes a (P, d) population and returns P
    objective values. Selection is greedy (trial replaces target when not
    worse), so the per-generation best never increases.
    """
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    lower, upper = bounds[:, 0], bounds[:, 1]
    if not (np.all(np.isfinite(bounds)) and np.all(lower <= upper)):
        raise ConfigurationError(f"DE bounds must be finite and ordered: {bounds.tolist()}")
    dim = len(lower)
    if dim == 0:
        raise ConfigurationError("DE needs at least one free coordinate")

    mask = np.ones(dim, dtype=bool)
    if cfg.init == "around_reference":
        if reference is None:
            raise ConfigurationError("around_reference initialisation needs a reference vector")
        reference = np.asarray(reference, dtype=float)
        if cfg.reference_names is not None and names is not None:
            mask = np.array([n in cfg.reference_names for n in names], dtype=bool)

    rng = np.random.default_rng(cfg.seed)
    n_pop = cfg.population_size
    pop = _initial_population(rng, lower, upper, cfg, reference, mask)
    fitness = np.asarray(obj(pop), dtype=float)
    _check_finite(fitness, pop, 0)
    history = [float(fitness.min())]
    evaluations = n_pop

    rows = np.arange(n_pop)
    generation = 0
    while generation < cfg.max_generations and history[-1] > cfg.target_eps:
        generation += 1
        picks = np.empty((n_pop, 3), dtype=int)
        for i in range(n_pop):
            r = rng.choice(n_pop - 1, 3, replace=False)
            picks[i] = r + (r >= i)
        mutant = pop[picks[:, 0]] + cfg.f_s * (pop[picks[:, 1]] - pop[picks[:, 2]])

        cross = rng.random((n_pop, dim)) < cfg.c_r
        cross[rows, rng.integers(dim, size=n_pop)] = True
        trial = reflect(np.where(cross, mutant, pop), lower, upper)

        trial_fitness = np.asarray(obj(trial), dtype=float)
        _check_finite(trial_fitness, trial, generation)
        evaluations += n_pop

        better = trial_fitness <= fitness
        pop[better] = trial[better]
        fitness[better] = trial_fitness[better]
        history.append(float(fitness.min()))

        if cfg.progress_every and generation % cfg.progress_every == 0:
            logger.info(f"[🧬] {label} generation {generation}/{cfg.max_generations}: "
                        f"best eps={history[-1]:.4e} penalties={getattr(obj, 'penalties', 0)}")

    best = int(np.argmin(fitness))
    if history[-1] <= cfg.target_eps:
        logger.info(f"[✓] {label} reached target eps {cfg.target_eps:g} at generation {generation}")
    return DeResult(pop[best].copy(), float(fitness[best]), tuple(history), evaluations,
                    int(getattr(obj, "penalties", 0)))


# =============================================================================
# Estimation stages
# =============================================================================

def _ordered(names: Iterable[str]) -> Tuple[str, ...]:
    names = set(names)
    unknown = names - set(NAMES)
    if unknown:
        raise ConfigurationError(f"Unknown parameters: {sorted(unknown)}")
    return tuple(n for n in NAMES if n in names)


def estimate_stage(base_params: ParameterSet, free_names: Iterable[str], measured: PccTimeSeries,
                   window: Window, de_cfg: Optional[DeConfig] = None, cfg: Optional[SimConfig] = None,
                   base: Optional[BaseSystem] = None, label: str = "stage") -> EstimationResult:
    """Fit exactly `free_names` on `window`; everything else stays at its value in base_params."""
    names = _ordered(free_names)
    de_cfg = de_cfg or DeConfig()

    if not names:
        obj = ParameterObjective(base_params, (), measured, window, cfg, base)
        eps = float(obj([[]])[0])
        logger.info(f"[✓] {label}: nothing free, eps={eps:.4e}")
        return EstimationResult(base_params, (), eps, (eps,), 1, label, (), obj.penalties)

    ps = base_params.with_free(names)
    bounds = ps.bounds(names)
    logger.info(f"[🚀] {label}: fitting {len(names)} parameters on {window.label} "
                f"(pop={de_cfg.population_size}, F_s={de_cfg.f_s}, C_r={de_cfg.c_r}, seed={de_cfg.seed})")
    obj = ParameterObjective(ps, names, measured, window, cfg, base)
    result = de_optimize(obj, bounds, de_cfg, reference=ps.vector(names), names=names, label=label)
    fitted = ps.with_values(dict(zip(names, result.best_x.tolist())))
    logger.info(f"[✓] {label}: best eps={result.best_eps:.4e} after {len(result.history) - 1} generations, "
                f"{result.penalties} penalised")
    return EstimationResult(fitted, tuple(result.best_x.tolist()), result.best_eps, result.history,
                            result.evaluations, label, names, result.penalties)


def check_window_order(stage1_window: Window, stage2_window: Window):
    if not stage1_window.precedes(stage2_window):
        raise WindowOrderError(
            f"Stage-1 window {stage1_window.label} must end before stage-2 window {stage2_window.label} starts")


def two_stage_estimate(base_params: ParameterSet, measured: PccTimeSeries, stage1_window: Window,
                       stage2_window: Window, stage1_cfg: Optional[DeConfig] = None,
                       stage2_cfg: Optional[DeConfig] = None, stage1_names: Iterable[str] = STAGE1,
                       stage2_names: Iterable[str] = STAGE2, cfg: Optional[SimConfig] = None,
                       base: Optional[BaseSystem] = None) -> EstimationResult:
    """
    Stage 1 on the pre-disturbance window (simulated without anchoring), then
    stage 2 on the disturbance window with the stage-1 values fixed. Stage-1
    names are never re-freed.
    """
    check_window_order(stage1_window, stage2_window)
    stage1_cfg = stage1_cfg or DeConfig.stage1()
    stage2_cfg = stage2_cfg or DeConfig.stage2(seed=stage1_cfg.seed + 1)
    names1 = _ordered(stage1_names)
    names2 = tuple(n for n in _ordered(stage2_names) if n not in names1)

    first = estimate_stage(base_params, names1, measured, stage1_window, stage1_cfg,
                           with_anchor(cfg, False), base, "stage1")
    second = estimate_stage(first.fitted, names2, measured, stage2_window, stage2_cfg, cfg, base, "stage2")

    return EstimationResult(
        fitted=second.fitted,
        best_x=first.best_x + second.best_x,
        best_eps=second.best_eps,
        history=second.history,
        evaluations=first.evaluations + second.evaluations,
        stage_label="two_stage",
        free_names=names1 + names2,
        penalties=first.penalties + second.penalties,
        stages=(first, second),
    )


# =============================================================================
# History trace
# =============================================================================

def save_history_csv(result: EstimationResult, path):
    stages = result.stages or (result,)
    rows = [(s.stage_label, g, eps) for s in stages for g, eps in enumerate(s.history)]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    pd.DataFrame(rows, columns=HISTORY_COLUMNS).to_csv(path, index=False, lineterminator="\n", float_format=lambda x: repr(float(x)))


def load_history_csv(path) -> List[Tuple[str, int, float]]:
    df = pd.read_csv(path, float_precision="round_trip", dtype={"stage": str})
    return [(r.stage, int(r.generation), float(r.best_eps)) for r in df.itertuples(index=False)]
