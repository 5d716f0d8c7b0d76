"""
End-to-end identification run driven by a scenario file.

    params = model.params
    measured = fault_10s.csv
    stage1.window = 9:9.99
    stage2.window = 10:14
    stage2.select = top_k:6
    validation.event = fault_11s.csv@11:14
    out_dir = out

Flow: rank on the pre-disturbance window, select the stage-1 set, rank on the
disturbance window, select the stage-2 set, run the two-stage estimation,
then validate on the fitting span and every held-out event. Artifacts already
written are kept when a later stage fails.
"""

import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from core import config
from core.exceptions import ConfigurationError, EquivalentModelError, ParameterFileError, PipelineStageError
from core.logger import setup_logger
from services.de_estimator import (DeConfig, EstimationResult, check_window_order, save_history_csv,
                                   two_stage_estimate)
from services.parameters import IDENTIFIED, NAMES, STAGE1, STAGE2
from services.playin_simulator import SimConfig
from services.sensitivity import (SelectionPolicy, SensitivityRanking, default_candidates, parse_policy,
                                  rank_parameters, save_ranking_csv, select_parameters)
from services.validation_report import (ValidationEvent, ValidationReport, emit_comparison, save_report_csv,
                                        validate)
from utils import naming_conventions as names
from utils.helpers import format_duration, format_eps, format_names
from utils.parameter_file import (Declaration, load_parameter_set, parse_bool, parse_float, read_declarations,
                                  save_parameter_set, split_list)
from utils.timeseries_io import (BaseSystem, PccTimeSeries, PreprocessConfig, Window, load_pcc_csv,
                                 preprocess)

logger = setup_logger(__name__)

EXIT_VALIDATED = 0
EXIT_ERROR = 1
EXIT_RETUNE = 2

_STAGE_KEYS = ("window", "population", "f_s", "c_r", "generations", "free", "select", "init_fraction")
_SCALAR_KEYS = ("params", "measured", "rel_step", "target_eps", "validation.threshold", "seed", "out_dir",
                "dt_int", "method", "anchor", "preprocess.cutoff_hz", "preprocess.resample_dt")
_REPEATABLE = ("validation.event",)
KNOWN_KEYS = (_SCALAR_KEYS + _REPEATABLE
              + tuple(f"stage{n}.{k}" for n in (1, 2) for k in _STAGE_KEYS))


@dataclass(frozen=True)
class StagePlan:
    """What a stage fits: an explicit list, a ranking policy, or the stage's default set."""
    window: Window
    de: DeConfig
    free: Optional[Tuple[str, ...]] = None
    policy: Optional[SelectionPolicy] = None


@dataclass(frozen=True)
class ScenarioConfig:
    params_path: str
    measured_path: str
    stage1: StagePlan
    stage2: StagePlan
    events: Tuple[Tuple[str, Window], ...] = ()
    threshold: float = field(default_factory=lambda: config.settings.threshold)
    rel_step: float = field(default_factory=lambda: config.settings.rel_step)
    seed: int = field(default_factory=lambda: config.settings.seed)
    out_dir: str = "out"
    sim: SimConfig = field(default_factory=SimConfig)
    prep: PreprocessConfig = field(default_factory=PreprocessConfig)

    def __post_init__(self):
        check_window_order(self.stage1.window, self.stage2.window)
        if self.threshold < 0:
            raise ConfigurationError(f"validation.threshold must be >= 0, got {self.threshold!r}")

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        """Parse a scenario file; relative paths resolve against its directory."""
        path = os.path.abspath(path)
        base_dir = os.path.dirname(path)
        scalars: Dict[str, Declaration] = {}
        events: List[Declaration] = []
        for decl in read_declarations(path):
            if decl.key not in KNOWN_KEYS:
                raise ParameterFileError(path, f"unknown key '{decl.key}'", line=decl.line, key=decl.key)
            if decl.key in _REPEATABLE:
                events.append(decl)
                continue
            if decl.key in scalars:
                raise ParameterFileError(path, f"duplicate key '{decl.key}'", line=decl.line, key=decl.key)
            scalars[decl.key] = decl

        def text(key, default=None):
            return scalars[key].value if key in scalars else default

        def number(key, default=None):
            return parse_float(path, scalars[key]) if key in scalars else default

        def integer(key, default=None):
            value = number(key)
            if value is None:
                return default
            if value != int(value):
                raise ParameterFileError(path, f"'{key}' must be an integer", line=scalars[key].line, key=key)
            return int(value)

        def resolve(p):
            return p if os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))

        for key in ("params", "measured", "stage1.window", "stage2.window"):
            if key not in scalars:
                raise ConfigurationError(f"{path}: scenario lacks required key '{key}'")

        seed = integer("seed", config.settings.seed)
        target_eps = number("target_eps", config.settings.target_eps)

        def stage(n: int, factory) -> StagePlan:
            key = f"stage{n}."
            overrides = {"target_eps": target_eps}
            for name, attr, conv in (("population", "population_size", integer), ("f_s", "f_s", number),
                                     ("c_r", "c_r", number), ("generations", "max_generations", integer),
                                     ("init_fraction", "init_fraction", number)):
                value = conv(key + name)
                if value is not None:
                    overrides[attr] = value
            free = text(key + "free")
            select = text(key + "select")
            if free is not None and select is not None:
                raise ConfigurationError(f"{path}: stage{n} sets both 'free' and 'select'")
            free_names = split_list(free) if free is not None else None
            if free_names:
                unknown = [p for p in free_names if p not in NAMES]
                if unknown:
                    raise ConfigurationError(f"{path}: stage{n}.free names unknown parameters {unknown}")
            return StagePlan(
                window=Window.parse(text(key + "window")),
                de=factory(seed=seed + n - 1, **overrides),
                free=free_names,
                policy=parse_policy(select) if select is not None else None,
            )

        method = text("method", config.settings.method).lower()
        sim = SimConfig(
            dt_int=number("dt_int", config.settings.dt_int),
            method=method,
            anchor=parse_bool(path, scalars["anchor"]) if "anchor" in scalars else config.settings.anchor,
        )
        prep = PreprocessConfig(number("preprocess.cutoff_hz"), number("preprocess.resample_dt"))

        scenario = cls(
            params_path=resolve(text("params")),
            measured_path=resolve(text("measured")),
            stage1=stage(1, DeConfig.stage1),
            stage2=stage(2, DeConfig.stage2),
            events=tuple(names.parse_event(d.value, base_dir) for d in events),
            threshold=number("validation.threshold", config.settings.threshold),
            rel_step=number("rel_step", config.settings.rel_step),
            seed=seed,
            out_dir=resolve(text("out_dir", "out")),
            sim=sim,
            prep=prep,
        )
        scenario.check_files()
        logger.info(f"[📁] Loaded scenario {path}")
        return scenario

    def check_files(self):
        paths = [self.params_path, self.measured_path] + [p for p, _ in self.events]
        missing = [p for p in paths if not os.path.isfile(p)]
        if missing:
            raise ConfigurationError(f"Scenario references missing files: {missing}")


@dataclass(frozen=True)
class PipelineResult:
    exit_code: int
    report: ValidationReport
    estimation: EstimationResult
    rankings: Tuple[SensitivityRanking, SensitivityRanking]
    artifacts: Dict[str, str]


class _Stage:
    """Context manager that tags any domain failure with the stage name."""

    def __init__(self, name: str):
        self.name = name
        self.started = 0.0

    def __enter__(self):
        self.started = time.monotonic()
        logger.info(f"[🚀] {self.name}")
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            logger.info(f"[✓] {self.name} done in {format_duration(time.monotonic() - self.started)}")
            return False
        if isinstance(exc, PipelineStageError):
            return False
        if isinstance(exc, (EquivalentModelError, OSError)):
            logger.error(f"[❌] {self.name} failed: {exc}")
            raise PipelineStageError(self.name, exc) from exc
        return False


def _choose(plan: StagePlan, ranking: SensitivityRanking, pool: Tuple[str, ...], default: Tuple[str, ...],
            label: str) -> Tuple[str, ...]:
    if plan.free is not None:
        chosen = tuple(n for n in plan.free if n in pool)
        dropped = [n for n in plan.free if n not in pool]
        if dropped:
            logger.warning(f"[⚠] {label}: {dropped} already fitted earlier; not freed again")
        return chosen
    if plan.policy is None:
        return tuple(n for n in default if n in pool)
    candidates = [n for n in ranking.names() if n in pool]
    if not candidates:
        raise ConfigurationError(f"{label}: no ranked parameter is eligible for selection")
    return select_parameters(ranking.restricted(candidates), plan.policy).selected


def _load_inputs(scenario: ScenarioConfig, base: BaseSystem):
    params = load_parameter_set(scenario.params_path)
    measured = preprocess(load_pcc_csv(scenario.measured_path, base), scenario.prep)
    events = []
    for path, window in scenario.events:
        series: PccTimeSeries = preprocess(load_pcc_csv(path, base), scenario.prep)
        events.append(ValidationEvent(names.event_label_from_path(path), series, window))
    return params, measured, events


def run_pipeline(scenario: ScenarioConfig, base: Optional[BaseSystem] = None) -> PipelineResult:
    """
    rank -> select -> two-stage estimation -> validation. The exit code is
    EXIT_VALIDATED or EXIT_RETUNE; stage failures raise PipelineStageError.
    """
    base = base or BaseSystem.default()
    out = scenario.out_dir
    os.makedirs(out, exist_ok=True)
    artifacts: Dict[str, str] = {}
    w1, w2 = scenario.stage1.window, scenario.stage2.window

    with _Stage("load"):
        params, measured, events = _load_inputs(scenario, base)
    candidates = default_candidates(params)
    params = params.with_free(())

    with _Stage("rank_pre"):
        ranking_pre = rank_parameters(params, measured, w1, scenario.rel_step, candidates, scenario.sim, base)
        artifacts["ranking_pre"] = names.get_artifact_path(out, names.RANKING_PRE)
        save_ranking_csv(ranking_pre, artifacts["ranking_pre"])
        stage1_names = _choose(scenario.stage1, ranking_pre, STAGE1, STAGE1, "stage1")
        logger.info(f"[🧬] Stage-1 set: {format_names(stage1_names)}")

    with _Stage("rank_post"):
        ranking = rank_parameters(params, measured, w2, scenario.rel_step, candidates, scenario.sim, base)
        artifacts["ranking"] = names.get_artifact_path(out, names.RANKING)
        save_ranking_csv(ranking, artifacts["ranking"])
        pool = tuple(n for n in IDENTIFIED if n not in stage1_names)
        stage2_names = _choose(scenario.stage2, ranking, pool, STAGE2, "stage2")
        logger.info(f"[🧬] Stage-2 set: {format_names(stage2_names)}")

    with _Stage("estimate"):
        estimation = two_stage_estimate(params, measured, w1, w2, scenario.stage1.de, scenario.stage2.de,
                                        stage1_names, stage2_names, scenario.sim, base)
        artifacts["fitted"] = names.get_artifact_path(out, names.FITTED_PARAMS)
        save_parameter_set(estimation.fitted, artifacts["fitted"])
        artifacts["history"] = names.get_artifact_path(out, names.HISTORY)
        save_history_csv(estimation, artifacts["history"])
        logger.info(f"[✓] Fitted eps={format_eps(estimation.best_eps)} "
                    f"({estimation.evaluations} evaluations)")

    with _Stage("validate"):
        fit_event = ValidationEvent(names.FIT_EVENT, measured, Window(w1.t_start, w2.t_end))
        all_events = [fit_event] + events
        report = validate(estimation.fitted, all_events, scenario.threshold, scenario.sim, base)
        artifacts["report"] = names.get_artifact_path(out, names.REPORT)
        save_report_csv(report, artifacts["report"])
        for ev, record in zip(all_events, report.records):
            if record.failed:
                continue
            key = f"comparison_{ev.label}"
            artifacts[key] = names.get_artifact_path(out, names.get_comparison_filename(ev.label))
            emit_comparison(estimation.fitted, ev.series, artifacts[key], scenario.sim, base)

    code = EXIT_VALIDATED if report.validated else EXIT_RETUNE
    logger.info(f"[📊] Verdict: {report.verdict} (exit {code})")
    return PipelineResult(code, report, estimation, (ranking_pre, ranking), artifacts)
