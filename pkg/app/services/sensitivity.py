"""
Trajectory sensitivity of the equivalent's outputs and parameter ranking.

Sensitivities are central differences of (P_hat, Q_hat) in per-unit with
respect to one parameter, restricted to a window. Each parameter's quadratic
index is the sum of squared sensitivities over the window's samples; the
ranking combines both outputs after normalising each by its maximum.

P_hat and Q_hat are the flow from the grid into the microgrid (consumption
positive), so dP_hat/dP_p = +1/s_base for the constant-power load term;
an injection convention would flip every sign but no index or ranking.

Ranking uses parameter-scaled sensitivities theta * dy/dtheta by default
(scale="relative"); scale="absolute" ranks the raw dy/dtheta.

All perturbed simulations run without anchoring: anchoring pins the initial
PCC flow and would hide every steady-state sensitivity.
"""

import os
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core import config
from core.exceptions import ConfigurationError, DegenerateWindowError, ParameterBoundError, SensitivityError
from core.logger import setup_logger
from services.parameters import RANKABLE, SPECS, ParameterSet
from services.playin_simulator import SimConfig, simulate_batch, with_anchor
from utils.timeseries_io import BaseSystem, PccTimeSeries, Window, extract_window, window_slice

logger = setup_logger(__name__)

RANKING_COLUMNS = ["param", "e_p", "e_q", "combined"]
MAX_REL_STEP = 0.1
SCALES = ("relative", "absolute")
# indices below this fraction of the largest one are round-off and score zero
NOISE_FLOOR = 1e-10


@dataclass(frozen=True)
class SensitivityTrajectory:
    param_name: str
    output_name: str
    values: np.ndarray   # pu per parameter unit


@dataclass(frozen=True)
class SensitivityEntry:
    param_name: str
    e_p: float
    e_q: float
    combined_score: float


@dataclass(frozen=True)
class SensitivityRanking:
    entries: Tuple[SensitivityEntry, ...]
    window: Window
    perturbation: float
    scale: str = "relative"

    def names(self) -> Tuple[str, ...]:
        return tuple(e.param_name for e in self.entries)

    def entry(self, name: str) -> SensitivityEntry:
        for e in self.entries:
            if e.param_name == name:
                return e
        raise KeyError(name)

    def restricted(self, names: Iterable[str]) -> "SensitivityRanking":
        """Entries for `names` only, re-normalised."""
        keep = set(names)
        e_p = {e.param_name: e.e_p for e in self.entries if e.param_name in keep}
        e_q = {e.param_name: e.e_q for e in self.entries if e.param_name in keep}
        return combine_indices(e_p, e_q, self.window, self.perturbation, self.scale)


@dataclass(frozen=True)
class TopK:
    k: int

    def __post_init__(self):
        if self.k < 0:
            raise ConfigurationError(f"top_k needs k >= 0, got {self.k}")


@dataclass(frozen=True)
class Threshold:
    fraction: float

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigurationError(f"threshold fraction must be in [0, 1], got {self.fraction}")


SelectionPolicy = Union[TopK, Threshold]


@dataclass(frozen=True)
class Selection:
    selected: Tuple[str, ...]   # rank order
    fixed: Tuple[str, ...]      # fix at typical value


def parse_policy(text: str) -> SelectionPolicy:
    """'top_k:11' or 'threshold:0.05'"""
    kind, _, value = str(text).partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "top_k":
            return TopK(int(value))
        if kind == "threshold":
            return Threshold(float(value))
    except ValueError:
        pass
    raise ConfigurationError(f"Selection policy must be 'top_k:K' or 'threshold:F', got '{text}'")


def _check_rel_step(rel_step: float):
    if not 0.0 < rel_step <= MAX_REL_STEP:
        raise ConfigurationError(f"rel_step must be in (0, {MAX_REL_STEP}], got {rel_step!r}")


def _perturbation_points(params: ParameterSet, name: str, rel_step: float,
                         abs_step: Optional[float]):
    """
    (plus set, minus set, divisor). Falls back to a forward difference when the
    lower point would leave the physical bounds.
    """
    value = params[name]
    if value != 0.0:
        step = rel_step * abs(value)
    elif abs_step is not None and abs_step > 0:
        step = abs_step
    else:
        raise ConfigurationError(f"{name} is zero; an absolute step is required")
    plus = params.with_values({name: value + step})
    try:
        SPECS[name].check(value - step)
        return plus, params.with_values({name: value - step}), 2.0 * step
    except ParameterBoundError:
        return plus, params, step


def _prepare(params: ParameterSet, series: PccTimeSeries, window: Window, cfg: Optional[SimConfig]):
    # perturbations may leave the search box of free parameters
    fixed = params.with_free(())
    through = extract_window(series, Window(series.t0, window.t_end)) if window.t_end < series.t_end else series
    return fixed, through, window_slice(through, window), with_anchor(cfg, False)


def _batch_sensitivities(params, series, window, names, rel_step, abs_step, cfg, base):
    base = base or BaseSystem.default()
    fixed, through, sl, cfg = _prepare(params, series, window, cfg)
    sets, divisors = [], []
    for name in names:
        plus, minus, div = _perturbation_points(fixed, name, rel_step, abs_step)
        sets.extend([plus, minus])
        divisors.append(div)
    result = simulate_batch(sets, through, cfg, base)

    trajectories = {}
    for i, name in enumerate(names):
        for sign, row in (("+", 2 * i), ("-", 2 * i + 1)):
            if result.failed[row]:
                raise SensitivityError(name, sign, result.errors[row])
        dp = (result.p_hat[2 * i, sl] - result.p_hat[2 * i + 1, sl]) / divisors[i] / base.s_base
        dq = (result.q_hat[2 * i, sl] - result.q_hat[2 * i + 1, sl]) / divisors[i] / base.s_base
        trajectories[name] = (SensitivityTrajectory(name, "P", dp), SensitivityTrajectory(name, "Q", dq))
    return trajectories


def trajectory_sensitivity(params: ParameterSet, series: PccTimeSeries, window: Window, param_name: str,
                           rel_step: Optional[float] = None, cfg: Optional[SimConfig] = None,
                           base: Optional[BaseSystem] = None,
                           abs_step: Optional[float] = None) -> Tuple[SensitivityTrajectory, SensitivityTrajectory]:
    """Central-difference sensitivities of (P_hat, Q_hat) in pu to one parameter."""
    rel_step = config.settings.rel_step if rel_step is None else rel_step
    _check_rel_step(rel_step)
    if param_name not in SPECS:
        raise ConfigurationError(f"Unknown parameter: {param_name}")
    return _batch_sensitivities(params, series, window, [param_name], rel_step, abs_step, cfg, base)[param_name]


def sensitivity_index(traj: SensitivityTrajectory) -> float:
    """E = sum_k (dy(k)/dtheta)^2 over the window."""
    values = np.asarray(traj.values, dtype=float)
    if values.size == 0:
        raise ConfigurationError("Sensitivity trajectory is empty")
    return float(np.sum(np.square(values)))


def scaled(traj: SensitivityTrajectory, factor: float) -> SensitivityTrajectory:
    """theta * dy/dtheta: pu per unit relative change of the parameter."""
    return SensitivityTrajectory(traj.param_name, traj.output_name, np.asarray(traj.values) * factor)


def combine_indices(e_p: Dict[str, float], e_q: Dict[str, float], window: Window,
                    perturbation: float, scale: str = "relative") -> SensitivityRanking:
    """
    Combined score e_p/max(e_p) + e_q/max(e_q); ties broken by name. Indices
    below NOISE_FLOOR times the largest index of either output count as zero,
    so an output that no candidate really moves adds nothing.
    """
    names = sorted(e_p)
    max_p = max((e_p[n] for n in names), default=0.0)
    max_q = max((e_q[n] for n in names), default=0.0)
    if max_p == 0.0 and max_q == 0.0:
        raise DegenerateWindowError(
            f"Every sensitivity index is zero on window {window.label}; nothing to rank")
    floor = NOISE_FLOOR * max(max_p, max_q)

    def share(value, top):
        return value / top if value > floor else 0.0

    entries = []
    for n in names:
        score = share(e_p[n], max_p) + share(e_q[n], max_q)
        entries.append(SensitivityEntry(n, e_p[n], e_q[n], score))
    entries.sort(key=lambda e: (-e.combined_score, e.param_name))
    return SensitivityRanking(tuple(entries), window, perturbation, scale)


def default_candidates(params: ParameterSet) -> Tuple[str, ...]:
    free = params.free_names()
    return free if free else RANKABLE


def rank_parameters(params: ParameterSet, series: PccTimeSeries, window: Window,
                    rel_step: Optional[float] = None, names: Optional[Sequence[str]] = None,
                    cfg: Optional[SimConfig] = None, base: Optional[BaseSystem] = None,
                    scale: str = "relative") -> SensitivityRanking:
    """
    Rank parameters by their quadratic sensitivity indices on `window`. All
    perturbed simulations run in one batch. Zero-valued parameters use an
    absolute step equal to rel_step and are never rescaled.
    """
    rel_step = config.settings.rel_step if rel_step is None else rel_step
    _check_rel_step(rel_step)
    if scale not in SCALES:
        raise ConfigurationError(f"scale must be one of {SCALES}, got '{scale}'")
    names = tuple(names) if names is not None else default_candidates(params)
    if not names:
        raise ConfigurationError("No parameters to rank")
    unknown = [n for n in names if n not in SPECS]
    if unknown:
        raise ConfigurationError(f"Unknown parameters: {unknown}")

    logger.info(f"[🔍] Ranking {len(names)} parameters on window {window.label} "
                f"(rel_step={rel_step:g}, scale={scale})")
    trajectories = _batch_sensitivities(params, series, window, names, rel_step, rel_step, cfg, base)
    e_p, e_q = {}, {}
    for n in names:
        factor = abs(params[n]) if scale == "relative" and params[n] != 0.0 else 1.0
        e_p[n] = sensitivity_index(scaled(trajectories[n][0], factor))
        e_q[n] = sensitivity_index(scaled(trajectories[n][1], factor))
    ranking = combine_indices(e_p, e_q, window, rel_step, scale)

    top = ", ".join(f"{e.param_name}={e.combined_score:.3f}" for e in ranking.entries[:5])
    logger.info(f"[✓] Ranking on {window.label}: {top}")
    return ranking


def select_parameters(ranking: SensitivityRanking, policy: SelectionPolicy) -> Selection:
    if not ranking.entries:
        raise ConfigurationError("Cannot select from an empty ranking")
    names = ranking.names()
    if isinstance(policy, TopK):
        k = policy.k
        if k > len(names):
            logger.warning(f"[⚠] top_k({k}) exceeds the {len(names)} ranked parameters; using {len(names)}")
            k = len(names)
        selected = names[:k]
    elif isinstance(policy, Threshold):
        best = ranking.entries[0].combined_score
        selected = tuple(e.param_name for e in ranking.entries if e.combined_score >= policy.fraction * best)
    else:
        raise ConfigurationError(f"Unknown selection policy: {policy!r}")
    fixed = tuple(n for n in names if n not in selected)
    return Selection(tuple(selected), fixed)


# =============================================================================
# Ranking CSV
# =============================================================================

def save_ranking_csv(ranking: SensitivityRanking, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df = pd.DataFrame([(e.param_name, e.e_p, e.e_q, e.combined_score) for e in ranking.entries],
                      columns=RANKING_COLUMNS)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# window: {ranking.window.label}, rel_step: {ranking.perturbation!r}, scale: {ranking.scale}\n")
        df.to_csv(f, index=False, lineterminator="\n", float_format=lambda x: repr(float(x)))
    logger.debug(f"[📁] Saved ranking to {path}")


def load_ranking_csv(path) -> SensitivityRanking:
    window, perturbation, scale = None, 0.0, "relative"
    with open(path, encoding="utf-8") as f:
        first = f.readline().strip()
    if first.startswith("#"):
        for item in first.lstrip("#").split(","):
            key, _, value = item.partition(":")
            key, value = key.strip(), value.strip()
            if key == "window":
                window = Window.parse(value)
            elif key == "rel_step":
                perturbation = float(value)
            elif key == "scale":
                scale = value
    df = pd.read_csv(path, comment="#", float_precision="round_trip")
    missing = [c for c in RANKING_COLUMNS if c not in df.columns]
    if missing:
        raise ConfigurationError(f"{path}: ranking CSV lacks columns {missing}")
    entries = tuple(SensitivityEntry(str(r.param), float(r.e_p), float(r.e_q), float(r.combined))
                    for r in df.itertuples(index=False))
    return SensitivityRanking(entries, window, perturbation, scale)
