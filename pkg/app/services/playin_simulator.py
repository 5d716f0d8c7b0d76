"""
Play-in simulation of the microgrid equivalent.

The recorded PCC voltage magnitude and frequency drive the assembled model
with fixed-step integration; the model's (P_hat, Q_hat) is recorded on the
input sample grid. P_hat, Q_hat follow the measurement convention: net flow
from the grid into the microgrid.

simulate_batch integrates many parameter vectors at once and marks members
that fail; simulate_playin is the single-vector case and raises instead. The
stepping itself, including exciter and converter limit switching, lives in
services.playin_kernel.
"""

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from core import config
from core.exceptions import (ConfigurationError, EquivalentModelError, NoEquilibriumError,
                             SimulationDivergedError)
from core.logger import setup_logger
from services import playin_kernel as kernel
from services.component_models import EquivalentModel, EquivalentState, init_steady_state, limiter_modes
from services.parameters import ParameterSet
from utils.timeseries_io import BaseSystem, PccTimeSeries, Window

logger = setup_logger(__name__)

METHODS = ("rk4", "trapezoidal")
SUBSTEP_TOL = 1e-9
_METHOD_CODES = {"rk4": kernel.RK4, "trapezoidal": kernel.TRAPEZOIDAL}


@dataclass(frozen=True)
class SimConfig:
    dt_int: float = field(default_factory=lambda: config.settings.dt_int)
    method: str = field(default_factory=lambda: config.settings.method)
    interp: str = "linear"
    anchor: bool = field(default_factory=lambda: config.settings.anchor)
    divergence_limit: float = field(default_factory=lambda: config.settings.divergence_limit)

    def __post_init__(self):
        if not self.dt_int > 0:
            raise ConfigurationError(f"dt_int must be > 0, got {self.dt_int!r}")
        if self.method not in METHODS:
            raise ConfigurationError(f"Unknown integration method '{self.method}', expected one of {METHODS}")
        if self.interp != "linear":
            raise ConfigurationError(f"Unsupported interpolation '{self.interp}'")

    def substeps(self, dt: float) -> int:
        n = int(round(dt / self.dt_int))
        if n < 1 or abs(n * self.dt_int - dt) > SUBSTEP_TOL:
            raise ConfigurationError(
                f"dt_int={self.dt_int:g} does not divide the sample interval {dt:g}")
        return n


@dataclass(frozen=True)
class OutputTrajectory:
    t: np.ndarray
    p_hat: np.ndarray   # MW
    q_hat: np.ndarray   # MVar

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class BatchTrajectory:
    t: np.ndarray
    p_hat: np.ndarray               # (B, N) MW, NaN after a failure
    q_hat: np.ndarray               # (B, N) MVar
    failed: np.ndarray              # (B,) bool
    errors: List[Optional[EquivalentModelError]]

    def member(self, i: int) -> OutputTrajectory:
        return OutputTrajectory(self.t, self.p_hat[i], self.q_hat[i])


@dataclass(frozen=True)
class FaultTemplate:
    """
    Voltage sag at the PCC: flat at v_pre, v_sag from t_fault until clearing,
    then first-order recovery with tau_recovery. The frequency deviates by
    f_excursion during the fault and decays with tau_f after clearing.
    """
    t_fault: float
    duration: float
    v_sag: float
    v_pre: float = 1.0
    tau_recovery: float = 0.2
    f_excursion: float = 0.0
    tau_f: float = 0.5

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigurationError(f"Fault duration must be > 0, got {self.duration!r}")
        if self.v_sag < 0 or not self.v_pre > 0:
            raise ConfigurationError("Fault voltages must satisfy v_sag >= 0 and v_pre > 0")
        if not (self.tau_recovery > 0 and self.tau_f > 0):
            raise ConfigurationError("Recovery time constants must be > 0")


# =============================================================================
# Inputs
# =============================================================================

def reconstruct_angle(freq, f_nom: float, dt: float) -> np.ndarray:
    """PCC phasor angle from measured frequency, trapezoidal integration, theta[0] = 0."""
    freq = np.asarray(freq, dtype=float)
    f_mid = 0.5 * (freq[1:] + freq[:-1])
    theta = np.empty_like(freq)
    theta[0] = 0.0
    theta[1:] = np.cumsum(2.0 * np.pi * (f_mid - f_nom) * dt)
    return theta


# =============================================================================
# Integration
# =============================================================================

def _integrate(model: EquivalentModel, x0: np.ndarray, series: PccTimeSeries, cfg: SimConfig, f_nom: float):
    n_sub = cfg.substeps(series.dt)
    b, n = x0.shape[0], len(series)
    p_hat = np.full((b, n), np.nan)
    q_hat = np.full((b, n), np.nan)
    fail_time = np.full(b, np.nan)
    v0 = float(series.v_mag[0])
    kernel.integrate(kernel.pack_model(model), np.ascontiguousarray(x0, dtype=float),
                     limiter_modes(model, x0, v0),
                     np.ascontiguousarray(series.v_mag, dtype=float), np.ascontiguousarray(series.freq, dtype=float),
                     reconstruct_angle(series.freq, f_nom, series.dt), float(series.t0), float(series.dt),
                     n_sub, float(f_nom), _METHOD_CODES[cfg.method], float(cfg.divergence_limit),
                     p_hat, q_hat, fail_time)
    return p_hat, q_hat, np.isfinite(fail_time), fail_time


# =============================================================================
# Public API
# =============================================================================

def simulate_batch(param_sets: Sequence[ParameterSet], series: PccTimeSeries,
                   cfg: Optional[SimConfig] = None, base: Optional[BaseSystem] = None) -> BatchTrajectory:
    """
    Simulate every parameter set against the same input. Members that cannot
    be initialised or that diverge are flagged in `failed` with their error.
    """
    cfg = cfg or SimConfig()
    base = base or BaseSystem.default()
    cfg.substeps(series.dt)
    b, n = len(param_sets), len(series)
    v0, f0 = float(series.v_mag[0]), float(series.freq[0])
    target = (float(series.p[0]), float(series.q[0])) if cfg.anchor else None

    errors: List[Optional[EquivalentModelError]] = [None] * b
    models, states, members = [], [], []
    for i, ps in enumerate(param_sets):
        model = EquivalentModel.from_parameters(ps, base.f_nom)
        if not model.valid()[0]:
            errors[i] = NoEquilibriumError("equivalent", "parameter combination violates model invariants")
            continue
        try:
            state, model = init_steady_state(model, v0, f0, target)
        except NoEquilibriumError as e:
            errors[i] = e
            continue
        models.append(model)
        states.append(state.as_array())
        members.append(i)

    p_hat = np.full((b, n), np.nan)
    q_hat = np.full((b, n), np.nan)
    if members:
        model = EquivalentModel.concat(models)
        p_m, q_m, failed_m, t_fail = _integrate(model, np.vstack(states), series, cfg, base.f_nom)
        idx = np.asarray(members)
        p_hat[idx], q_hat[idx] = p_m, q_m
        for local, i in enumerate(members):
            if failed_m[local]:
                errors[i] = SimulationDivergedError(float(t_fail[local]))

    failed = np.array([e is not None for e in errors], dtype=bool)
    if np.any(failed):
        logger.debug(f"[⚠] {int(failed.sum())}/{b} simulations failed")
    return BatchTrajectory(series.times, p_hat, q_hat, failed, errors)


def simulate_playin(params: ParameterSet, series: PccTimeSeries,
                    cfg: Optional[SimConfig] = None, base: Optional[BaseSystem] = None) -> OutputTrajectory:
    result = simulate_batch([params], series, cfg, base)
    if result.failed[0]:
        raise result.errors[0]
    return result.member(0)


def initial_state(params: ParameterSet, series: PccTimeSeries, cfg: Optional[SimConfig] = None,
                  base: Optional[BaseSystem] = None):
    """Equilibrium state and initialised model for the first input sample."""
    cfg = cfg or SimConfig()
    base = base or BaseSystem.default()
    target = (float(series.p[0]), float(series.q[0])) if cfg.anchor else None
    model = EquivalentModel.from_parameters(params, base.f_nom)
    state, model = init_steady_state(model, float(series.v_mag[0]), float(series.freq[0]), target)
    return EquivalentState(state.sg, state.im, state.vsc, 0.0), model


def fault_profile(template: FaultTemplate, span: Window, dt: float, f_nom: float):
    n = int(math.floor((span.t_end - span.t_start) / dt + 1e-6)) + 1
    if n < 2:
        raise ConfigurationError(f"Span {span.label} holds fewer than 2 samples at dt={dt:g}")
    k = np.arange(n)
    k_f = int(round((template.t_fault - span.t_start) / dt))
    k_c = int(round((template.t_fault + template.duration - span.t_start) / dt))

    v = np.full(n, template.v_pre, dtype=float)
    f = np.full(n, f_nom, dtype=float)
    during = (k >= k_f) & (k <= k_c)
    after = k > k_c
    v[during] = template.v_sag
    v[after] = template.v_pre - (template.v_pre - template.v_sag) * np.exp(-(k[after] - k_c) * dt / template.tau_recovery)
    if template.f_excursion != 0.0:
        f[during] = f_nom + template.f_excursion
        f[after] = f_nom + template.f_excursion * np.exp(-(k[after] - k_c) * dt / template.tau_f)
    return v, f


def synth_scenario(params: ParameterSet, template: FaultTemplate, base: Optional[BaseSystem] = None,
                   span: Window = Window(9.0, 14.0), dt: float = 0.01,
                   cfg: Optional[SimConfig] = None) -> PccTimeSeries:
    """
    Twin-model "measurements": the fault profile drives the equivalent, whose
    (P_hat, Q_hat) become the recorded P, Q. Simulated without anchoring.
    """
    base = base or BaseSystem.default()
    cfg = with_anchor(cfg, False)
    v, f = fault_profile(template, span, dt, base.f_nom)
    zeros = np.zeros_like(v)
    series = PccTimeSeries(span.t_start, dt, v, f, zeros, zeros)
    out = simulate_playin(params, series, cfg, base)
    logger.info(f"[✓] Synthesised {len(series)} samples: sag {template.v_sag:g} pu at "
                f"t={template.t_fault:g} s for {template.duration * 1000:g} ms")
    return series.with_power(out.p_hat, out.q_hat)


def with_anchor(cfg: Optional[SimConfig], anchor: bool) -> SimConfig:
    return replace(cfg or SimConfig(), anchor=anchor)
