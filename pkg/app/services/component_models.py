"""
Component models of the microgrid equivalent: VSC with DC-link PI, fourth-order
synchronous generator with AVR and governor, third-order induction motor and
ZIP static load, all connected to the PCC bus.

Conventions:
- ComponentOutput carries injections into the PCC node in MW / MVar.
- Machine equations are in per-unit on each component's own rating; a
  rating of 0 removes the component.
- Every parameter and state field may be a scalar or a numpy array over a
  batch axis; the simulator integrates many parameter vectors at once.
- The PCC phasor angle is measured in a frame rotating at f_nom.
"""

from dataclasses import dataclass, fields, replace
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from core.exceptions import NoEquilibriumError
from core.logger import setup_logger
from services.parameters import ParameterSet

logger = setup_logger(__name__)

EQUILIBRIUM_TOL = 1e-12


class ComponentOutput(NamedTuple):
    p: np.ndarray   # MW injected
    q: np.ndarray   # MVar injected


class SgState(NamedTuple):
    delta: np.ndarray
    omega: np.ndarray
    e_qp: np.ndarray
    e_dp: np.ndarray
    efd: np.ndarray
    p_m: np.ndarray


class ImState(NamedTuple):
    e_rp: np.ndarray
    e_ip: np.ndarray
    slip: np.ndarray


class VscState(NamedTuple):
    v_dc: np.ndarray
    xi: np.ndarray


def _stack(param_sets: Sequence[ParameterSet], name: str) -> np.ndarray:
    return np.array([ps[name] for ps in param_sets], dtype=float)


class _BatchParams:
    """Builds a params dataclass from one or many ParameterSets."""

    _names: Tuple[Tuple[str, str], ...] = ()

    @classmethod
    def from_parameters(cls, param_sets):
        if isinstance(param_sets, ParameterSet):
            param_sets = [param_sets]
        return cls(**{attr: _stack(param_sets, name) for attr, name in cls._names})

    def take(self, index):
        """Sub-batch selected by an index array or mask."""
        return replace(self, **{f.name: np.asarray(getattr(self, f.name))[index]
                                for f in fields(self) if getattr(self, f.name) is not None})


# =============================================================================
# ZIP static load
# =============================================================================

@dataclass(frozen=True)
class ZipLoadParams(_BatchParams):
    p_z: np.ndarray
    p_i: np.ndarray
    p_p: np.ndarray
    q_z: np.ndarray
    q_i: np.ndarray
    q_p: np.ndarray
    v0: np.ndarray

    _names = (("p_z", "P_z"), ("p_i", "P_i"), ("p_p", "P_p"),
              ("q_z", "Q_z"), ("q_i", "Q_i"), ("q_p", "Q_p"), ("v0", "V0"))


def zip_power(params: ZipLoadParams, v) -> ComponentOutput:
    """Consumed P = P_z(v/v0)^2 + P_i(v/v0) + P_p, returned as an injection."""
    r = np.asarray(v, dtype=float) / params.v0
    p = params.p_z * r * r + params.p_i * r + params.p_p
    q = params.q_z * r * r + params.q_i * r + params.q_p
    return ComponentOutput(-p, -q)


# =============================================================================
# Voltage source converter (grid following, DC-link voltage control)
# =============================================================================

@dataclass(frozen=True)
class VscParams(_BatchParams):
    s_vsc: np.ndarray
    k_pvdc: np.ndarray
    k_ivdc: np.ndarray
    v_dc_nom: np.ndarray
    c_dc: np.ndarray
    p_source: np.ndarray
    i_max: np.ndarray

    _names = (("s_vsc", "S_vsc"), ("k_pvdc", "K_pvdc"), ("k_ivdc", "K_ivdc"),
              ("v_dc_nom", "V_dc_nom"), ("c_dc", "C_dc"), ("p_source", "P_source"),
              ("i_max", "I_max"))


def dc_link_current_reference(k_pvdc, k_ivdc, v_dc_nom, v_dc, xi):
    """i_dref = K_pvdc (V_dc,nom - V_dc,meas) + K_ivdc xi"""
    return k_pvdc * (v_dc_nom - v_dc) + k_ivdc * xi


def current_limit_mode(params: VscParams, state: VscState) -> np.ndarray:
    """+1 / -1 while i_dref lies beyond +I_max / -I_max, else 0."""
    i_dref = dc_link_current_reference(params.k_pvdc, params.k_ivdc, params.v_dc_nom, state.v_dc, state.xi)
    return np.where(i_dref > params.i_max, 1, np.where(i_dref < -params.i_max, -1, 0))


def vsc_derivatives(params: VscParams, state: VscState, v, mode=None) -> Tuple[VscState, ComponentOutput]:
    """
    Outer DC-link loop only; the inner current loop is algebraic and i_q = 0.
    i_d is drawn from the PCC into the DC link, so the AC injection is -v*i_d.

    While the current is clamped at +-I_max the integrator is frozen. `mode`
    (+1, -1, 0 per member) selects the clamp; by default it follows i_dref.
    """
    v = np.asarray(v, dtype=float)
    if mode is None:
        mode = current_limit_mode(params, state)
    mode = np.asarray(mode)
    error = params.v_dc_nom - state.v_dc
    i_dref = dc_link_current_reference(params.k_pvdc, params.k_ivdc, params.v_dc_nom, state.v_dc, state.xi)
    i_d = np.where(mode > 0, params.i_max, np.where(mode < 0, -params.i_max, i_dref))
    d_xi = np.where(mode == 0, error, 0.0)

    # i_d is positive from the PCC into the DC link, so the power the
    # converter injects into the PCC is p = -v*i_d
    p_ac = -v * i_d
    d_vdc = (params.p_source - p_ac) / (params.c_dc * state.v_dc)

    active = params.s_vsc > 0
    deriv = VscState(np.where(active, d_vdc, 0.0), np.where(active, d_xi, 0.0))
    return deriv, ComponentOutput(p_ac * params.s_vsc, np.zeros_like(p_ac * params.s_vsc))


# =============================================================================
# Synchronous generator: two-axis model, ST1A-like AVR, droop governor
# =============================================================================

@dataclass(frozen=True)
class SgParams(_BatchParams):
    x_d: np.ndarray
    x_dp: np.ndarray
    x_q: np.ndarray
    x_qp: np.ndarray
    t_do_p: np.ndarray
    t_q_p: np.ndarray
    h: np.ndarray
    s_rated: np.ndarray
    k_a: np.ndarray
    t_a: np.ndarray
    r_droop: np.ndarray
    t_gov: np.ndarray
    d: np.ndarray
    efd_max: np.ndarray
    efd_min: np.ndarray
    v_ref: np.ndarray       # AVR setpoint, pu
    p_dispatch: np.ndarray  # MW at nominal frequency
    p_ref: Optional[np.ndarray] = None   # governor setpoint, pu; set by init_steady_state

    _names = (("x_d", "x_d"), ("x_dp", "x_dp"), ("x_q", "x_q"), ("x_qp", "x_qp"),
              ("t_do_p", "T_do_p"), ("t_q_p", "T_q_p"), ("h", "H"), ("s_rated", "S_sg"),
              ("k_a", "K_a"), ("t_a", "T_a"), ("r_droop", "r_droop"), ("t_gov", "T_gov"),
              ("d", "D"), ("efd_max", "efd_max"), ("efd_min", "efd_min"),
              ("v_ref", "V_ref_sg"), ("p_dispatch", "P_sg"))

    def valid(self) -> np.ndarray:
        return ((self.x_d > self.x_dp) & (self.x_dp > 0) & (self.x_q >= self.x_qp) & (self.x_qp > 0)
                & (self.t_do_p > 0) & (self.t_q_p > 0) & (self.h > 0) & (self.k_a > 0)
                & (self.s_rated >= 0) & (self.efd_max >= self.efd_min))

    def dispatch_pu(self) -> np.ndarray:
        rated = np.asarray(self.s_rated, dtype=float)
        return np.divide(self.p_dispatch, rated, out=np.zeros(np.broadcast(self.p_dispatch, rated).shape),
                         where=rated > 0)


def avr_forcing(k_a, v_ref, v_mag):
    """AVR input to the field-voltage lag: K_a (V_ref - |V|)."""
    return k_a * (v_ref - v_mag)


def governor_target(p_ref, omega, r_droop):
    """Steady mechanical power the governor lag settles to."""
    return p_ref - omega / r_droop


def sg_stator(params: SgParams, delta, e_qp, e_dp, v_phasor):
    """
    Stator algebra without resistance. Returns (i_d, i_q, p, q) in pu on the
    machine rating, generator convention.
    """
    v_mag = np.abs(v_phasor)
    phi = delta - np.angle(v_phasor)
    v_d = v_mag * np.sin(phi)
    v_q = v_mag * np.cos(phi)
    i_d = (e_qp - v_q) / params.x_dp
    i_q = (v_d - e_dp) / params.x_qp
    p = v_d * i_d + v_q * i_q
    q = v_q * i_d - v_d * i_q
    return i_d, i_q, p, q


def field_limit_mode(params: SgParams, state: SgState, v_mag) -> np.ndarray:
    """+1 / -1 while the field voltage sits on efd_max / efd_min and the AVR pushes further out, else 0."""
    forcing = avr_forcing(params.k_a, params.v_ref, v_mag)
    high = (state.efd >= params.efd_max) & (forcing >= params.efd_max)
    low = (state.efd <= params.efd_min) & (forcing <= params.efd_min)
    return np.where(high, 1, np.where(low, -1, 0))


def sg_derivatives(params: SgParams, state: SgState, v_phasor, f_grid, f_nom: float,
                   mode=None) -> Tuple[SgState, ComponentOutput]:
    """
    On a field-voltage limit (`mode` +1 / -1) the exciter output is pinned
    at efd_max / efd_min and the AVR lag is held; by default the mode
    follows the state.
    """
    omega_b = 2.0 * np.pi * f_nom
    v_phasor = np.asarray(v_phasor, dtype=complex)
    v_mag = np.abs(v_phasor)
    omega_grid = (np.asarray(f_grid, dtype=float) - f_nom) / f_nom
    if mode is None:
        mode = field_limit_mode(params, state, v_mag)
    mode = np.asarray(mode)

    i_d, i_q, p_e, q_e = sg_stator(params, state.delta, state.e_qp, state.e_dp, v_phasor)
    efd = np.where(mode > 0, params.efd_max, np.where(mode < 0, params.efd_min, state.efd))

    d_delta = omega_b * state.omega
    d_omega = (state.p_m - p_e - params.d * (state.omega - omega_grid)) / (2.0 * params.h)
    d_eqp = (efd - state.e_qp - (params.x_d - params.x_dp) * i_d) / params.t_do_p
    d_edp = (-state.e_dp + (params.x_q - params.x_qp) * i_q) / params.t_q_p

    d_efd = np.where(mode == 0, (avr_forcing(params.k_a, params.v_ref, v_mag) - state.efd) / params.t_a, 0.0)

    p_ref = params.p_ref if params.p_ref is not None else params.dispatch_pu()
    d_pm = (governor_target(p_ref, state.omega, params.r_droop) - state.p_m) / params.t_gov

    active = params.s_rated > 0
    deriv = SgState(*(np.where(active, d, 0.0) for d in (d_delta, d_omega, d_eqp, d_edp, d_efd, d_pm)))
    return deriv, ComponentOutput(p_e * params.s_rated, q_e * params.s_rated)


def sg_electrical_power(params: SgParams, efd: float, v_mag: float, phi: float) -> float:
    """Steady-state salient-pole power at load angle phi (machine index 0 / scalar params)."""
    return (efd * v_mag / params.x_d) * np.sin(phi) \
        + 0.5 * v_mag ** 2 * (1.0 / params.x_q - 1.0 / params.x_d) * np.sin(2.0 * phi)


def _sg_load_angle(params: SgParams, efd: float, v_mag: float, p_target: float) -> float:
    if p_target == 0.0:
        return 0.0
    res = optimize.minimize_scalar(lambda phi: -sg_electrical_power(params, efd, v_mag, phi),
                                   bounds=(0.0, np.pi), method="bounded",
                                   options={"xatol": 1e-12})
    phi_max = float(res.x)
    p_max = sg_electrical_power(params, efd, v_mag, phi_max)
    if not abs(p_target) < p_max:
        raise NoEquilibriumError(
            "synchronous_generator",
            f"dispatch {p_target:.4f} pu exceeds pull-out power {p_max:.4f} pu")
    return optimize.brentq(lambda phi: sg_electrical_power(params, efd, v_mag, phi) - p_target,
                           -phi_max, phi_max, xtol=EQUILIBRIUM_TOL, rtol=4 * np.finfo(float).eps)


# =============================================================================
# Induction motor: third-order transient model
# =============================================================================

@dataclass(frozen=True)
class ImParams(_BatchParams):
    s_m: np.ndarray
    h_m: np.ndarray
    x_m: np.ndarray
    r_s: np.ndarray
    x_s: np.ndarray
    r_r: np.ndarray
    x_r: np.ndarray
    load_exponent: np.ndarray
    t_load: np.ndarray

    _names = (("s_m", "S_m"), ("h_m", "H_m"), ("x_m", "X_m"), ("r_s", "r_s"), ("x_s", "x_s"),
              ("r_r", "r_r"), ("x_r", "x_r"), ("load_exponent", "load_exponent"), ("t_load", "T_load"))

    def valid(self) -> np.ndarray:
        return ((self.x_m > self.x_s) & (self.h_m > 0) & (self.r_s > 0) & (self.r_r > 0)
                & (self.x_r > 0) & (self.s_m >= 0))

    @property
    def x_open(self):
        """Open-circuit reactance X = x_s + x_m."""
        return self.x_s + self.x_m

    @property
    def x_transient(self):
        return self.x_s + self.x_m * self.x_r / (self.x_m + self.x_r)

    def t0_p(self, f_nom: float):
        return (self.x_r + self.x_m) / (2.0 * np.pi * f_nom * self.r_r)


def im_derivatives(params: ImParams, state: ImState, v_phasor, f_grid, f_nom: float) -> Tuple[ImState, ComponentOutput]:
    omega_b = 2.0 * np.pi * f_nom
    v_phasor = np.asarray(v_phasor, dtype=complex)
    e = state.e_rp + 1j * state.e_ip
    x_p = params.x_transient
    current = (v_phasor - e) / (params.r_s + 1j * x_p)       # into the motor

    rotor_speed = (1.0 - state.slip) * np.asarray(f_grid, dtype=float) / f_nom
    d_e = -(e - 1j * (params.x_open - x_p) * current) / params.t0_p(f_nom) \
        - 1j * omega_b * (1.0 - rotor_speed) * e

    t_e = np.real(e * np.conj(current))
    t_m = params.t_load * (1.0 - state.slip) ** params.load_exponent
    d_slip = (t_m - t_e) / (2.0 * params.h_m)

    s_consumed = v_phasor * np.conj(current) * params.s_m
    active = params.s_m > 0
    deriv = ImState(np.where(active, d_e.real, 0.0), np.where(active, d_e.imag, 0.0),
                    np.where(active, d_slip, 0.0))
    return deriv, ComponentOutput(-s_consumed.real, -s_consumed.imag)


def _im_emf(params: ImParams, slip: float, v_mag: float, f0: float, f_nom: float) -> complex:
    """EMF solving dE/dt = 0 in the frame rotating with the grid at slip `slip`."""
    x_p = params.x_transient
    z_s = params.r_s + 1j * x_p
    c = 1j * (params.x_open - x_p) / z_s
    a = 1.0 + 1j * slip * (f0 / f_nom) * (params.x_r + params.x_m) / params.r_r
    return complex(c * v_mag / (a + c))


def im_electrical_torque(params: ImParams, slip: float, v_mag: float, f0: float, f_nom: float) -> float:
    e = _im_emf(params, slip, v_mag, f0, f_nom)
    current = (v_mag - e) / (params.r_s + 1j * params.x_transient)
    return float(np.real(e * np.conj(current)))


def im_steady_state(params: ImParams, v_mag: float, f0: float, f_nom: float) -> ImState:
    """Motoring equilibrium on the stable branch below breakdown slip (scalar params)."""
    t_load = float(params.t_load)
    if t_load == 0.0:
        slip = 0.0
    else:
        res = optimize.minimize_scalar(lambda s: -im_electrical_torque(params, s, v_mag, f0, f_nom),
                                       bounds=(0.0, 1.0), method="bounded",
                                       options={"xatol": 1e-12})
        s_bd = float(res.x)

        def balance(s):
            return im_electrical_torque(params, s, v_mag, f0, f_nom) \
                - t_load * (1.0 - s) ** float(params.load_exponent)

        if balance(s_bd) <= 0.0:
            raise NoEquilibriumError(
                "induction_motor",
                f"load torque {t_load:.4f} pu exceeds breakdown torque at V={v_mag:.4f} pu")
        slip = optimize.brentq(balance, 0.0, s_bd, xtol=EQUILIBRIUM_TOL, rtol=4 * np.finfo(float).eps)
    e = _im_emf(params, slip, v_mag, f0, f_nom)
    return ImState(e.real, e.imag, slip)


# =============================================================================
# Assembled equivalent
# =============================================================================

SG_SLICE = slice(0, 6)
IM_SLICE = slice(6, 9)
VSC_SLICE = slice(9, 11)
N_STATES = 11


@dataclass(frozen=True)
class EquivalentModel:
    zip: ZipLoadParams
    sg: SgParams
    im: ImParams
    vsc: VscParams
    f_nom: float

    @classmethod
    def from_parameters(cls, param_sets, f_nom: float) -> "EquivalentModel":
        if isinstance(param_sets, ParameterSet):
            param_sets = [param_sets]
        return cls(ZipLoadParams.from_parameters(param_sets), SgParams.from_parameters(param_sets),
                   ImParams.from_parameters(param_sets), VscParams.from_parameters(param_sets), f_nom)

    @property
    def size(self) -> int:
        return int(np.size(self.sg.x_d))

    def valid(self) -> np.ndarray:
        return np.asarray(self.sg.valid() & self.im.valid(), dtype=bool).reshape(-1)

    def take(self, index) -> "EquivalentModel":
        return EquivalentModel(self.zip.take(index), self.sg.take(index), self.im.take(index),
                               self.vsc.take(index), self.f_nom)

    @staticmethod
    def concat(models: Sequence["EquivalentModel"]) -> "EquivalentModel":
        """Join single- or multi-member models along the batch axis."""
        def join(parts):
            first = parts[0]
            return replace(first, **{f.name: np.concatenate([np.atleast_1d(getattr(p, f.name)) for p in parts])
                                     for f in fields(first) if getattr(first, f.name) is not None})
        return EquivalentModel(join([m.zip for m in models]), join([m.sg for m in models]),
                               join([m.im for m in models]), join([m.vsc for m in models]), models[0].f_nom)


@dataclass(frozen=True)
class EquivalentState:
    sg: SgState
    im: ImState
    vsc: VscState
    network_angle: float = 0.0

    def as_array(self) -> np.ndarray:
        cols = [*self.sg, *self.im, *self.vsc]
        return np.column_stack([np.atleast_1d(np.asarray(c, dtype=float)) for c in cols])

    @classmethod
    def from_array(cls, x: np.ndarray, network_angle: float = 0.0) -> "EquivalentState":
        x = np.atleast_2d(x)
        return cls(SgState(*x[:, SG_SLICE].T), ImState(*x[:, IM_SLICE].T), VscState(*x[:, VSC_SLICE].T),
                   network_angle)


def limiter_modes(model: EquivalentModel, x: np.ndarray, v_mag) -> np.ndarray:
    """(B, 2) int array: field-voltage limit mode, converter current limit mode."""
    x = np.atleast_2d(x)
    avr = field_limit_mode(model.sg, SgState(*x[:, SG_SLICE].T), np.asarray(v_mag, dtype=float))
    vsc = current_limit_mode(model.vsc, VscState(*x[:, VSC_SLICE].T))
    b = x.shape[0]
    return np.column_stack([np.broadcast_to(avr, (b,)), np.broadcast_to(vsc, (b,))]).astype(np.int64)


def model_derivatives(model: EquivalentModel, x: np.ndarray, v_phasor, f_grid, modes=None):
    """
    Right-hand side for a (B, 11) state array. Returns the derivative array and
    the total injection (p, q) in MW / MVar per batch member. `modes` is the
    (B, 2) limiter mode array of limiter_modes; by default it is inferred.
    """
    avr_mode = None if modes is None else np.asarray(modes)[:, 0]
    vsc_mode = None if modes is None else np.asarray(modes)[:, 1]
    sg_d, sg_out = sg_derivatives(model.sg, SgState(*x[:, SG_SLICE].T), v_phasor, f_grid, model.f_nom, avr_mode)
    im_d, im_out = im_derivatives(model.im, ImState(*x[:, IM_SLICE].T), v_phasor, f_grid, model.f_nom)
    vsc_d, vsc_out = vsc_derivatives(model.vsc, VscState(*x[:, VSC_SLICE].T), np.abs(v_phasor), vsc_mode)
    zip_out = zip_power(model.zip, np.abs(v_phasor))
    dx = np.column_stack([*sg_d, *im_d, *vsc_d])
    p = sg_out.p + im_out.p + vsc_out.p + zip_out.p
    q = sg_out.q + im_out.q + vsc_out.q + zip_out.q
    return dx, p, q


def component_outputs(model: EquivalentModel, x: np.ndarray, v_phasor, f_grid):
    """Per-component injections (MW / MVar) for a (B, 11) state array."""
    _, sg_out = sg_derivatives(model.sg, SgState(*x[:, SG_SLICE].T), v_phasor, f_grid, model.f_nom)
    _, im_out = im_derivatives(model.im, ImState(*x[:, IM_SLICE].T), v_phasor, f_grid, model.f_nom)
    _, vsc_out = vsc_derivatives(model.vsc, VscState(*x[:, VSC_SLICE].T), np.abs(v_phasor))
    return {"sg": sg_out, "im": im_out, "vsc": vsc_out, "zip": zip_power(model.zip, np.abs(v_phasor))}


def _scalar(params, i):
    return replace(params, **{f.name: float(np.asarray(getattr(params, f.name)).reshape(-1)[i])
                              for f in fields(params) if getattr(params, f.name) is not None})


def init_steady_state(model: EquivalentModel, v0: float, f0: float,
                      pcc_target: Optional[Tuple[float, float]] = None) -> Tuple[EquivalentState, EquivalentModel]:
    """
    Equilibrium of every component under constant (v0, f0).

    Component setpoints come from the parameters: the SG governor holds its
    dispatch P_sg (less droop when f0 is off nominal) and its AVR holds
    V_ref_sg; the VSC delivers P_source; the IM drives T_load. When
    pcc_target (P, Q in MW / MVar, grid to microgrid) is given, the ZIP
    constant-power terms absorb the residual so the PCC flow matches it.

    Returns the state and the model carrying the governor setpoints and, if
    anchored, the adjusted ZIP terms.
    """
    if not v0 > 0:
        raise NoEquilibriumError("pcc", f"initial voltage must be > 0, got {v0!r}")
    f_nom = model.f_nom
    n = model.size
    omega0 = (f0 - f_nom) / f_nom

    # --- SG ---
    p_ref = model.sg.dispatch_pu() * np.ones(n)
    sg_cols = np.zeros((n, 6))
    for i in range(n):
        sg = _scalar(model.sg, i)
        if not sg.s_rated > 0:
            continue
        efd = float(np.clip(avr_forcing(sg.k_a, sg.v_ref, v0), sg.efd_min, sg.efd_max))
        p_e = p_ref[i] - omega0 / sg.r_droop
        phi = _sg_load_angle(sg, efd, v0, p_e)
        v_d, v_q = v0 * np.sin(phi), v0 * np.cos(phi)
        i_q = v_d / sg.x_q
        i_d = (efd - v_q) / sg.x_d
        sg_cols[i] = (phi, omega0, v_q + sg.x_dp * i_d, (sg.x_q - sg.x_qp) * i_q, efd, p_e)
    sg_params = replace(model.sg, p_ref=p_ref)

    # --- IM ---
    im_cols = np.zeros((n, 3))
    for i in range(n):
        im = _scalar(model.im, i)
        if not im.s_m > 0:
            continue
        im_cols[i] = im_steady_state(im, v0, f0, f_nom)

    # --- VSC ---
    vsc = model.vsc
    i_d = -vsc.p_source / v0 * np.ones(n)
    over = (np.abs(i_d) > vsc.i_max) & (vsc.s_vsc > 0)
    if np.any(over):
        raise NoEquilibriumError(
            "vsc", f"P_source needs |i_d|={float(np.max(np.abs(i_d[over]))):.4f} pu above I_max")
    vsc_cols = np.column_stack([vsc.v_dc_nom * np.ones(n), i_d / vsc.k_ivdc])

    x = np.column_stack([sg_cols, im_cols, vsc_cols])
    model = replace(model, sg=sg_params)

    if pcc_target is not None:
        _, p_inj, q_inj = model_derivatives(model, x, complex(v0) * np.ones(n), f0 * np.ones(n))
        # P_hat = -injection; the residual is extra constant-power consumption
        dp = pcc_target[0] + p_inj
        dq = pcc_target[1] + q_inj
        model = replace(model, zip=replace(model.zip, p_p=model.zip.p_p + dp, q_p=model.zip.q_p + dq))

    return EquivalentState.from_array(x), model
