"""
Compiled play-in integration of the assembled equivalent.

Each batch member is integrated by its own scalar loop over a packed
parameter row; the equations are those of component_models, written per
member so numba can compile them. The AVR field-voltage limit and the VSC
current limit are hybrid modes: inside a fixed step the first limit
crossing is located by bisection, the mode switches there and the rest of
the step is integrated in the new mode, so a limiter hit costs no order of
accuracy.
"""

import math

import numba
import numpy as np

CACHE = True

RK4 = 0
TRAPEZOIDAL = 1

# packed parameter columns
P_Z, P_I, P_P, Q_Z, Q_I, Q_P, V0 = 0, 1, 2, 3, 4, 5, 6
X_D, X_DP, X_Q, X_QP, T_DO_P, T_Q_P, H, S_SG = 7, 8, 9, 10, 11, 12, 13, 14
K_A, T_A, R_DROOP, T_GOV, D, EFD_MAX, EFD_MIN, V_REF, P_REF = 15, 16, 17, 18, 19, 20, 21, 22, 23
S_M, H_M, X_M, R_S, X_S, R_R, X_R, LOAD_EXP, T_LOAD = 24, 25, 26, 27, 28, 29, 30, 31, 32
S_VSC, K_PVDC, K_IVDC, V_DC_NOM, C_DC, P_SOURCE, I_MAX = 33, 34, 35, 36, 37, 38, 39
N_PARAMS = 40

PARAM_COLUMNS = (
    ("zip", "p_z"), ("zip", "p_i"), ("zip", "p_p"), ("zip", "q_z"), ("zip", "q_i"), ("zip", "q_p"),
    ("zip", "v0"),
    ("sg", "x_d"), ("sg", "x_dp"), ("sg", "x_q"), ("sg", "x_qp"), ("sg", "t_do_p"), ("sg", "t_q_p"),
    ("sg", "h"), ("sg", "s_rated"), ("sg", "k_a"), ("sg", "t_a"), ("sg", "r_droop"), ("sg", "t_gov"),
    ("sg", "d"), ("sg", "efd_max"), ("sg", "efd_min"), ("sg", "v_ref"), ("sg", "p_ref"),
    ("im", "s_m"), ("im", "h_m"), ("im", "x_m"), ("im", "r_s"), ("im", "x_s"), ("im", "r_r"),
    ("im", "x_r"), ("im", "load_exponent"), ("im", "t_load"),
    ("vsc", "s_vsc"), ("vsc", "k_pvdc"), ("vsc", "k_ivdc"), ("vsc", "v_dc_nom"), ("vsc", "c_dc"),
    ("vsc", "p_source"), ("vsc", "i_max"),
)

# state columns, same layout as component_models
DELTA, OMEGA, E_QP, E_DP, EFD, P_M = 0, 1, 2, 3, 4, 5
E_RP, E_IP, SLIP = 6, 7, 8
V_DC, XI = 9, 10
N_STATES = 11

# limiter mode columns: 0 free, +1 upper limit, -1 lower limit
AVR_MODE = 0
VSC_MODE = 1

MAX_SWITCHES = 8
BISECTION_ITER = 48
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 10


def pack_model(model) -> np.ndarray:
    """(B, N_PARAMS) float table of an initialised EquivalentModel."""
    n = model.size
    sg_p_ref = model.sg.p_ref if model.sg.p_ref is not None else model.sg.dispatch_pu()
    packed = np.empty((n, N_PARAMS))
    for col, (part, attr) in enumerate(PARAM_COLUMNS):
        value = sg_p_ref if (part, attr) == ("sg", "p_ref") else getattr(getattr(model, part), attr)
        packed[:, col] = np.broadcast_to(np.asarray(value, dtype=float).reshape(-1), (n,))
    return packed


@numba.njit(cache=CACHE, error_model="numpy")
def rhs(par, x, vr, vi, f_grid, f_nom, avr_mode, vsc_mode, dx):
    """Writes dx for one member and returns the total PCC injection (MW, MVar)."""
    omega_b = 2.0 * math.pi * f_nom
    v_mag = math.sqrt(vr * vr + vi * vi)
    for i in range(N_STATES):
        dx[i] = 0.0

    r = v_mag / par[V0]
    p_tot = -(par[P_Z] * r * r + par[P_I] * r + par[P_P])
    q_tot = -(par[Q_Z] * r * r + par[Q_I] * r + par[Q_P])

    if par[S_SG] > 0.0:
        phi = x[DELTA] - math.atan2(vi, vr)
        v_d = v_mag * math.sin(phi)
        v_q = v_mag * math.cos(phi)
        i_d = (x[E_QP] - v_q) / par[X_DP]
        i_q = (v_d - x[E_DP]) / par[X_QP]
        p_e = v_d * i_d + v_q * i_q
        q_e = v_q * i_d - v_d * i_q
        if avr_mode > 0:
            efd = par[EFD_MAX]
        elif avr_mode < 0:
            efd = par[EFD_MIN]
        else:
            efd = x[EFD]
            dx[EFD] = (par[K_A] * (par[V_REF] - v_mag) - x[EFD]) / par[T_A]
        omega_grid = (f_grid - f_nom) / f_nom
        dx[DELTA] = omega_b * x[OMEGA]
        dx[OMEGA] = (x[P_M] - p_e - par[D] * (x[OMEGA] - omega_grid)) / (2.0 * par[H])
        dx[E_QP] = (efd - x[E_QP] - (par[X_D] - par[X_DP]) * i_d) / par[T_DO_P]
        dx[E_DP] = (-x[E_DP] + (par[X_Q] - par[X_QP]) * i_q) / par[T_Q_P]
        dx[P_M] = (par[P_REF] - x[OMEGA] / par[R_DROOP] - x[P_M]) / par[T_GOV]
        p_tot += p_e * par[S_SG]
        q_tot += q_e * par[S_SG]

    if par[S_M] > 0.0:
        x_p = par[X_S] + par[X_M] * par[X_R] / (par[X_M] + par[X_R])
        x_open = par[X_S] + par[X_M]
        t0_p = (par[X_R] + par[X_M]) / (omega_b * par[R_R])
        e = complex(x[E_RP], x[E_IP])
        v = complex(vr, vi)
        cur = (v - e) / complex(par[R_S], x_p)
        rotor_speed = (1.0 - x[SLIP]) * f_grid / f_nom
        d_e = -(e - 1j * (x_open - x_p) * cur) / t0_p - 1j * omega_b * (1.0 - rotor_speed) * e
        t_e = (e * cur.conjugate()).real
        t_m = par[T_LOAD] * (1.0 - x[SLIP]) ** par[LOAD_EXP]
        dx[E_RP] = d_e.real
        dx[E_IP] = d_e.imag
        dx[SLIP] = (t_m - t_e) / (2.0 * par[H_M])
        s = v * cur.conjugate()
        p_tot -= s.real * par[S_M]
        q_tot -= s.imag * par[S_M]

    if par[S_VSC] > 0.0:
        error = par[V_DC_NOM] - x[V_DC]
        if vsc_mode > 0:
            i_d = par[I_MAX]
        elif vsc_mode < 0:
            i_d = -par[I_MAX]
        else:
            i_d = par[K_PVDC] * error + par[K_IVDC] * x[XI]
            dx[XI] = error
        p_ac = -v_mag * i_d
        dx[V_DC] = (par[P_SOURCE] - p_ac) / (par[C_DC] * x[V_DC])
        p_tot += p_ac * par[S_VSC]

    return p_tot, q_tot


@numba.njit(cache=CACHE, error_model="numpy")
def exit_margins(par, x, v_mag, modes, out):
    """
    Per limiter, a function that is <= 0 while the current mode holds and
    turns positive when the mode must switch.
    """
    out[AVR_MODE] = -1.0
    out[VSC_MODE] = -1.0
    if par[S_SG] > 0.0:
        forcing = par[K_A] * (par[V_REF] - v_mag)
        if modes[AVR_MODE] == 0:
            out[AVR_MODE] = max(x[EFD] - par[EFD_MAX], par[EFD_MIN] - x[EFD])
        elif modes[AVR_MODE] > 0:
            out[AVR_MODE] = par[EFD_MAX] - forcing
        else:
            out[AVR_MODE] = forcing - par[EFD_MIN]
    if par[S_VSC] > 0.0:
        i_dref = par[K_PVDC] * (par[V_DC_NOM] - x[V_DC]) + par[K_IVDC] * x[XI]
        if modes[VSC_MODE] == 0:
            out[VSC_MODE] = max(i_dref - par[I_MAX], -par[I_MAX] - i_dref)
        elif modes[VSC_MODE] > 0:
            out[VSC_MODE] = par[I_MAX] - i_dref
        else:
            out[VSC_MODE] = i_dref + par[I_MAX]


@numba.njit(cache=CACHE, error_model="numpy")
def switch_mode(par, x, modes, which):
    """Enter the limit that was crossed, or release it; a clamped field voltage is pinned."""
    if which == AVR_MODE:
        if modes[AVR_MODE] != 0:
            modes[AVR_MODE] = 0
        elif x[EFD] - par[EFD_MAX] >= par[EFD_MIN] - x[EFD]:
            modes[AVR_MODE] = 1
            x[EFD] = par[EFD_MAX]
        else:
            modes[AVR_MODE] = -1
            x[EFD] = par[EFD_MIN]
    else:
        if modes[VSC_MODE] != 0:
            modes[VSC_MODE] = 0
        elif par[K_PVDC] * (par[V_DC_NOM] - x[V_DC]) + par[K_IVDC] * x[XI] > 0.0:
            modes[VSC_MODE] = 1
        else:
            modes[VSC_MODE] = -1


@numba.njit(cache=CACHE, error_model="numpy")
def input_at(v_s, f_s, th_s, k, u, dt, f_nom):
    """
    PCC phasor (real, imag) and frequency at fraction u of sample interval k.
    V and f are linear; the angle integrates the linear frequency exactly so
    it meets the reconstructed angle at every sample.
    """
    v = v_s[k] + u * (v_s[k + 1] - v_s[k])
    f = f_s[k] + u * (f_s[k + 1] - f_s[k])
    theta = th_s[k] + 2.0 * math.pi * (0.5 * (f_s[k] + f) - f_nom) * u * dt
    return v * math.cos(theta), v * math.sin(theta), f


@numba.njit(cache=CACHE, error_model="numpy")
def _all_finite(a):
    return np.all(np.isfinite(a))


@numba.njit(cache=CACHE, error_model="numpy")
def rk4_step(par, x, k, u0, du, v_s, f_s, th_s, dt, f_nom, modes, out, work):
    h = du * dt
    k1, k2, k3, k4, tmp = work[0], work[1], work[2], work[3], work[4]
    a, b = modes[AVR_MODE], modes[VSC_MODE]
    vr, vi, fg = input_at(v_s, f_s, th_s, k, u0, dt, f_nom)
    rhs(par, x, vr, vi, fg, f_nom, a, b, k1)
    vr, vi, fg = input_at(v_s, f_s, th_s, k, u0 + 0.5 * du, dt, f_nom)
    for i in range(N_STATES):
        tmp[i] = x[i] + 0.5 * h * k1[i]
    rhs(par, tmp, vr, vi, fg, f_nom, a, b, k2)
    for i in range(N_STATES):
        tmp[i] = x[i] + 0.5 * h * k2[i]
    rhs(par, tmp, vr, vi, fg, f_nom, a, b, k3)
    vr, vi, fg = input_at(v_s, f_s, th_s, k, u0 + du, dt, f_nom)
    for i in range(N_STATES):
        tmp[i] = x[i] + h * k3[i]
    rhs(par, tmp, vr, vi, fg, f_nom, a, b, k4)
    for i in range(N_STATES):
        out[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return True


@numba.njit(cache=CACHE, error_model="numpy")
def trapezoidal_step(par, x, k, u0, du, v_s, f_s, th_s, dt, f_nom, modes, out, work, jac):
    """Implicit trapezoidal rule, modified Newton with one finite-difference Jacobian per step."""
    h = du * dt
    f0, f1, fp, res, xp = work[0], work[1], work[2], work[3], work[4]
    a, b = modes[AVR_MODE], modes[VSC_MODE]
    vr, vi, fg = input_at(v_s, f_s, th_s, k, u0, dt, f_nom)
    rhs(par, x, vr, vi, fg, f_nom, a, b, f0)
    vr, vi, fg = input_at(v_s, f_s, th_s, k, u0 + du, dt, f_nom)
    for i in range(N_STATES):
        out[i] = x[i] + h * f0[i]
    rhs(par, out, vr, vi, fg, f_nom, a, b, f1)
    for c in range(N_STATES):
        step = 1e-7 * max(1.0, abs(out[c]))
        for i in range(N_STATES):
            xp[i] = out[i]
        xp[c] += step
        rhs(par, xp, vr, vi, fg, f_nom, a, b, fp)
        for i in range(N_STATES):
            jac[i, c] = -0.5 * h * (fp[i] - f1[i]) / step
        jac[c, c] += 1.0
    if not _all_finite(jac):
        return False
    for _ in range(NEWTON_MAX_ITER):
        rhs(par, out, vr, vi, fg, f_nom, a, b, f1)
        for i in range(N_STATES):
            res[i] = out[i] - x[i] - 0.5 * h * (f0[i] + f1[i])
        if not _all_finite(res):
            return False
        delta = np.linalg.solve(jac, res)
        converged = True
        for i in range(N_STATES):
            out[i] -= delta[i]
            if abs(delta[i]) > NEWTON_TOL * (1.0 + abs(out[i])):
                converged = False
        if converged:
            break
    return True


@numba.njit(cache=CACHE, error_model="numpy")
def advance(method, par, x, k, u0, du, v_s, f_s, th_s, dt, f_nom, modes, out, work, jac):
    if method == RK4:
        return rk4_step(par, x, k, u0, du, v_s, f_s, th_s, dt, f_nom, modes, out, work)
    return trapezoidal_step(par, x, k, u0, du, v_s, f_s, th_s, dt, f_nom, modes, out, work, jac)


@numba.njit(cache=CACHE, error_model="numpy")
def _v_mag(v_s, k, u):
    return abs(v_s[k] + u * (v_s[k + 1] - v_s[k]))


@numba.njit(cache=CACHE, error_model="numpy")
def limited_step(method, par, x, k, u0, du, v_s, f_s, th_s, dt, f_nom, modes, out, work, jac,
                 xs, g0, g1):
    """
    Advance x over fraction [u0, u0 + du] of interval k into out, switching
    limiter modes at the located crossings. Returns False when a step fails.
    """
    for i in range(N_STATES):
        xs[i] = x[i]
    u = u0
    left = du
    for _ in range(MAX_SWITCHES):
        # a mode that no longer holds at the step start switches right away
        exit_margins(par, xs, _v_mag(v_s, k, u), modes, g0)
        for which in range(2):
            if g0[which] > 0.0:
                switch_mode(par, xs, modes, which)
        exit_margins(par, xs, _v_mag(v_s, k, u), modes, g0)

        if not advance(method, par, xs, k, u, left, v_s, f_s, th_s, dt, f_nom, modes, out, work, jac):
            return False
        exit_margins(par, out, _v_mag(v_s, k, u + left), modes, g1)
        crossed = False
        for which in range(2):
            if g0[which] <= 0.0 and g1[which] > 0.0:
                crossed = True
        if not crossed:
            return True

        lo, hi = 0.0, left
        for _it in range(BISECTION_ITER):
            mid = 0.5 * (lo + hi)
            if not advance(method, par, xs, k, u, mid, v_s, f_s, th_s, dt, f_nom, modes, out, work, jac):
                return False
            exit_margins(par, out, _v_mag(v_s, k, u + mid), modes, g1)
            hit = False
            for which in range(2):
                if g0[which] <= 0.0 and g1[which] > 0.0:
                    hit = True
            if hit:
                hi = mid
            else:
                lo = mid
        if not advance(method, par, xs, k, u, hi, v_s, f_s, th_s, dt, f_nom, modes, out, work, jac):
            return False
        exit_margins(par, out, _v_mag(v_s, k, u + hi), modes, g1)
        for i in range(N_STATES):
            xs[i] = out[i]
        for which in range(2):
            if g0[which] <= 0.0 and g1[which] > 0.0:
                switch_mode(par, xs, modes, which)
        u += hi
        left -= hi
        if left <= 0.0:
            for i in range(N_STATES):
                out[i] = xs[i]
            return True

    # switching budget spent: finish the step in the current modes
    return advance(method, par, xs, k, u, left, v_s, f_s, th_s, dt, f_nom, modes, out, work, jac)


@numba.njit(cache=CACHE, error_model="numpy")
def integrate(packed, x0, modes0, v_s, f_s, th_s, t0, dt, n_sub, f_nom, method, limit,
              p_hat, q_hat, fail_time):
    """
    Integrate every member over the whole input. p_hat, q_hat (B, N) are
    filled with the grid-to-microgrid flow and left untouched after a
    member fails; fail_time receives the failure instant.
    """
    n_members = packed.shape[0]
    n = v_s.shape[0]
    du = 1.0 / n_sub
    h = dt / n_sub
    work = np.empty((5, N_STATES))
    jac = np.empty((N_STATES, N_STATES))
    x = np.empty(N_STATES)
    out = np.empty(N_STATES)
    xs = np.empty(N_STATES)
    dx = np.empty(N_STATES)
    g0 = np.empty(2)
    g1 = np.empty(2)
    modes = np.empty(2, np.int64)

    for m in range(n_members):
        par = packed[m]
        for i in range(N_STATES):
            x[i] = x0[m, i]
        modes[0] = modes0[m, 0]
        modes[1] = modes0[m, 1]
        vr, vi, fg = input_at(v_s, f_s, th_s, 0, 0.0, dt, f_nom)
        p, q = rhs(par, x, vr, vi, fg, f_nom, modes[0], modes[1], dx)
        p_hat[m, 0] = -p
        q_hat[m, 0] = -q
        for k in range(n - 1):
            failed = False
            for s in range(n_sub):
                ok = limited_step(method, par, x, k, s * du, du, v_s, f_s, th_s, dt, f_nom, modes,
                                  out, work, jac, xs, g0, g1)
                norm = 0.0
                for i in range(N_STATES):
                    norm += out[i] * out[i]
                if not ok or not math.isfinite(norm) or math.sqrt(norm) > limit:
                    fail_time[m] = t0 + k * dt + (s + 1) * h
                    failed = True
                    break
                for i in range(N_STATES):
                    x[i] = out[i]
            if failed:
                break
            vr, vi, fg = input_at(v_s, f_s, th_s, k, 1.0, dt, f_nom)
            p, q = rhs(par, x, vr, vi, fg, f_nom, modes[0], modes[1], dx)
            p_hat[m, k + 1] = -p
            q_hat[m, k + 1] = -q


def derivatives(packed, x, v_phasor, f_grid, f_nom, modes):
    """Batch right-hand side through the compiled per-member equations (B, 11), (B,), (B,)."""
    packed = np.ascontiguousarray(packed, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    b = packed.shape[0]
    v_phasor = np.broadcast_to(np.asarray(v_phasor, dtype=complex), (b,))
    f_grid = np.broadcast_to(np.asarray(f_grid, dtype=float), (b,))
    modes = np.broadcast_to(np.asarray(modes, dtype=np.int64), (b, 2))
    dx = np.zeros((b, N_STATES))
    p = np.empty(b)
    q = np.empty(b)
    for m in range(b):
        p[m], q[m] = rhs(packed[m], x[m], float(v_phasor[m].real), float(v_phasor[m].imag),
                         float(f_grid[m]), float(f_nom), int(modes[m, 0]), int(modes[m, 1]), dx[m])
    return dx, p, q
