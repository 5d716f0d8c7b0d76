"""
Play-in simulation tests: input reconstruction, equilibrium persistence,
batch failure handling, fault synthesis and integrator convergence.

Run: pytest test/test_playin_simulator.py -v
"""
import time

import numpy as np
import pytest

from conftest import make_series
from core.exceptions import ConfigurationError, NoEquilibriumError, SimulationDivergedError
from services import playin_kernel as kernel
from services.component_models import (IM_SLICE, N_STATES, SG_SLICE, VSC_SLICE, EquivalentModel, init_steady_state,
                                       limiter_modes, model_derivatives)
from services.playin_simulator import (FaultTemplate, SimConfig, fault_profile, initial_state, reconstruct_angle,
                                       simulate_batch, simulate_playin, synth_scenario, with_anchor)
from utils.timeseries_io import Window


# ==============================================================================
# CONFIGURATION AND INPUTS
# ==============================================================================

class TestSimConfig:
    """Integration settings."""

    def test_substeps(self):
        assert SimConfig(dt_int=0.001).substeps(0.01) == 10
        assert SimConfig(dt_int=0.01).substeps(0.01) == 1

    def test_step_must_divide_interval(self):
        with pytest.raises(ConfigurationError):
            SimConfig(dt_int=0.003).substeps(0.01)

    def test_step_larger_than_interval(self):
        with pytest.raises(ConfigurationError):
            SimConfig(dt_int=0.02).substeps(0.01)

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError):
            SimConfig(method="euler")

    def test_with_anchor(self, fast_cfg):
        off = with_anchor(fast_cfg, False)
        assert off.anchor is False
        assert off.dt_int == fast_cfg.dt_int


class TestReconstructAngle:
    """PCC phasor angle from measured frequency."""

    def test_nominal_frequency(self):
        assert np.all(reconstruct_angle(np.full(10, 60.0), 60.0, 0.01) == 0.0)

    def test_constant_offset(self):
        """60.1 Hz advances 2*pi*0.1*dt rad per sample"""
        theta = reconstruct_angle(np.full(11, 60.1), 60.0, 0.01)
        assert theta[0] == 0.0
        assert theta[10] == pytest.approx(2 * np.pi * 0.1 * 0.1)

    def test_ramp_uses_trapezoid(self):
        f = np.array([60.0, 60.2, 60.4])
        theta = reconstruct_angle(f, 60.0, 0.5)
        assert theta[1] == pytest.approx(2 * np.pi * 0.1 * 0.5)
        assert theta[2] == pytest.approx(2 * np.pi * (0.1 + 0.3) * 0.5)


# ==============================================================================
# STEADY STATE
# ==============================================================================

class TestEquilibriumPersistence:
    """Constant inputs from an equilibrium keep the outputs constant."""

    def test_anchored_flat_input(self, fast_params, fast_cfg, base):
        """Anchored model holds the measured flow to 1e-6 pu for 5 s"""
        series = make_series(n=501, dt=0.01, t0=9.0, p=5.2, q=3.1)
        out = simulate_playin(fast_params, series, fast_cfg, base)
        assert np.max(np.abs(out.p_hat - 5.2)) / base.s_base < 1e-6
        assert np.max(np.abs(out.q_hat - 3.1)) / base.s_base < 1e-6

    def test_unanchored_flat_input(self, fast_params, fast_cfg, base):
        """Without anchoring the output stays at the model's own operating point"""
        series = make_series(n=301, dt=0.01)
        out = simulate_playin(fast_params, series, with_anchor(fast_cfg, False), base)
        assert np.max(np.abs(out.p_hat - out.p_hat[0])) / base.s_base < 1e-6
        assert np.max(np.abs(out.q_hat - out.q_hat[0])) / base.s_base < 1e-6

    def test_off_nominal_flat_input(self, fast_params, fast_cfg, base):
        """A constant 59.95 Hz input is also a steady operating point"""
        series = make_series(n=201, dt=0.01, f=59.95, p=4.0, q=2.0)
        out = simulate_playin(fast_params, series, fast_cfg, base)
        assert np.max(np.abs(out.p_hat - 4.0)) / base.s_base < 1e-6
        assert np.max(np.abs(out.q_hat - 2.0)) / base.s_base < 1e-6

    def test_output_length_and_times(self, fast_params, fast_cfg, base):
        series = make_series(n=21, dt=0.01, t0=9.0)
        out = simulate_playin(fast_params, series, fast_cfg, base)
        assert len(out) == 21
        assert np.allclose(out.t, series.times)

    def test_initial_state_sets_governor_reference(self, fast_params, fast_cfg, base):
        series = make_series(n=5, p=5.2, q=3.1)
        state, model = initial_state(fast_params, series, fast_cfg, base)
        assert state.network_angle == 0.0
        assert model.sg.p_ref is not None

    def test_zero_voltage_first_sample(self, fast_params, fast_cfg, base):
        series = make_series(n=5, v=np.array([0.0, 1.0, 1.0, 1.0, 1.0]))
        with pytest.raises(NoEquilibriumError):
            simulate_playin(fast_params, series, fast_cfg, base)


# ==============================================================================
# BATCHES AND FAILURES
# ==============================================================================

class TestBatch:
    """Many parameter vectors against one input."""

    def test_batch_matches_individual_runs(self, fast_params, fast_cfg, sag_series, base):
        sets = [fast_params, fast_params.with_values({"H": 2.0}), fast_params.with_values({"K_pvdc": 1.0})]
        batch = simulate_batch(sets, sag_series, fast_cfg, base)
        assert not batch.failed.any()
        for i, ps in enumerate(sets):
            single = simulate_playin(ps, sag_series, fast_cfg, base)
            assert np.allclose(batch.p_hat[i], single.p_hat, rtol=0, atol=1e-10)
            assert np.allclose(batch.q_hat[i], single.q_hat, rtol=0, atol=1e-10)

    def test_invalid_member_is_flagged(self, fast_params, fast_cfg, sag_series, base):
        """x_d' above x_d fails that member only"""
        bad = fast_params.with_values({"x_dp": 3.0})
        batch = simulate_batch([fast_params, bad], sag_series, fast_cfg, base)
        assert batch.failed.tolist() == [False, True]
        assert isinstance(batch.errors[1], NoEquilibriumError)
        assert np.all(np.isnan(batch.p_hat[1]))
        assert np.all(np.isfinite(batch.p_hat[0]))

    def test_divergence_reports_time(self, fast_params, base):
        """A state norm above the divergence limit stops the run at the first step"""
        cfg = SimConfig(dt_int=0.01, method="rk4", anchor=True, divergence_limit=1e-3)
        series = make_series(n=11, dt=0.01, t0=9.0, p=5.0, q=3.0)
        with pytest.raises(SimulationDivergedError) as exc:
            simulate_playin(fast_params, series, cfg, base)
        assert exc.value.time == pytest.approx(9.01)

    def test_trapezoidal_flat_input(self, fast_params, base):
        cfg = SimConfig(dt_int=0.01, method="trapezoidal", anchor=True)
        series = make_series(n=51, dt=0.01, p=5.2, q=3.1)
        out = simulate_playin(fast_params, series, cfg, base)
        assert np.max(np.abs(out.p_hat - 5.2)) / base.s_base < 1e-6


# ==============================================================================
# FAULT SYNTHESIS
# ==============================================================================

class TestFaultSynthesis:
    """Synthetic sag scenarios."""

    def test_profile_shape(self):
        """t=10, 500 ms, 0.4 pu on 9:14 at 10 ms"""
        template = FaultTemplate(t_fault=10.0, duration=0.5, v_sag=0.4)
        v, f = fault_profile(template, Window(9.0, 14.0), 0.01, 60.0)
        assert len(v) == 501
        assert v[99] == 1.0
        assert v[100] == 0.4
        assert v[150] == 0.4
        assert v[151] == pytest.approx(1.0 - 0.6 * np.exp(-0.05))
        assert v[-1] == pytest.approx(1.0, abs=1e-7)
        assert np.all(f == 60.0)

    def test_frequency_excursion(self):
        template = FaultTemplate(t_fault=10.0, duration=0.5, v_sag=0.4, f_excursion=-0.2, tau_f=0.5)
        _, f = fault_profile(template, Window(9.0, 14.0), 0.01, 60.0)
        assert f[99] == 60.0
        assert f[120] == pytest.approx(59.8)
        assert f[160] == pytest.approx(60.0 - 0.2 * np.exp(-0.2))

    def test_template_validation(self):
        with pytest.raises(ConfigurationError):
            FaultTemplate(t_fault=10.0, duration=0.0, v_sag=0.4)
        with pytest.raises(ConfigurationError):
            FaultTemplate(t_fault=10.0, duration=0.5, v_sag=-0.1)

    def test_synth_scenario(self, fast_params, fast_cfg, base):
        """501 samples whose P, Q are the model's own response"""
        template = FaultTemplate(t_fault=10.0, duration=0.5, v_sag=0.4)
        series = synth_scenario(fast_params, template, base, Window(9.0, 14.0), 0.01, fast_cfg)
        assert len(series) == 501
        assert series.t0 == 9.0
        assert np.all(np.isfinite(series.p))
        # flat before the fault, disturbed during it
        assert np.ptp(series.p[:100]) < 1e-6
        assert abs(series.p[120] - series.p[0]) > 0.1

    def test_synth_replays_exactly(self, fast_params, fast_cfg, sag_series, base):
        """Playing the synthetic scenario back without anchoring reproduces it"""
        out = simulate_playin(fast_params, sag_series, with_anchor(fast_cfg, False), base)
        assert np.array_equal(out.p_hat, sag_series.p)
        assert np.array_equal(out.q_hat, sag_series.q)

    def test_synth_replays_with_anchor(self, fast_params, fast_cfg, sag_series, base):
        """The anchored residual is zero on the model's own data"""
        out = simulate_playin(fast_params, sag_series, fast_cfg, base)
        assert np.max(np.abs(out.p_hat - sag_series.p)) < 1e-9


# ==============================================================================
# COMPILED KERNEL
# ==============================================================================

class TestKernel:
    """Per-member compiled equations against the vectorised component models."""

    def test_layout_matches_component_models(self):
        assert kernel.N_STATES == N_STATES
        assert len(kernel.PARAM_COLUMNS) == kernel.N_PARAMS
        assert (kernel.DELTA, kernel.EFD, kernel.P_M) == (SG_SLICE.start, SG_SLICE.start + 4, SG_SLICE.stop - 1)
        assert (kernel.E_RP, kernel.SLIP) == (IM_SLICE.start, IM_SLICE.stop - 1)
        assert (kernel.V_DC, kernel.XI) == (VSC_SLICE.start, VSC_SLICE.stop - 1)

    def test_rhs_matches_model_derivatives(self, reference_params):
        """Random states, inputs and limiter modes give the same derivatives and flows"""
        rng = np.random.default_rng(41)
        n = 30
        sets = [reference_params.with_values({"H": h, "x_d": x_d, "S_m": s_m})
                for h, x_d, s_m in zip(rng.uniform(2.0, 4.0, n), rng.uniform(2.2, 2.9, n), rng.uniform(0.8, 1.4, n))]
        model = EquivalentModel.from_parameters(sets, 60.0)
        state, model = init_steady_state(model, 1.0, 60.0, pcc_target=(5.2, 3.1))
        x = state.as_array() + rng.normal(0.0, 0.05, (n, N_STATES))
        x[:, VSC_SLICE.start] = rng.uniform(0.8, 1.2, n)
        v = rng.uniform(0.3, 1.1, n) * np.exp(1j * rng.uniform(-1.0, 1.0, n))
        f = rng.uniform(59.5, 60.5, n)
        modes = rng.integers(-1, 2, (n, 2))

        dx_ref, p_ref, q_ref = model_derivatives(model, x, v, f, modes)
        dx, p, q = kernel.derivatives(kernel.pack_model(model), x, v, f, 60.0, modes)
        assert np.allclose(dx, dx_ref, rtol=1e-10, atol=1e-10)
        assert np.allclose(p, p_ref, rtol=1e-12, atol=1e-10)
        assert np.allclose(q, q_ref, rtol=1e-12, atol=1e-10)

    def test_initial_modes_follow_state(self, reference_params):
        """An equilibrium below every limit starts with both limiters free"""
        model = EquivalentModel.from_parameters(reference_params, 60.0)
        state, model = init_steady_state(model, 1.0, 60.0)
        assert limiter_modes(model, state.as_array(), 1.0).tolist() == [[0, 0]]
        x = state.as_array()
        x[0, VSC_SLICE.start] = 1.5
        assert limiter_modes(model, x, 1.0).tolist() == [[0, -1]]


def _reference_sag(reference_params, base, dt_int):
    """Reference set under the 500 ms, 0.4 pu sag at t = 10 s on 9:14."""
    template = FaultTemplate(t_fault=10.0, duration=0.5, v_sag=0.4)
    return synth_scenario(reference_params, template, base, Window(9.0, 14.0), 0.01,
                          SimConfig(dt_int=dt_int, method="rk4", anchor=False))


def _max_error(a, b, base):
    return max(np.max(np.abs(a.p_hat - b.p_hat)), np.max(np.abs(a.q_hat - b.q_hat))) / base.s_base


class TestReferenceEquilibrium:
    """Reference parameter set at the default integration settings."""

    def test_ten_seconds_constant_input(self, reference_params, base):
        """10 s of constant input moves the anchored flow by less than 1e-5 pu, in under 5 s"""
        cfg = SimConfig(dt_int=0.001, method="rk4", anchor=True)
        simulate_playin(reference_params, make_series(n=11, dt=0.01, p=5.2, q=3.1), cfg, base)   # compile
        series = make_series(n=1001, dt=0.01, t0=9.0, p=5.2, q=3.1)
        start = time.perf_counter()
        out = simulate_playin(reference_params, series, cfg, base)
        elapsed = time.perf_counter() - start
        assert np.max(np.abs(out.p_hat - out.p_hat[0])) / base.s_base < 1e-5
        assert np.max(np.abs(out.q_hat - out.q_hat[0])) / base.s_base < 1e-5
        assert abs(out.p_hat[0] - 5.2) / base.s_base < 1e-9
        assert elapsed < 5.0


# ==============================================================================
# CONVERGENCE
# ==============================================================================

@pytest.mark.slow
class TestConvergence:
    """Integrator accuracy on the reference sag, with the field and current limits engaging."""

    def test_rk4_step_halving(self, reference_params, base):
        """Errors against a fine-step run shrink by at least 8 per halving"""
        series = _reference_sag(reference_params, base, 0.001)
        cfgs = [SimConfig(dt_int=h, method="rk4", anchor=False) for h in (0.001, 0.0005, 0.00025, 0.00003125)]
        runs = [simulate_playin(reference_params, series, cfg, base) for cfg in cfgs]
        errors = [_max_error(run, runs[-1], base) for run in runs[:-1]]
        assert errors[2] > 0
        assert errors[0] / errors[1] >= 8.0
        assert errors[1] / errors[2] >= 8.0

    def test_rk4_matches_trapezoidal(self, reference_params, base):
        """Both methods agree within 1e-5 pu over the whole event"""
        series = _reference_sag(reference_params, base, 0.001)
        rk4 = simulate_playin(reference_params, series, SimConfig(dt_int=0.00025, method="rk4", anchor=False), base)
        trap = simulate_playin(reference_params, series,
                               SimConfig(dt_int=0.000025, method="trapezoidal", anchor=False), base)
        assert _max_error(rk4, trap, base) < 1e-5

    def test_reference_sag_completes(self, reference_params, base):
        """Flat before the fault, finite throughout"""
        series = _reference_sag(reference_params, base, 0.001)
        assert np.all(np.isfinite(series.p))
        assert np.ptp(series.p[:100]) / base.s_base < 1e-7


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
