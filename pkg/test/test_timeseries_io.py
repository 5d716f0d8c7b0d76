"""
PCC time series I/O, preprocessing and windowing tests.

Run: pytest test/test_timeseries_io.py -v
"""
import numpy as np
import pytest

from conftest import make_series
from core.exceptions import ConfigurationError, CsvFormatError, WindowError
from utils.timeseries_io import (PccTimeSeries, PreprocessConfig, Window, extract_window, load_pcc_csv,
                                 lowpass_coefficients, preprocess, save_pcc_csv, window_indices, window_slice)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


# ==============================================================================
# CSV LOADING
# ==============================================================================

class TestLoadPccCsv:
    """Reading (t, v, f, p, q) records."""

    def test_basic_load(self, work_dir, base):
        """Uniform file loads with t0, dt and channel values intact"""
        path = write(work_dir / "a.csv", "t,v,f,p,q\n9.0,1.0,60.0,5.2,3.1\n9.01,0.99,60.0,5.1,3.0\n9.02,0.98,59.9,5.0,2.9\n")
        s = load_pcc_csv(path, base)
        assert len(s) == 3
        assert s.t0 == pytest.approx(9.0)
        assert s.dt == pytest.approx(0.01)
        assert s.v_mag.tolist() == [1.0, 0.99, 0.98]
        assert s.freq[2] == pytest.approx(59.9)
        assert s.p[0] == pytest.approx(5.2)
        assert s.q[2] == pytest.approx(2.9)

    def test_save_then_load_is_exact(self, work_dir, base):
        """Round-trip float formatting reproduces every value bit for bit"""
        rng = np.random.default_rng(3)
        s = make_series(n=20, dt=0.01, t0=9.0, v=1.0 + 0.01 * rng.standard_normal(20),
                        p=5.0 + rng.standard_normal(20), q=rng.standard_normal(20))
        path = str(work_dir / "rt.csv")
        save_pcc_csv(s, path)
        back = load_pcc_csv(path, base)
        assert np.array_equal(back.v_mag, s.v_mag)
        assert np.array_equal(back.p, s.p)
        assert np.array_equal(back.q, s.q)
        assert back.dt == pytest.approx(s.dt, rel=1e-12)

    def test_units_comment_written(self, work_dir):
        """Saved files start with the units comment"""
        path = str(work_dir / "u.csv")
        save_pcc_csv(make_series(n=3), path)
        first = open(path, encoding="utf-8").readline().strip()
        assert first == "# units: t=s, v=pu, f=Hz, p=MW, q=MVar"

    def test_kv_and_kw_units(self, work_dir, base):
        """v in kV and p/q in kW/kVar convert to pu and MW/MVar"""
        path = write(work_dir / "k.csv",
                     "# units: t=s, v=kV, f=Hz, p=kW, q=kVar\nt,v,f,p,q\n0,13.8,60,5200,3100\n0.01,6.9,60,5000,3000\n")
        s = load_pcc_csv(path, base)
        assert s.v_mag[0] == pytest.approx(1.0)
        assert s.v_mag[1] == pytest.approx(0.5)
        assert s.p[0] == pytest.approx(5.2)
        assert s.q[1] == pytest.approx(3.0)

    def test_missing_column(self, work_dir, base):
        """A missing header names the column"""
        path = write(work_dir / "m.csv", "t,v,f,p\n0,1,60,1\n0.01,1,60,1\n")
        with pytest.raises(CsvFormatError) as exc:
            load_pcc_csv(path, base)
        assert exc.value.column == "q"

    def test_non_uniform_spacing(self, work_dir, base):
        """t = 0, 0.01, 0.03 fails at data row 3"""
        path = write(work_dir / "n.csv", "t,v,f,p,q\n0,1,60,1,1\n0.01,1,60,1,1\n0.03,1,60,1,1\n")
        with pytest.raises(CsvFormatError) as exc:
            load_pcc_csv(path, base)
        assert exc.value.row == 3
        assert exc.value.column == "t"

    def test_unparseable_cell(self, work_dir, base):
        """A text cell reports its 1-based row and column"""
        path = write(work_dir / "x.csv", "t,v,f,p,q\n0,1,60,1,1\n0.01,1,60,abc,1\n")
        with pytest.raises(CsvFormatError) as exc:
            load_pcc_csv(path, base)
        assert exc.value.row == 2
        assert exc.value.column == "p"

    def test_dt_from_first_two_rows(self, work_dir, base):
        """Jitter inside the spacing tolerance later on does not move dt"""
        path = write(work_dir / "j.csv",
                     "t,v,f,p,q\n0,1,60,1,1\n0.01,1,60,1,1\n0.02,1,60,1,1\n0.0300000001,1,60,1,1\n")
        assert load_pcc_csv(path, base).dt == 0.01

    def test_single_row_rejected(self, work_dir, base):
        """One data row cannot define a sample interval"""
        path = write(work_dir / "one.csv", "t,v,f,p,q\n0,1,60,1,1\n")
        with pytest.raises(CsvFormatError):
            load_pcc_csv(path, base)

    def test_nonpositive_frequency(self, work_dir, base):
        path = write(work_dir / "f.csv", "t,v,f,p,q\n0,1,60,1,1\n0.01,1,0,1,1\n")
        with pytest.raises(CsvFormatError) as exc:
            load_pcc_csv(path, base)
        assert exc.value.column == "f"

    def test_missing_file(self, work_dir, base):
        with pytest.raises(CsvFormatError):
            load_pcc_csv(str(work_dir / "nope.csv"), base)


# ==============================================================================
# SERIES VALUE TYPE
# ==============================================================================

class TestPccTimeSeries:
    """Invariants of the in-memory series."""

    def test_channels_are_read_only(self):
        s = make_series(n=5)
        with pytest.raises(ValueError):
            s.p[0] = 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            PccTimeSeries(0.0, 0.01, [1, 1, 1], [60, 60], [0, 0, 0], [0, 0, 0])

    def test_times_grid(self):
        """Times are t0 + k*dt"""
        s = make_series(n=501, dt=0.01, t0=9.0)
        assert s.times[0] == 9.0
        assert s.times[-1] == pytest.approx(14.0)
        assert s.t_end == pytest.approx(14.0)


# ==============================================================================
# PREPROCESSING
# ==============================================================================

class TestPreprocess:
    """Low-pass filtering and decimation."""

    def test_identity_config(self):
        """No filter and no resampling returns the series unchanged"""
        s = make_series(n=10, p=3.0)
        assert preprocess(s, PreprocessConfig()) is s

    def test_constant_passes_filter(self):
        """Filter state starts at the first sample so a constant is unchanged"""
        s = make_series(n=200, dt=0.001, v=0.97, f=59.95, p=4.2, q=-1.3)
        out = preprocess(s, PreprocessConfig(cutoff_hz=50.0))
        assert np.allclose(out.v_mag, 0.97, atol=1e-12)
        assert np.allclose(out.freq, 59.95, atol=1e-9)
        assert np.allclose(out.p, 4.2, atol=1e-12)
        assert np.allclose(out.q, -1.3, atol=1e-12)

    def test_filter_has_unit_dc_gain(self):
        b, a = lowpass_coefficients(10.0, 0.001)
        assert np.sum(b) / np.sum(a) == pytest.approx(1.0)

    def test_filter_attenuates_high_frequency(self):
        """A 200 Hz ripple shrinks behind a 5 Hz cutoff"""
        t = np.arange(2000) * 0.0005
        ripple = 0.05 * np.sin(2 * np.pi * 200.0 * t)
        s = make_series(n=2000, dt=0.0005, p=5.0 + ripple)
        out = preprocess(s, PreprocessConfig(cutoff_hz=5.0))
        assert np.max(np.abs(out.p[1000:] - 5.0)) < 0.005

    def test_step_response_matches_difference_equation(self):
        """Unit step through the bilinear first-order filter, recursion written out by hand"""
        dt, cutoff = 0.001, 20.0
        x = np.where(np.arange(300) >= 50, 1.0, 0.0)
        out = preprocess(make_series(n=300, dt=dt, p=x), PreprocessConfig(cutoff_hz=cutoff))

        k = np.pi * cutoff * dt          # wc * dt / 2
        expected = np.empty_like(x)
        y_prev, x_prev = x[0], x[0]
        for n, xn in enumerate(x):
            y_prev = (k * (xn + x_prev) - (k - 1.0) * y_prev) / (1.0 + k)
            x_prev = xn
            expected[n] = y_prev
        assert np.max(np.abs(out.p - expected)) < 1e-12
        assert out.p[49] == 0.0
        assert 0.0 < out.p[50] < out.p[51] < 1.0

    def test_decimation(self):
        """dt 0.001 -> 0.01 keeps every tenth sample"""
        s = make_series(n=101, dt=0.001, p=np.arange(101, dtype=float))
        out = preprocess(s, PreprocessConfig(resample_dt=0.01))
        assert len(out) == 11
        assert out.dt == pytest.approx(0.01)
        assert out.p.tolist() == [float(k) for k in range(0, 101, 10)]

    def test_resample_finer_than_dt(self):
        with pytest.raises(ConfigurationError):
            preprocess(make_series(n=10, dt=0.01), PreprocessConfig(resample_dt=0.001))

    def test_resample_not_a_multiple(self):
        with pytest.raises(ConfigurationError):
            preprocess(make_series(n=10, dt=0.01), PreprocessConfig(resample_dt=0.015))


# ==============================================================================
# WINDOWS
# ==============================================================================

class TestWindows:
    """Window parsing and sample selection."""

    def test_parse(self):
        w = Window.parse("9:9.99")
        assert (w.t_start, w.t_end) == (9.0, 9.99)
        assert w.label == "9:9.99"

    def test_reversed_window(self):
        with pytest.raises(WindowError):
            Window(10.0, 9.0)

    def test_empty_window(self):
        with pytest.raises(WindowError):
            Window(10.0, 10.0)

    def test_bad_text(self):
        with pytest.raises(WindowError):
            Window.parse("9-14")

    def test_precedes(self):
        assert Window(9, 9.99).precedes(Window(10, 14))
        assert not Window(9, 10.5).precedes(Window(10, 14))

    def test_full_span_indices(self):
        """9:14 at 10 ms covers all 501 samples"""
        s = make_series(n=501, dt=0.01, t0=9.0)
        assert window_indices(s, Window(9.0, 14.0)) == (0, 500)
        sl = window_slice(s, Window(9.0, 14.0))
        assert sl.stop - sl.start == 501

    def test_inner_window_indices(self):
        """Window edges land on samples despite float noise in 9.99 and 10.0"""
        s = make_series(n=501, dt=0.01, t0=9.0)
        assert window_indices(s, Window(9.0, 9.99)) == (0, 99)
        assert window_indices(s, Window(10.0, 14.0)) == (100, 500)

    def test_window_outside_span(self):
        s = make_series(n=101, dt=0.01, t0=9.0)
        with pytest.raises(WindowError):
            window_indices(s, Window(8.0, 9.5))

    def test_extract_window(self):
        s = make_series(n=501, dt=0.01, t0=9.0, p=np.arange(501, dtype=float))
        part = extract_window(s, Window(10.0, 11.0))
        assert len(part) == 101
        assert part.t0 == pytest.approx(10.0)
        assert part.p[0] == 100.0

    def test_extract_full_span_is_same_series(self):
        s = make_series(n=11)
        assert extract_window(s, s.span) is s

    def test_extract_single_sample(self):
        s = make_series(n=101, dt=0.01)
        with pytest.raises(WindowError):
            extract_window(s, Window(0.1, 0.105))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
