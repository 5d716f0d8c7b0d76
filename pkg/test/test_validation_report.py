"""
Fit-quality tests: MSE, verdicts, failed events and report files.

Run: pytest test/test_validation_report.py -v
"""
import math

import numpy as np
import pytest

from core.exceptions import LengthMismatchError
from services.validation_report import (COMPARISON_COLUMNS, RETUNE_REQUIRED, VALIDATED, ValidationEvent, emit_comparison,
                                        load_comparison, load_report_csv, mse, save_report_csv, series_through,
                                        validate)
from utils.timeseries_io import Window

POST = Window(9.5, 10.5)


# ==============================================================================
# MEAN-SQUARED ERROR
# ==============================================================================

class TestMse:
    """Plain mean of squared differences."""

    def test_example(self):
        assert mse([1.0, 2.0, 3.0], [1.0, 2.0, 5.0]) == pytest.approx(4.0 / 3.0)

    def test_identical(self):
        assert mse(np.arange(5.0), np.arange(5.0)) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            mse([1.0, 2.0], [1.0])

    def test_empty(self):
        with pytest.raises(LengthMismatchError):
            mse([], [])

    def test_sample_weighted_over_partitions(self):
        """Any split of the window recombines as a sample-weighted mean"""
        rng = np.random.default_rng(8)
        y, y_hat = rng.normal(0.0, 1.0, 500), rng.normal(0.0, 1.0, 500)
        whole = mse(y, y_hat)
        for _ in range(100):
            cuts = np.sort(rng.choice(np.arange(1, 500), size=rng.integers(1, 10), replace=False))
            parts = zip(np.split(y, cuts), np.split(y_hat, cuts))
            assert sum(len(a) * mse(a, b) for a, b in parts) / 500 == pytest.approx(whole, rel=1e-12)


class TestSeriesThrough:
    """Simulation only needs to run up to the end of the window."""

    def test_truncates_after_window(self, sag_series):
        part = series_through(sag_series, Window(9.2, 9.7))
        assert part.t0 == sag_series.t0
        assert part.t_end == pytest.approx(9.7)

    def test_window_to_end_keeps_series(self, sag_series):
        assert series_through(sag_series, POST) is sag_series


# ==============================================================================
# VERDICTS
# ==============================================================================

class TestValidate:
    """validated / retune_required decisions."""

    def test_generating_model_validates(self, fast_params, fast_cfg, sag_series, base):
        report = validate(fast_params, [(sag_series, POST)], 0.05, fast_cfg, base)
        assert report.verdict == VALIDATED
        assert report.validated
        record = report.records[0]
        assert record.event_label == "event1"
        assert record.mse_total == pytest.approx(record.mse_p + record.mse_q)
        assert record.mse_total < 1e-12

    def test_wrong_model_retunes_at_zero_threshold(self, fast_params, fast_cfg, sag_series, base):
        wrong = fast_params.with_values({"H": 2.0, "x_dp": 0.5})
        report = validate(wrong, [(sag_series, POST)], 0.0, fast_cfg, base)
        assert report.verdict == RETUNE_REQUIRED
        assert report.records[0].mse_total > 0.0
        assert report.worst_event == "event1"

    def test_worst_event_is_largest_error(self, fast_params, fast_cfg, sag_series, base):
        wrong = fast_params.with_values({"H": 2.0})
        events = [ValidationEvent("pre", sag_series, Window(9.0, 9.49)), ValidationEvent("post", sag_series, POST)]
        report = validate(wrong, events, 10.0, fast_cfg, base)
        assert report.validated
        assert report.worst_event == "post"

    def test_failed_event_is_recorded(self, fast_params, fast_cfg, sag_series, base):
        """A window outside its series fails that event; the others still run"""
        events = [ValidationEvent("outside", sag_series, Window(11.0, 12.0)), ValidationEvent("fit", sag_series, POST)]
        report = validate(fast_params, events, 0.05, fast_cfg, base)
        assert report.verdict == RETUNE_REQUIRED
        assert report.worst_event == "outside"
        failed, scored = report.records
        assert failed.failed
        assert failed.status.startswith("failed")
        assert math.isnan(failed.mse_total)
        assert not scored.failed
        assert scored.mse_total < 1e-12

    def test_failed_simulation_is_recorded(self, fast_params, fast_cfg, sag_series, base):
        bad = fast_params.with_values({"x_dp": 3.0})
        report = validate(bad, [(sag_series, POST)], 0.05, fast_cfg, base)
        assert report.records[0].failed
        assert not report.validated

    def test_no_events(self, fast_params, fast_cfg, base):
        assert validate(fast_params, [], 0.05, fast_cfg, base).verdict == RETUNE_REQUIRED


# ==============================================================================
# FILES
# ==============================================================================

class TestReportFiles:
    """report.csv and comparison curves."""

    def test_report_reloads(self, fast_params, fast_cfg, sag_series, base, work_dir):
        events = [ValidationEvent("pre", sag_series, Window(9.0, 9.49)), ValidationEvent("post", sag_series, POST)]
        report = validate(fast_params.with_values({"H": 2.5}), events, 0.05, fast_cfg, base)
        path = str(work_dir / "report.csv")
        save_report_csv(report, path)
        back = load_report_csv(path)
        assert back.records == report.records
        assert back.threshold == 0.05
        assert back.verdict == report.verdict

    def test_report_keeps_failed_status(self, fast_params, fast_cfg, sag_series, base, work_dir):
        events = [ValidationEvent("outside", sag_series, Window(11.0, 12.0))]
        report = validate(fast_params, events, 0.05, fast_cfg, base)
        path = str(work_dir / "failed_report.csv")
        save_report_csv(report, path)
        back = load_report_csv(path)
        assert back.records[0].failed
        assert back.records[0].status == report.records[0].status
        assert back.verdict == RETUNE_REQUIRED

    def test_comparison_curves(self, fast_params, fast_cfg, sag_series, base, work_dir):
        path = str(work_dir / "curves" / "comparison_fit.csv")
        emit_comparison(fast_params, sag_series, path, fast_cfg, base)
        df = load_comparison(path)
        assert list(df.columns) == COMPARISON_COLUMNS
        assert len(df) == len(sag_series)
        assert np.array_equal(df["p_meas"].to_numpy(), sag_series.p)
        assert np.max(np.abs(df["p_hat"] - df["p_meas"])) < 1e-9


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
