"""
Fit quality of the equivalent: mean-squared error of P and Q in per-unit on
the fitting window and on held-out disturbances, the validated /
retune_required verdict, and comparison curves for plotting.
"""

import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core import config
from core.exceptions import EquivalentModelError, LengthMismatchError
from core.logger import setup_logger
from services.parameters import ParameterSet
from services.playin_simulator import SimConfig, simulate_batch, simulate_playin
from utils.timeseries_io import BaseSystem, PccTimeSeries, Window, extract_window, window_slice

logger = setup_logger(__name__)

VALIDATED = "validated"
RETUNE_REQUIRED = "retune_required"
REPORT_COLUMNS = ["event", "window", "mse_p", "mse_q", "mse_total", "status"]
COMPARISON_COLUMNS = ["t", "p_meas", "p_hat", "q_meas", "q_hat"]


def mse(y, y_hat) -> float:
    """(1/N) sum (y_k - y_hat_k)^2"""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise LengthMismatchError(f"Sequences differ in length: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise LengthMismatchError("Sequences are empty")
    diff = y - y_hat
    return float(np.mean(diff * diff))


def series_through(series: PccTimeSeries, window: Window) -> PccTimeSeries:
    """The part of the series a window needs simulated: from its start to the window's end."""
    if window.t_end >= series.t_end:
        return series
    return extract_window(series, Window(series.t0, window.t_end))


def output_error(measured: PccTimeSeries, p_hat, q_hat, window: Window,
                 s_base: float) -> Tuple[float, float]:
    """(mse_p, mse_q) in pu^2 on the window samples."""
    sl = window_slice(measured, window)
    mse_p = mse(np.asarray(measured.p[sl]) / s_base, np.asarray(p_hat[sl]) / s_base)
    mse_q = mse(np.asarray(measured.q[sl]) / s_base, np.asarray(q_hat[sl]) / s_base)
    return mse_p, mse_q


@dataclass(frozen=True)
class ValidationEvent:
    label: str
    series: PccTimeSeries
    window: Window


@dataclass(frozen=True)
class EventRecord:
    event_label: str
    window: Window
    mse_p: float
    mse_q: float
    mse_total: float
    status: str = "ok"

    @property
    def failed(self) -> bool:
        return self.status != "ok"


@dataclass(frozen=True)
class ValidationReport:
    records: Tuple[EventRecord, ...]
    threshold: float
    verdict: str
    worst_event: Optional[str] = None

    @property
    def validated(self) -> bool:
        return self.verdict == VALIDATED


def _as_events(events) -> List[ValidationEvent]:
    out = []
    for i, ev in enumerate(events):
        if isinstance(ev, ValidationEvent):
            out.append(ev)
        else:
            series, window = ev
            out.append(ValidationEvent(f"event{i + 1}", series, window))
    return out


def validate(fitted: ParameterSet, events: Sequence, threshold: Optional[float] = None,
             cfg: Optional[SimConfig] = None, base: Optional[BaseSystem] = None) -> ValidationReport:
    """
    Simulate the fitted equivalent on every event and compare on its window.
    Events are ValidationEvent or (series, window) pairs. A failing event is
    recorded and forces retune_required; the other events still run.
    """
    threshold = config.settings.threshold if threshold is None else threshold
    base = base or BaseSystem.default()
    records = []
    for ev in _as_events(events):
        try:
            sl_series = series_through(ev.series, ev.window)
            window_slice(sl_series, ev.window)
            result = simulate_batch([fitted], sl_series, cfg, base)
            if result.failed[0]:
                raise result.errors[0]
            mse_p, mse_q = output_error(sl_series, result.p_hat[0], result.q_hat[0], ev.window, base.s_base)
            record = EventRecord(ev.label, ev.window, mse_p, mse_q, mse_p + mse_q)
            logger.info(f"[📊] {ev.label} {ev.window.label}: mse_p={mse_p:.4e} mse_q={mse_q:.4e} "
                        f"total={record.mse_total:.4e}")
        except EquivalentModelError as e:
            record = EventRecord(ev.label, ev.window, float("nan"), float("nan"), float("nan"), f"failed: {e}")
            logger.error(f"[❌] {ev.label}: {e}")
        records.append(record)

    failed = [r for r in records if r.failed]
    scored = [r for r in records if not r.failed]
    worst = None
    if failed:
        worst = failed[0].event_label
    elif scored:
        worst = max(scored, key=lambda r: r.mse_total).event_label
    ok = bool(records) and not failed and all(r.mse_total <= threshold for r in scored)
    verdict = VALIDATED if ok else RETUNE_REQUIRED
    if ok:
        logger.info(f"[✓] Equivalent validated on {len(records)} event(s) at threshold {threshold:g}")
    else:
        logger.warning(f"[⚠] Retune required; worst event: {worst}")
    return ValidationReport(tuple(records), threshold, verdict, worst)


def emit_comparison(fitted: ParameterSet, event: PccTimeSeries, out_path,
                    cfg: Optional[SimConfig] = None, base: Optional[BaseSystem] = None) -> str:
    """Write t,p_meas,p_hat,q_meas,q_hat for every event sample."""
    out = simulate_playin(fitted, event, cfg, base)
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    df = pd.DataFrame({
        "t": event.times,
        "p_meas": event.p,
        "p_hat": out.p_hat,
        "q_meas": event.q,
        "q_hat": out.q_hat,
    }, columns=COMPARISON_COLUMNS)
    df.to_csv(out_path, index=False, lineterminator="\n", float_format=lambda x: repr(float(x)))
    logger.info(f"[📁] Comparison curves written to {out_path}")
    return str(out_path)


def load_comparison(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def save_report_csv(report: ValidationReport, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df = pd.DataFrame([(r.event_label, r.window.label, r.mse_p, r.mse_q, r.mse_total, r.status)
                       for r in report.records], columns=REPORT_COLUMNS)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# threshold: {report.threshold!r}, verdict: {report.verdict}\n")
        df.to_csv(f, index=False, lineterminator="\n", float_format=lambda x: repr(float(x)))


def load_report_csv(path) -> ValidationReport:
    threshold, verdict = config.settings.threshold, None
    with open(path, encoding="utf-8") as f:
        first = f.readline().strip()
    if first.startswith("#"):
        for item in first.lstrip("#").split(","):
            key, _, value = item.partition(":")
            if key.strip() == "threshold":
                threshold = float(value)
            elif key.strip() == "verdict":
                verdict = value.strip()
    df = pd.read_csv(path, comment="#", float_precision="round_trip", keep_default_na=False,
                     dtype={"event": str, "window": str, "status": str})
    records = tuple(EventRecord(r.event, Window.parse(r.window), float(r.mse_p), float(r.mse_q),
                                float(r.mse_total), r.status) for r in df.itertuples(index=False))
    if verdict is None:
        ok = records and all(not r.failed and r.mse_total <= threshold for r in records)
        verdict = VALIDATED if ok else RETUNE_REQUIRED
    return ValidationReport(records, threshold, verdict)
