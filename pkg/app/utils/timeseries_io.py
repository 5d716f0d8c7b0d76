"""
PCC Time Series Utilities
Loads, preprocesses, windows and saves the (V, f, P, Q) records measured at
the point of common coupling.

CSV layout (UTF-8, LF):
    # units: t=s, v=pu, f=Hz, p=MW, q=MVar
    t,v,f,p,q
    9.0,1.0,60.0,5.2,3.1
"""

import math
import os
import re
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import signal

from core import config
from core.exceptions import CsvFormatError, ConfigurationError, WindowError
from core.logger import setup_logger

logger = setup_logger(__name__)

COLUMNS = ["t", "v", "f", "p", "q"]
UNITS_LINE = "# units: t=s, v=pu, f=Hz, p=MW, q=MVar"
SPACING_TOL = 1e-6        # relative to dt
RESAMPLE_TOL = 1e-9       # seconds

_UNIT_SCALE = {
    "p": {"mw": 1.0, "kw": 1e-3, "w": 1e-6},
    "q": {"mvar": 1.0, "kvar": 1e-3, "var": 1e-6},
}


@dataclass(frozen=True)
class BaseSystem:
    s_base: float   # MVA
    v_base: float   # kV
    f_nom: float    # Hz

    def __post_init__(self):
        for name in ("s_base", "v_base", "f_nom"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"BaseSystem.{name} must be strictly positive, got {value!r}")

    @classmethod
    def default(cls) -> "BaseSystem":
        s = config.settings
        return cls(s.s_base, s.v_base, s.f_nom)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PccTimeSeries:
    t0: float
    dt: float
    v_mag: np.ndarray   # pu
    freq: np.ndarray    # Hz
    p: np.ndarray       # MW, grid -> microgrid
    q: np.ndarray       # MVar

    def __post_init__(self):
        for name in ("v_mag", "freq", "p", "q"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = len(self.v_mag)
        if any(len(getattr(self, c)) != n for c in ("freq", "p", "q")):
            raise ValueError("PccTimeSeries channels must have identical length")
        if n < 2:
            raise ValueError("PccTimeSeries needs at least 2 samples")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be > 0, got {self.dt!r}")
        if np.any(self.v_mag < 0):
            raise ValueError("Voltage magnitudes must be >= 0")
        if np.any(self.freq <= 0):
            raise ValueError("Frequencies must be > 0")

    def __len__(self) -> int:
        return len(self.v_mag)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PccTimeSeries):
            return NotImplemented
        return (self.t0 == other.t0 and self.dt == other.dt
                and all(np.array_equal(getattr(self, c), getattr(other, c))
                        for c in ("v_mag", "freq", "p", "q")))

    @property
    def times(self) -> np.ndarray:
        """Shared sample grid t0 + k*dt."""
        return self.t0 + np.arange(len(self)) * self.dt

    @property
    def t_end(self) -> float:
        return self.t0 + (len(self) - 1) * self.dt

    @property
    def span(self) -> "Window":
        return Window(self.t0, self.t_end)

    def with_power(self, p, q) -> "PccTimeSeries":
        return replace(self, p=p, q=q)


@dataclass(frozen=True)
class Window:
    t_start: float
    t_end: float

    def __post_init__(self):
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)):
            raise WindowError(f"Window bounds must be finite: {self.t_start}:{self.t_end}")
        if not self.t_start < self.t_end:
            raise WindowError(f"Window start must precede end: {self.t_start}:{self.t_end}")

    @classmethod
    def parse(cls, text: str) -> "Window":
        """'t0:t1' -> Window."""
        parts = str(text).split(":")
        if len(parts) != 2:
            raise WindowError(f"Window must look like 't0:t1', got '{text}'")
        try:
            return cls(float(parts[0]), float(parts[1]))
        except ValueError:
            raise WindowError(f"Window bounds are not numbers: '{text}'") from None

    @property
    def label(self) -> str:
        return f"{self.t_start:g}:{self.t_end:g}"

    def precedes(self, other: "Window") -> bool:
        return self.t_end < other.t_start


@dataclass(frozen=True)
class PreprocessConfig:
    cutoff_hz: Optional[float] = None
    resample_dt: Optional[float] = None

    def __post_init__(self):
        if self.cutoff_hz is not None and not self.cutoff_hz > 0:
            raise ConfigurationError(f"cutoff_hz must be > 0, got {self.cutoff_hz!r}")
        if self.resample_dt is not None and not self.resample_dt > 0:
            raise ConfigurationError(f"resample_dt must be > 0, got {self.resample_dt!r}")


# =============================================================================
# CSV
# =============================================================================

def _parse_units(lines) -> Dict[str, str]:
    units = {}
    for line in lines:
        stripped = line.strip()
        if not stripped.startswith("#"):
            continue
        match = re.match(r"#\s*units\s*:(.*)", stripped, re.IGNORECASE)
        if not match:
            continue
        for item in match.group(1).split(","):
            if "=" in item:
                key, unit = item.split("=", 1)
                units[key.strip().lower()] = unit.strip().lower()
    return units


def load_pcc_csv(path, base: Optional[BaseSystem] = None) -> PccTimeSeries:
    """
    Read a PCC CSV. Rows are reported 1-based over data rows.
    A units comment may declare v=kV, p=kW or q=kVar; values are converted
    to pu / MW / MVar.
    """
    base = base or BaseSystem.default()
    if not os.path.exists(path):
        raise CsvFormatError(path, "file not found")

    with open(path, encoding="utf-8") as f:
        units = _parse_units(f)

    try:
        df = pd.read_csv(path, comment="#", dtype=str, skip_blank_lines=True,
                         skipinitialspace=True, keep_default_na=False)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise CsvFormatError(path, f"unreadable CSV: {e}") from None
    df.columns = [str(c).strip().lower() for c in df.columns]

    for col in COLUMNS:
        if col not in df.columns:
            raise CsvFormatError(path, "missing column", column=col)
    if len(df) < 2:
        raise CsvFormatError(path, f"need at least 2 data rows, found {len(df)}")

    data = {}
    for col in COLUMNS:
        raw = df[col].str.strip()
        values = pd.to_numeric(raw, errors="coerce")
        bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=float, na_value=np.nan))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise CsvFormatError(path, f"unparseable value '{raw.iloc[row]}'", row=row + 1, column=col)
        data[col] = values.to_numpy(dtype=float)

    t = data["t"]
    step0 = t[1] - t[0]
    if not step0 > 0:
        raise CsvFormatError(path, "time must be strictly increasing", row=2, column="t")
    steps = np.diff(t)
    off = np.flatnonzero(np.abs(steps - step0) > SPACING_TOL * step0)
    if off.size:
        raise CsvFormatError(path, f"non-uniform spacing (expected dt={step0:g})", row=int(off[0]) + 2, column="t")
    dt = float(step0)

    v_unit = units.get("v", "pu")
    if v_unit == "kv":
        data["v"] = data["v"] / base.v_base
    elif v_unit != "pu":
        raise CsvFormatError(path, f"unsupported voltage unit '{v_unit}'", column="v")
    for col in ("p", "q"):
        unit = units.get(col, "mw" if col == "p" else "mvar")
        scale = _UNIT_SCALE[col].get(unit)
        if scale is None:
            raise CsvFormatError(path, f"unsupported unit '{unit}'", column=col)
        if scale != 1.0:
            data[col] = data[col] * scale

    neg = np.flatnonzero(data["v"] < 0)
    if neg.size:
        raise CsvFormatError(path, "voltage magnitude must be >= 0", row=int(neg[0]) + 1, column="v")
    nonpos = np.flatnonzero(data["f"] <= 0)
    if nonpos.size:
        raise CsvFormatError(path, "frequency must be > 0", row=int(nonpos[0]) + 1, column="f")

    series = PccTimeSeries(float(t[0]), dt, data["v"], data["f"], data["p"], data["q"])
    logger.debug(f"[📁] Loaded {len(series)} samples from {path} (dt={dt:g} s)")
    return series


def save_pcc_csv(series: PccTimeSeries, path):
    """Write a PCC CSV in pu / Hz / MW / MVar with round-trip float precision."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        write_pcc_csv(series, f)
    logger.debug(f"[📁] Saved {len(series)} samples to {path}")


def write_pcc_csv(series: PccTimeSeries, stream):
    df = pd.DataFrame({
        "t": series.times,
        "v": series.v_mag,
        "f": series.freq,
        "p": series.p,
        "q": series.q,
    }, columns=COLUMNS)
    stream.write(UNITS_LINE + "\n")
    df.to_csv(stream, index=False, lineterminator="\n", float_format=lambda x: repr(float(x)))


# =============================================================================
# Preprocessing and windows
# =============================================================================

def lowpass_coefficients(cutoff_hz: float, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """First-order low-pass wc/(s+wc), bilinear without prewarping."""
    wc = 2.0 * np.pi * cutoff_hz
    return signal.bilinear([wc], [1.0, wc], fs=1.0 / dt)


def _lowpass(x: np.ndarray, b, a) -> np.ndarray:
    zi = signal.lfilter_zi(b, a) * x[0]
    y, _ = signal.lfilter(b, a, x, zi=zi)
    return y


def preprocess(series: PccTimeSeries, cfg: PreprocessConfig) -> PccTimeSeries:
    if cfg.cutoff_hz is None and cfg.resample_dt is None:
        return series

    channels = {c: np.asarray(getattr(series, c)) for c in ("v_mag", "freq", "p", "q")}
    if cfg.cutoff_hz is not None:
        b, a = lowpass_coefficients(cfg.cutoff_hz, series.dt)
        channels = {c: _lowpass(x, b, a) for c, x in channels.items()}

    dt = series.dt
    if cfg.resample_dt is not None:
        if cfg.resample_dt < series.dt - RESAMPLE_TOL:
            raise ConfigurationError(
                f"resample_dt={cfg.resample_dt:g} is finer than the sampling interval {series.dt:g}")
        factor = int(round(cfg.resample_dt / series.dt))
        if abs(factor * series.dt - cfg.resample_dt) > RESAMPLE_TOL:
            raise ConfigurationError(
                f"resample_dt={cfg.resample_dt:g} is not an integer multiple of dt={series.dt:g}")
        channels = {c: x[::factor] for c, x in channels.items()}
        dt = series.dt * factor

    return PccTimeSeries(series.t0, dt, channels["v_mag"], channels["freq"], channels["p"], channels["q"])


def window_indices(series: PccTimeSeries, w: Window) -> Tuple[int, int]:
    """Inclusive sample index range [lo, hi] covered by w."""
    tol = SPACING_TOL * series.dt
    if w.t_start < series.t0 - tol or w.t_end > series.t_end + tol:
        raise WindowError(
            f"Window {w.label} outside series span {series.t0:g}:{series.t_end:g}")
    lo = math.ceil((w.t_start - series.t0) / series.dt - SPACING_TOL)
    hi = math.floor((w.t_end - series.t0) / series.dt + SPACING_TOL)
    lo, hi = max(lo, 0), min(hi, len(series) - 1)
    if lo > hi:
        raise WindowError(f"Window {w.label} contains no samples")
    return lo, hi


def window_slice(series: PccTimeSeries, w: Window) -> slice:
    lo, hi = window_indices(series, w)
    return slice(lo, hi + 1)


def extract_window(series: PccTimeSeries, w: Window) -> PccTimeSeries:
    lo, hi = window_indices(series, w)
    if hi - lo + 1 < 2:
        raise WindowError(f"Window {w.label} holds a single sample; a series needs at least 2")
    if lo == 0 and hi == len(series) - 1:
        return series
    sl = slice(lo, hi + 1)
    return PccTimeSeries(series.t0 + lo * series.dt, series.dt,
                         series.v_mag[sl], series.freq[sl], series.p[sl], series.q[sl])
