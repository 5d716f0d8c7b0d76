"""
Naming conventions and parsers for pipeline artifacts and CLI values.
Centralizes artifact filenames, event labels and the text forms of spans,
fault templates and validation events.
"""

import os
import re
from typing import Dict, Optional, Tuple

from core.exceptions import ConfigurationError
from services.playin_simulator import FaultTemplate
from utils.timeseries_io import Window

RANKING_PRE = "ranking_pre.csv"
RANKING = "ranking.csv"
FITTED_PARAMS = "fitted.params"
HISTORY = "history.csv"
REPORT = "report.csv"
FIT_EVENT = "fit"

# Text keys of the fault template form "t=10,dur=0.5,vsag=0.4"
_FAULT_KEYS = {
    "t": "t_fault",
    "dur": "duration",
    "vsag": "v_sag",
    "vpre": "v_pre",
    "tau": "tau_recovery",
    "fdev": "f_excursion",
    "tauf": "tau_f",
}


def get_artifact_path(out_dir: str, name: str) -> str:
    """Returns the absolute path of a pipeline artifact."""
    return os.path.abspath(os.path.join(out_dir, name))


def get_comparison_filename(event_label: str) -> str:
    """comparison_<event>.csv with the label reduced to filename-safe characters."""
    safe = re.sub(r"[^A-Za-z0-9_.-]+", "_", event_label).strip("_") or "event"
    return f"comparison_{safe}.csv"


def event_label_from_path(path: str) -> str:
    """ 'data/fault_11s.csv' -> 'fault_11s' """
    return os.path.splitext(os.path.basename(path))[0]


def parse_fault_template(text: str) -> FaultTemplate:
    """
    Parses 't=10,dur=0.5,vsag=0.4[,vpre=1,tau=0.2,fdev=0,tauf=0.5]'.
    t, dur and vsag are required.
    """
    values: Dict[str, float] = {}
    for item in str(text).split(","):
        if not item.strip():
            continue
        key, sep, value = item.partition("=")
        key = key.strip().lower()
        if not sep or key not in _FAULT_KEYS:
            raise ConfigurationError(f"Unknown fault field '{item.strip()}' (expected {sorted(_FAULT_KEYS)})")
        try:
            values[_FAULT_KEYS[key]] = float(value)
        except ValueError:
            raise ConfigurationError(f"Fault field '{key}' is not a number: '{value}'") from None
    missing = [k for k, v in _FAULT_KEYS.items() if v in ("t_fault", "duration", "v_sag") and v not in values]
    if missing:
        raise ConfigurationError(f"Fault template lacks {missing}")
    return FaultTemplate(**values)


def format_fault_template(template: FaultTemplate) -> str:
    reverse = {v: k for k, v in _FAULT_KEYS.items()}
    return ",".join(f"{reverse[name]}={getattr(template, name)!r}" for name in reverse)


def parse_event(text: str, base_dir: Optional[str] = None) -> Tuple[str, Window]:
    """
    Parses a validation event 'file.csv@t0:t1'.
    Relative paths are resolved against base_dir.
    """
    path, sep, window = str(text).rpartition("@")
    if not sep or not path.strip():
        raise ConfigurationError(f"Validation event must look like 'file.csv@t0:t1', got '{text}'")
    path = path.strip()
    if base_dir and not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    return path, Window.parse(window.strip())
