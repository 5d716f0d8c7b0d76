"""
Parameter catalogue and ParameterSet for the microgrid equivalent.

Defaults are the reference equivalent of a 13.8 kV industrial microgrid;
search bounds follow the typical-value ranges for SG/AVR/VSC parameters and
the load-power search box of the first estimation stage. Everything else
gets 50-150 % of its default.
"""

import math
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from core.exceptions import ConfigurationError, ParameterBoundError

INF = math.inf


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    default: float
    unit: str
    group: str
    hard: Tuple[float, float]          # physical bounds, inclusive
    search: Optional[Tuple[float, float]] = None
    rankable: bool = False
    used: bool = True
    positive: bool = False             # hard lower bound is exclusive

    def search_bounds(self) -> Tuple[float, float]:
        if self.search is not None:
            return self.search
        a, b = 0.5 * self.default, 1.5 * self.default
        return (min(a, b), max(a, b))

    def check(self, value: float):
        lo, hi = self.hard
        ok = math.isfinite(value) and lo <= value <= hi
        if self.positive and value <= 0:
            ok = False
        if not ok:
            raise ParameterBoundError(self.name, value, lo, hi)


def _spec(name, default, unit, group, hard=(-INF, INF), search=None,
          rankable=False, used=True, positive=False):
    return ParameterSpec(name, default, unit, group, hard, search, rankable, used, positive)


_POS = (0.0, INF)

CATALOGUE: Tuple[ParameterSpec, ...] = (
    # --- Synchronous generator (fourth order) ---
    _spec("x_d", 2.633, "pu", "sg", _POS, (0.5, 3.0), rankable=True, positive=True),
    _spec("x_dp", 0.282, "pu", "sg", _POS, (0.05, 0.5), rankable=True, positive=True),
    _spec("x_q", 1.600, "pu", "sg", _POS, (0.5, 3.0), rankable=True, positive=True),
    _spec("x_qp", 0.964, "pu", "sg", _POS, (0.3, 1.0), rankable=True, positive=True),
    _spec("T_do_p", 6.76, "s", "sg", _POS, (0.5, 8.0), rankable=True, positive=True),
    _spec("T_q_p", 0.914, "s", "sg", _POS, (0.5, 2.0), rankable=True, positive=True),
    _spec("H", 3.108, "s", "sg", _POS, (0.01, 5.0), rankable=True, positive=True),
    # subtransient fields: accepted, not used by the fourth-order model
    _spec("x_dpp", 0.2, "pu", "sg", _POS, rankable=True, used=False, positive=True),
    _spec("x_qpp", 0.2, "pu", "sg", _POS, rankable=True, used=False, positive=True),
    _spec("x_l", 0.15, "pu", "sg", _POS, rankable=True, used=False, positive=True),
    _spec("T_do_pp", 0.03, "s", "sg", _POS, rankable=True, used=False, positive=True),
    _spec("T_q_pp", 0.05, "s", "sg", _POS, rankable=True, used=False, positive=True),
    _spec("D", 2.0, "pu", "sg", _POS),
    _spec("S_sg", 8.8, "MVA", "sg", _POS),
    _spec("P_sg", 3.0, "MW", "sg"),
    _spec("V_ref_sg", 1.0073, "pu", "sg", _POS, positive=True),
    _spec("r_droop", 0.05, "pu", "sg", _POS, positive=True),
    _spec("T_gov", 0.5, "s", "sg", _POS, positive=True),
    # --- AVR ---
    _spec("K_a", 177.995, "pu", "avr", _POS, (50.0, 400.0), rankable=True, positive=True),
    _spec("T_a", 0.001, "s", "avr", _POS, (0.0001, 0.01), positive=True),
    _spec("efd_max", 6.0, "pu", "avr"),
    _spec("efd_min", -6.0, "pu", "avr"),
    # --- Voltage source converter ---
    _spec("S_vsc", 3.027, "MVA", "vsc", _POS, (2.4, 3.6), rankable=True),
    _spec("K_pvdc", 1.636, "pu", "vsc", _POS, (0.1, 2.0), rankable=True, positive=True),
    _spec("K_ivdc", 457.07, "1/s", "vsc", _POS, (20.0, 500.0), rankable=True, positive=True),
    _spec("V_dc_nom", 1.0, "pu", "vsc", _POS, positive=True),
    _spec("C_dc", 0.1, "s", "vsc", _POS, positive=True),
    _spec("P_source", 0.8, "pu", "vsc", _POS),
    _spec("I_max", 1.2, "pu", "vsc", _POS, positive=True),
    # --- ZIP static load (negative allowed: net export) ---
    _spec("P_z", 1.154, "MW", "zip", search=(1.0, 3.0), rankable=True),
    _spec("P_i", 1.512, "MW", "zip", search=(1.0, 3.0), rankable=True),
    _spec("P_p", 2.536, "MW", "zip", search=(1.0, 3.0), rankable=True),
    _spec("Q_z", 1.327, "MVar", "zip", search=(0.2, 2.0), rankable=True),
    _spec("Q_i", 1.517, "MVar", "zip", search=(0.2, 2.0), rankable=True),
    _spec("Q_p", 0.978, "MVar", "zip", search=(0.2, 2.0), rankable=True),
    _spec("V0", 1.0, "pu", "zip", _POS, positive=True),
    # --- Induction motor (third order) ---
    _spec("S_m", 1.152, "MVA", "im", _POS, (0.5, 1.5), rankable=True),
    _spec("H_m", 0.550, "s", "im", _POS, rankable=True, positive=True),
    _spec("X_m", 2.001, "pu", "im", _POS, rankable=True, positive=True),
    _spec("r_s", 0.01, "pu", "im", _POS, positive=True),
    _spec("x_s", 0.1, "pu", "im", _POS, positive=True),
    _spec("r_r", 0.01, "pu", "im", _POS, positive=True),
    _spec("x_r", 0.1, "pu", "im", _POS, positive=True),
    _spec("load_exponent", 2.0, "-", "im", _POS),
    _spec("T_load", 0.7, "pu", "im", _POS),
)

SPECS: Dict[str, ParameterSpec] = {s.name: s for s in CATALOGUE}
NAMES: Tuple[str, ...] = tuple(s.name for s in CATALOGUE)

# Parameters identified by the two-stage procedure
IDENTIFIED: Tuple[str, ...] = (
    "x_d", "x_q", "x_dp", "x_qp", "T_do_p", "T_q_p", "H",
    "K_a",
    "S_vsc", "K_ivdc", "K_pvdc",
    "P_p", "Q_p", "P_i", "Q_i", "P_z", "Q_z",
    "S_m", "H_m", "X_m",
)
STAGE1: Tuple[str, ...] = (
    "P_p", "Q_p", "P_i", "Q_i", "P_z", "Q_z", "S_m", "S_vsc", "x_d", "x_q", "T_do_p",
)
STAGE2: Tuple[str, ...] = tuple(n for n in IDENTIFIED if n not in STAGE1)
SG_NAMES: Tuple[str, ...] = tuple(s.name for s in CATALOGUE if s.group == "sg" and s.rankable)
RANKABLE: Tuple[str, ...] = tuple(s.name for s in CATALOGUE if s.rankable)


@dataclass(frozen=True)
class Parameter:
    name: str
    value: float
    unit: str
    lower: float
    upper: float
    free: bool = False


class ParameterSet:
    """
    Complete named parameter vector of the equivalent model.
    Immutable: every modifier returns a new set.
    """

    def __init__(self, records: Optional[Mapping[str, Parameter]] = None):
        base = {s.name: _default_record(s) for s in CATALOGUE}
        if records:
            for name, rec in records.items():
                if name not in SPECS:
                    raise ConfigurationError(f"Unknown parameter: {name}")
                base[name] = rec
        for rec in base.values():
            SPECS[rec.name].check(rec.value)
            if rec.lower > rec.upper:
                raise ConfigurationError(f"Bounds of {rec.name} are inverted: [{rec.lower}, {rec.upper}]")
            if rec.free:
                if not (math.isfinite(rec.lower) and math.isfinite(rec.upper)):
                    raise ConfigurationError(f"Free parameter {rec.name} needs finite bounds")
                if not rec.lower <= rec.value <= rec.upper:
                    raise ConfigurationError(
                        f"Free parameter {rec.name}={rec.value!r} outside [{rec.lower}, {rec.upper}]")
        self._records: Dict[str, Parameter] = base

    @classmethod
    def defaults(cls) -> "ParameterSet":
        return cls()

    def __getitem__(self, name: str) -> float:
        return self.record(name).value

    def __contains__(self, name: str) -> bool:
        return name in self._records

    def __iter__(self):
        return iter(self._records.values())

    def __eq__(self, other) -> bool:
        return isinstance(other, ParameterSet) and self._records == other._records

    def __repr__(self) -> str:
        free = ",".join(self.free_names())
        return f"ParameterSet({len(self._records)} params, free=[{free}])"

    def record(self, name: str) -> Parameter:
        try:
            return self._records[name]
        except KeyError:
            raise ConfigurationError(f"Unknown parameter: {name}") from None

    def values(self) -> Dict[str, float]:
        return {n: r.value for n, r in self._records.items()}

    def free_names(self) -> Tuple[str, ...]:
        return tuple(n for n, r in self._records.items() if r.free)

    def with_values(self, values: Mapping[str, float]) -> "ParameterSet":
        records = dict(self._records)
        for name, value in values.items():
            records[name] = replace(self.record(name), value=float(value))
        return ParameterSet(records)

    def with_bounds(self, bounds: Mapping[str, Tuple[float, float]]) -> "ParameterSet":
        records = dict(self._records)
        for name, (lo, hi) in bounds.items():
            records[name] = replace(self.record(name), lower=float(lo), upper=float(hi))
        return ParameterSet(records)

    def with_free(self, names: Iterable[str]) -> "ParameterSet":
        """Mark exactly `names` free; every other parameter becomes fixed."""
        names = set(names)
        unknown = names - set(self._records)
        if unknown:
            raise ConfigurationError(f"Unknown parameters: {sorted(unknown)}")
        return ParameterSet({n: replace(r, free=n in names) for n, r in self._records.items()})

    def vector(self, names: Iterable[str]) -> List[float]:
        return [self[n] for n in names]

    def bounds(self, names: Iterable[str]) -> List[Tuple[float, float]]:
        return [(self.record(n).lower, self.record(n).upper) for n in names]

    def around(self, names: Iterable[str], fraction: float) -> "ParameterSet":
        """Bounds of `names` set to value*(1 -/+ fraction)."""
        bounds = {}
        for n in names:
            v = self[n]
            a, b = v * (1.0 - fraction), v * (1.0 + fraction)
            bounds[n] = (min(a, b), max(a, b))
        return self.with_bounds(bounds)


def _default_record(spec: ParameterSpec) -> Parameter:
    lo, hi = spec.search_bounds()
    return Parameter(spec.name, spec.default, spec.unit, lo, hi, False)


def default_record(name: str) -> Parameter:
    return _default_record(SPECS[name])
