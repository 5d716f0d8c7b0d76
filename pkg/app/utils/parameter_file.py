"""
Parameter File Utilities
Flat `name = value` files with `#` comments, shared by parameter sets and
scenario files.

Parameter keys:
    x_d = 2.633          value
    x_d.lower = 0.5      search bound override
    x_d.upper = 3.0
    x_d.free = true      free flag
"""

import os
from typing import Dict, List, NamedTuple, Tuple

from core.exceptions import ParameterFileError
from core.logger import setup_logger
from services.parameters import CATALOGUE, SPECS, ParameterSet, default_record

logger = setup_logger(__name__)

_GROUP_TITLES = {
    "sg": "Synchronous generator",
    "avr": "AVR",
    "vsc": "Voltage source converter",
    "zip": "ZIP static load",
    "im": "Induction motor",
}
_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


class Declaration(NamedTuple):
    line: int
    key: str
    value: str


def read_declarations(path) -> List[Declaration]:
    """All `key = value` lines of a file, in order; repeated keys are kept."""
    if not os.path.exists(path):
        raise ParameterFileError(path, "file not found")
    declarations = []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterFileError(path, f"expected 'name = value', got '{line}'", line=lineno)
            key, value = line.split("=", 1)
            key, value = key.strip(), value.strip()
            if not key:
                raise ParameterFileError(path, "empty key", line=lineno)
            declarations.append(Declaration(lineno, key, value))
    return declarations


def parse_float(path, decl: Declaration) -> float:
    try:
        return float(decl.value)
    except ValueError:
        raise ParameterFileError(path, f"'{decl.key}' is not a number: '{decl.value}'",
                                 line=decl.line, key=decl.key) from None


def parse_bool(path, decl: Declaration) -> bool:
    value = decl.value.lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ParameterFileError(path, f"'{decl.key}' is not a boolean: '{decl.value}'",
                             line=decl.line, key=decl.key)


def load_parameter_set(path) -> ParameterSet:
    """
    Read a parameter file. Parameters not named keep their catalogue defaults.
    Raises ParameterFileError for syntax problems and unknown keys, and
    ParameterBoundError for values outside physical bounds.
    """
    values: Dict[str, float] = {}
    bounds: Dict[str, List[float]] = {}
    free: Dict[str, bool] = {}
    seen = set()

    for decl in read_declarations(path):
        if decl.key in seen:
            raise ParameterFileError(path, f"duplicate key '{decl.key}'", line=decl.line, key=decl.key)
        seen.add(decl.key)

        name, _, attr = decl.key.partition(".")
        if name not in SPECS or attr not in ("", "lower", "upper", "free"):
            raise ParameterFileError(path, f"unknown key '{decl.key}'", line=decl.line, key=decl.key)

        if attr == "":
            values[name] = parse_float(path, decl)
        elif attr == "free":
            free[name] = parse_bool(path, decl)
        else:
            rec = default_record(name)
            pair = bounds.setdefault(name, [rec.lower, rec.upper])
            pair[0 if attr == "lower" else 1] = parse_float(path, decl)

    for name, value in values.items():
        SPECS[name].check(value)

    ps = ParameterSet().with_values(values).with_bounds({n: tuple(b) for n, b in bounds.items()})
    if free:
        ps = ps.with_free(n for n, flag in free.items() if flag)
    logger.debug(f"[📁] Loaded parameter file {path}: {len(values)} values, {len(ps.free_names())} free")
    return ps


def format_parameter_set(ps: ParameterSet) -> str:
    lines = ["# Microgrid equivalent parameter set"]
    group = None
    for spec in CATALOGUE:
        if spec.group != group:
            group = spec.group
            lines.append("")
            lines.append(f"# --- {_GROUP_TITLES[group]} ---")
        rec = ps.record(spec.name)
        note = f"  # {spec.unit}" if spec.used else f"  # {spec.unit}, unused by the fourth-order model"
        lines.append(f"{spec.name} = {rec.value!r}{note}")
        default = default_record(spec.name)
        if rec.lower != default.lower:
            lines.append(f"{spec.name}.lower = {rec.lower!r}")
        if rec.upper != default.upper:
            lines.append(f"{spec.name}.upper = {rec.upper!r}")
        if rec.free:
            lines.append(f"{spec.name}.free = true")
    return "\n".join(lines) + "\n"


def save_parameter_set(ps: ParameterSet, path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_parameter_set(ps))
    logger.debug(f"[📁] Saved parameter set to {path}")


def split_list(value: str) -> Tuple[str, ...]:
    """'a, b ,c' -> ('a', 'b', 'c')"""
    return tuple(item.strip() for item in value.split(",") if item.strip())
