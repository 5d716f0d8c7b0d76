"""
Exception hierarchy for the microgrid equivalent toolkit.
Every error raised on purpose derives from EquivalentModelError so the CLI
can report it and exit with status 1.
"""


class EquivalentModelError(Exception):
    """Base class for all domain errors."""


class ConfigurationError(EquivalentModelError):
    pass


class CsvFormatError(EquivalentModelError):
    """Malformed PCC CSV; row is 1-based over data rows, column is the header name."""

    def __init__(self, path, message, row=None, column=None):
        self.path = str(path)
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        location = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{self.path}{location}: {message}")


class ParameterFileError(EquivalentModelError):
    def __init__(self, path, message, line=None, key=None):
        self.path = str(path)
        self.line = line
        self.key = key
        location = f" line {line}" if line is not None else ""
        super().__init__(f"{self.path}{location}: {message}")


class ParameterBoundError(EquivalentModelError):
    def __init__(self, name, value, lower, upper):
        self.name = name
        self.value = value
        self.lower = lower
        self.upper = upper
        super().__init__(f"Parameter {name}={value!r} outside physical bounds [{lower}, {upper}]")


class WindowError(EquivalentModelError):
    pass


class WindowOrderError(WindowError):
    pass


class NoEquilibriumError(EquivalentModelError):
    def __init__(self, component, message):
        self.component = component
        super().__init__(f"No equilibrium for {component}: {message}")


class SimulationDivergedError(EquivalentModelError):
    def __init__(self, time):
        self.time = time
        super().__init__(f"Simulation diverged at t={time:.6f} s")


class SensitivityError(EquivalentModelError):
    def __init__(self, param, sign, cause):
        self.param = param
        self.sign = sign
        super().__init__(f"Simulation failed for {param} perturbed {sign}: {cause}")


class DegenerateWindowError(EquivalentModelError):
    pass


class ObjectiveError(EquivalentModelError):
    pass


class LengthMismatchError(EquivalentModelError, ValueError):
    pass


class PipelineStageError(EquivalentModelError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"Stage '{stage}' failed: {cause}")
