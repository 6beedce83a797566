"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
onto its stable contract: 1 usage/config, 2 numerical, 3 I/O.
"""

from __future__ import annotations


class DDFEMError(Exception):
    exit_code = 2


class ConfigError(DDFEMError, ValueError):
    exit_code = 1

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ResolutionError(ConfigError):
    pass


class LayoutError(ConfigError):
    pass


class NumericalError(DDFEMError):
    exit_code = 2


class SolverError(NumericalError):
    def __init__(self, message: str, iterations: int | None = None, residual: float | None = None):
        self.iterations = iterations
        self.residual = residual
        extra = []
        if iterations is not None:
            extra.append(f"iterations={iterations}")
        if residual is not None:
            extra.append(f"residual={residual:.3e}")
        if extra:
            message = f"{message} ({', '.join(extra)})"
        super().__init__(message)


class StabilityError(NumericalError):
    def __init__(self, message: str, step: int | None = None):
        self.step = step
        super().__init__(message)


class DivergenceError(StabilityError):
    pass


class DegenerateDataError(NumericalError):
    pass


class CondensationError(NumericalError):
    def __init__(self, message: str, element=None):
        self.element = element
        super().__init__(message)


class InfeasibleCouplingError(NumericalError):
    pass


class MetricError(NumericalError):
    pass


class ArchiveError(DDFEMError):
    exit_code = 3


class CorruptArchiveError(ArchiveError):
    pass


class UnsupportedVersionError(ArchiveError):
    pass


class CompatibilityError(DDFEMError):
    exit_code = 1


class MissingPrerequisiteError(DDFEMError):
    exit_code = 3

    def __init__(self, path, producer: str):
        self.path = path
        self.producer = producer
        super().__init__(f"missing prerequisite {path}; run `ddfem {producer}` first")


def with_context(exc: Exception, prefix: str) -> Exception:
    """Prefix an exception's message in place (keeps its type and attributes)."""
    exc.args = (f"{prefix}: {exc}",) + tuple(exc.args[1:])
    return exc
