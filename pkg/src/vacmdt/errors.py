"""Exception hierarchy shared by all vacmdt modules."""


class VacmdtError(Exception):
    """Base class for every error raised by this package."""


class DomainError(VacmdtError, ValueError):
    """An argument lies outside the physical or mathematical domain."""


class IntegrationDiverged(VacmdtError):
    def __init__(self, node: str, time: float | None = None):
        self.node = node
        self.time = time
        where = f" at t={time:.6g} s" if time is not None else ""
        super().__init__(f"integration diverged in node {node!r}{where}")


class GraphParseError(VacmdtError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)


class GraphValidationError(VacmdtError):
    def __init__(self, violations):
        self.violations = list(violations)
        text = "; ".join(f"{v.code}: {v.message}" for v in self.violations)
        super().__init__(f"invalid system graph: {text}")


class AssemblyError(VacmdtError):
    pass


class UnstableOutcome(VacmdtError):
    def __init__(self, state: int, inputs: tuple, settle_time: float):
        self.state = state
        self.inputs = inputs
        super().__init__(
            f"outputs did not settle from state {state} under inputs {inputs} "
            f"within {settle_time} s; increase settle_time"
        )


class BudgetExceeded(VacmdtError):
    def __init__(self, max_states: int, partial):
        self.partial = partial
        super().__init__(f"state budget exceeded: more than {max_states} states discovered")


class ConsistencyError(VacmdtError):
    """Two recorded states are indistinguishable under the configured tolerance."""


class SynthesisError(VacmdtError):
    pass


class UnknownInput(VacmdtError):
    def __init__(self, inputs: tuple, state: int):
        self.inputs = inputs
        self.state = state
        super().__init__(f"input vector {inputs} is outside the discovered alphabet (state {state})")


class SchemaError(VacmdtError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path or '/'}: {message}")


class VersionMismatch(VacmdtError):
    pass


class TraceFormatError(VacmdtError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(message if row is None else f"row {row}: {message}")


class ComparisonError(VacmdtError):
    pass


class BenchmarkError(VacmdtError):
    def __init__(self, level: str, cause: Exception):
        self.level = level
        self.cause = cause
        super().__init__(f"benchmark aborted at {level}: {cause}")


class ConfigError(VacmdtError):
    pass


class NotSettled(VacmdtError):
    """A transition trajectory is still outside its tolerance band at the end."""
