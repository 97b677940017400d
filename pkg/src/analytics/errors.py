from __future__ import annotations


class MeritError(Exception):
    """Base class for every error raised by the solver library."""


class ContractViolation(MeritError, ValueError):
    """Shape mismatch or violated precondition."""


class ConfigError(ContractViolation):
    """Hyperparameter or flag outside its admissible range."""


class InputParseError(MeritError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None, column: int | None = None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class InfeasibleInputError(MeritError):
    """A coefficient matrix that is not column-stochastic where one is required."""


class NonFiniteGradientError(MeritError):
    def __init__(self, column: int, sweep: int):
        self.column = column
        self.sweep = sweep
        super().__init__(f"non-finite gradient in column {column} during sweep {sweep}")


class NonConvergenceError(MeritError):
    """Raised only when a caller asks for strict convergence."""
