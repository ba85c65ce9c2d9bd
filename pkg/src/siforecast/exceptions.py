"""Exception hierarchy shared across the package."""


class ContractError(ValueError):
    """An argument violated a documented precondition."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Misuse of the gradient tape (non-scalar root, replayed backward)."""


class SolverDivergenceError(FloatingPointError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at integration step {step}")


class TrainingDivergenceError(FloatingPointError):
    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")


class DataError(ValueError):
    """Input data is missing, malformed or unusable."""


class ParseError(DataError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ConfigError(ValueError):
    """Run configuration is malformed or contains unknown keys."""
