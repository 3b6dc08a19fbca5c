"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid or inconsistent problem / solver / experiment configuration."""


class DomainError(ValueError):
    """A point lies outside the domain an operation is defined on."""


class ParseError(ValueError):
    """Malformed input file; carries the offending 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(ArithmeticError):
    """A solver produced a non-finite iterate."""

    def __init__(self, message, iteration=None, diagnostics=None):
        self.iteration = iteration
        self.diagnostics = diagnostics or {}
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class ConvergenceError(RuntimeError):
    """A deterministic sub-solver hit its iteration cap before its tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)
