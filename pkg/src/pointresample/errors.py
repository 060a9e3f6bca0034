"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input data violates a contract (non-finite coordinates, empty cloud, ...)."""


class InvalidArgumentError(ValueError):
    """An argument is out of its valid range (k > N, unknown kind, ...)."""


class NumericalFailureError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message, residual=float("nan"), step=None):
        self.residual = residual
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(f"{message} (residual={residual:.3e})")


class ParseError(ValueError):
    """Malformed point cloud / mesh / checkpoint file."""

    def __init__(self, message, line=None, offset=None):
        self.line = line
        self.offset = offset
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
