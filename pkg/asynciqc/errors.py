"""Exception types raised across the package."""


class AsyncIQCError(Exception):
    pass


class PreconditionError(AsyncIQCError, ValueError):
    pass


class NumericFailureError(AsyncIQCError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class PoleOnAxisError(AsyncIQCError):
    pass


class NominalInstabilityError(AsyncIQCError):
    pass


class AlgebraicLoopError(PreconditionError):
    pass


class DegenerateMultiplierError(PreconditionError):
    pass


class InfeasibleModeError(AsyncIQCError):
    pass


class NoCertificateError(AsyncIQCError):
    pass


class DegreeOverflowError(AsyncIQCError):
    pass


class SystemFileError(AsyncIQCError):
    def __init__(self, message: str, field: str = "", line: int = 0):
        where = []
        if line:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.field = field
        self.line = line
