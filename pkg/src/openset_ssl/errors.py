class OpenSetError(Exception):
    """Base class for package errors."""


class ValidationError(OpenSetError, ValueError):
    """Bad input data or configuration."""


class ParseError(ValidationError):
    def __init__(self, message, line=None, record_id=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if record_id is not None:
            where.append(f"record {record_id!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.record_id = record_id


class DimensionMismatchError(ValidationError):
    pass


class DuplicateIdError(ValidationError):
    pass


class ZeroNormError(OpenSetError, ArithmeticError):
    """A vector with zero L2 norm reached a cosine computation."""


class NumericError(OpenSetError, ArithmeticError):
    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"layer {layer}: {message}")
        self.layer = layer


class TrainingError(OpenSetError, RuntimeError):
    pass


class DependencyError(OpenSetError, RuntimeError):
    """A pipeline stage ran before the stage that produces its inputs."""


class ContractError(ValidationError):
    """A documented precondition was violated by the caller."""
