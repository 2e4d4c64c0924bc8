"""Exception hierarchy shared by all fedsandbox modules."""


class FedSandboxError(Exception):
    pass


class ParseError(FedSandboxError):
    """Malformed input file. ``line`` is 1-based and counts the header."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(FedSandboxError):
    pass


class InsufficientDataError(FedSandboxError):
    pass


class ConfigurationError(FedSandboxError):
    pass


class ParameterError(FedSandboxError, ValueError):
    pass


class DomainError(FedSandboxError, ValueError):
    pass


class CalibrationError(FedSandboxError):
    pass


class ProtocolError(FedSandboxError):
    pass


class DegenerateDataError(FedSandboxError):
    pass


class NumericError(FedSandboxError, ArithmeticError):
    pass
