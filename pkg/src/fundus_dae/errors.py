"""Exception types shared across the package.

Each carries the CLI exit code it maps to (2 validation, 3 I/O, 4 numeric).
"""


class FundusDAEError(Exception):
    exit_code = 1


class ValidationError(FundusDAEError, ValueError):
    exit_code = 2


class EmptyFOVError(ValidationError):
    pass


class PlacementError(ValidationError):
    pass


class GenerationError(FundusDAEError):
    exit_code = 2


class CheckpointError(FundusDAEError):
    exit_code = 3


class IngestionError(FundusDAEError, OSError):
    exit_code = 3


class NumericAbort(FundusDAEError, ArithmeticError):
    exit_code = 4
