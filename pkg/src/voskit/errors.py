"""Exception hierarchy shared by all voskit modules.

Each class carries the CLI exit code used when it escapes a subcommand.
"""


class VosError(Exception):
    exit_code = 1


class ShapeError(VosError, ValueError):
    exit_code = 2


class NumericError(VosError, ArithmeticError):
    exit_code = 1


class ConfigError(VosError, ValueError):
    exit_code = 2


class CapacityError(ConfigError):
    pass


class OrderingError(VosError, ValueError):
    exit_code = 2


class StateError(VosError, RuntimeError):
    exit_code = 1


class ContractError(VosError, RuntimeError):
    exit_code = 1


class TrackingLost(VosError):
    """Raised by the template tracker when no window matches the template."""

    exit_code = 1


class InputError(VosError):
    exit_code = 3


class FormatError(VosError, ValueError):
    exit_code = 4


class StageError(VosError):
    exit_code = 5

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class PayloadError(VosError, OSError):
    """Tensor file payload is shorter than its header declares."""

    exit_code = 4


class SpecError(ConfigError):
    """A synthetic clip description is not realisable (e.g. a shape leaves the frame)."""


class DomainError(VosError, ValueError):
    exit_code = 2
