"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes (see ``fisher_plane.cli``).
"""


class FisherPlaneError(Exception):
    """Base class for every error raised by this package."""


class ContractError(FisherPlaneError, ValueError):
    """A precondition on arguments was violated."""


class ShapeError(ContractError):
    pass


class NumericError(FisherPlaneError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""


class ConfigError(ContractError):
    pass


class UnsupportedLikelihoodError(ConfigError):
    pass


class ParseError(FisherPlaneError, OSError):
    pass


class CheckpointError(FisherPlaneError, OSError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass
