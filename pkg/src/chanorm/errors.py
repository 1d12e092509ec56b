"""Exception hierarchy shared by all modules."""


class ChanormError(Exception):
    """Base class for every error raised by this package."""


class ContractError(ChanormError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class ConfigError(ChanormError, ValueError):
    """A corpus, model, training or experiment configuration is invalid."""


class NumericalError(ChanormError, FloatingPointError):
    """NaN or Inf showed up where finite values are required."""


class InfeasibleAlignmentError(ContractError):
    """The target sequence cannot be aligned within the available frames."""


class CheckpointError(ChanormError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """Magic bytes or version do not match."""


class CheckpointTruncatedError(CheckpointError):
    """The file ended before all declared content was read."""


class CheckpointShapeError(CheckpointError):
    """Stored parameters do not fit the model they are loaded into."""
