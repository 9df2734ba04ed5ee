class AGConvError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(AGConvError, ValueError):
    pass


class ContractError(AGConvError, ValueError):
    pass


class NumericError(AGConvError, ArithmeticError):
    pass


class SizeError(AGConvError, ValueError):
    """A neighborhood, sample or pooling size exceeds what the input allows."""


class ConfigError(AGConvError, ValueError):
    pass


class LayerConfigError(DimensionError):
    pass


class InputError(AGConvError, ValueError):
    pass


class ParseError(AGConvError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class FormatError(ParseError):
    pass


class DegenerateCloudError(AGConvError, ValueError):
    pass


class CheckpointError(AGConvError, ValueError):
    pass


class MagicMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CheckpointDimensionError(CheckpointError, DimensionError):
    pass


class TrainingDivergedError(NumericError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"loss became NaN at step {step}")
