"""Exception hierarchy shared by every ctxlab module."""


class CtxLabError(Exception):
    """Base class for all library errors."""


class ShapeError(CtxLabError, ValueError):
    """Operand dimensions are incompatible."""


class NumericError(CtxLabError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class DegenerateRowError(NumericError):
    """A softmax row has no unmasked entry."""


class EmptyInputError(CtxLabError, ValueError):
    pass


class ConfigError(CtxLabError, ValueError):
    pass


class UnsupportedCombinationError(ConfigError):
    """The requested positional encoding cannot run on the chosen backend."""


class OutOfBlocksError(CtxLabError, MemoryError):
    pass


class EmptyContextError(CtxLabError, ValueError):
    """Attention was requested over a cache holding no tokens."""


class InputError(CtxLabError, ValueError):
    pass


class DecodeError(CtxLabError, ValueError):
    pass


class CorpusError(CtxLabError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class WeightFormatError(CtxLabError, ValueError):
    """Base for weight-container load failures."""


class MalformedHeaderError(WeightFormatError):
    pass


class InconsistentWeightsError(WeightFormatError):
    pass


class TruncatedPayloadError(WeightFormatError):
    pass
