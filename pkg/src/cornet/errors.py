"""Exception hierarchy shared by all modules."""


class CornetError(Exception):
    """Base class for errors raised by this package."""


class InputShapeError(CornetError, ValueError):
    pass


class NumericError(CornetError, FloatingPointError):
    """Non-finite values or divergence during a numerical routine."""


class FitError(CornetError):
    """An estimator could not be fitted on the data it was given."""


class CalibrationError(CornetError):
    pass


class ParseError(CornetError, ValueError):
    pass


class ProtocolError(CornetError):
    """The confounding protocol produced an unusable split."""


class AugmentationError(CornetError, ValueError):
    pass


class ProbeError(CornetError, ValueError):
    pass


class ConfigError(CornetError, ValueError):
    pass
