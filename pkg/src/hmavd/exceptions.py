"""Exception hierarchy shared by every hmavd module."""


class HmavdError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(HmavdError, ValueError):
    pass


class ZeroRowNorm(HmavdError, ValueError):
    pass


class NonFiniteInput(HmavdError, ValueError):
    pass


class GraphNotRecorded(HmavdError, RuntimeError):
    pass


class UnknownModalityAttribution(HmavdError, KeyError):
    pass


class StepOutOfRange(HmavdError, ValueError):
    pass


class NonFiniteGradient(HmavdError, FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


class NonFiniteLoss(HmavdError, FloatingPointError):
    def __init__(self, epoch, step, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.value = value


class InvalidConfig(HmavdError, ValueError):
    pass


class OnsetOutOfBounds(HmavdError, IndexError):
    pass


class NonIntegerFactor(HmavdError, ValueError):
    pass


class SingularCovariance(HmavdError, ValueError):
    pass


class IndivisibleTrialCount(HmavdError, ValueError):
    pass


class MissingModality(HmavdError, ValueError):
    pass


class KExceedsClasses(HmavdError, ValueError):
    pass


class DimensionMismatch(HmavdError, ValueError):
    pass


class MalformedCsv(HmavdError, ValueError):
    pass


class LengthMismatch(HmavdError, ValueError):
    pass
