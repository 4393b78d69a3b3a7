"""Exception hierarchy shared by all polywalk modules."""


class PolywalkError(Exception):
    """Base class for every error raised by polywalk."""


class DimensionMismatch(PolywalkError, ValueError):
    pass


class RankDeficient(PolywalkError, ValueError):
    pass


class EmptyInterior(PolywalkError, ValueError):
    pass


class BadParams(PolywalkError, ValueError):
    pass


class UnboundedDirection(PolywalkError):
    pass


class DegeneratePair(PolywalkError, ValueError):
    pass


class NoConvergence(PolywalkError, RuntimeError):
    pass


class NotInterior(PolywalkError, ValueError):
    pass


class FactorizationFailure(PolywalkError, ArithmeticError):
    pass


class SingularSystem(PolywalkError, ArithmeticError):
    pass


class NoMove(PolywalkError, RuntimeError):
    pass


class RejectionStall(PolywalkError, RuntimeError):
    pass


class TooFewSamples(PolywalkError, ValueError):
    pass


class DegenerateInput(PolywalkError, ValueError):
    pass


class ConfigError(PolywalkError, ValueError):
    pass
