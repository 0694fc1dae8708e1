"""Exception taxonomy shared by all tiltlab modules."""


class TiltLabError(Exception):
    """Base class for all tiltlab errors."""


class ConfigError(TiltLabError):
    """A configuration value is out of its legal range."""


class ContractError(TiltLabError):
    """A documented precondition was violated by the caller."""


class CapabilityError(TiltLabError):
    """An operation was requested that the object cannot provide
    (e.g. a gradient of a non-differentiable black-box reward)."""


class NumericError(TiltLabError):
    """A computation produced non-finite values or tripped an overflow guard."""


class ShapeError(TiltLabError):
    """Array dimensions do not line up."""


class CoverageError(TiltLabError):
    """A discretization grid does not cover enough probability mass."""


class TargetDegeneracyError(ContractError):
    """The requested conditional target carries essentially no mass."""
