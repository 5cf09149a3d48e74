"""Exception hierarchy shared by every irisim module."""


class IrisError(Exception):
    """Base class for all irisim errors."""


class DomainError(IrisError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class CurveRangeError(DomainError):
    """Evaluation requested outside a spectral curve's sampled span."""


class ValidationError(IrisError, ValueError):
    """A structured input (region plan, config, curve file) is invalid."""


class BoundsError(ValidationError):
    """A coordinate falls outside the die."""


class ParseError(IrisError, ValueError):
    """A file could not be decoded."""


class UnitError(IrisError, ValueError):
    """Two images disagree on dimensions or pixel pitch."""


class ConfigError(IrisError, ValueError):
    """Parameters are individually valid but inconsistent with each other."""


class CoverageError(IrisError, ValueError):
    """Registration overlap is too small to be trusted."""


class DegenerateInputError(IrisError, ValueError):
    """Input carries no information (for example a constant image)."""


class StitchQualityError(IrisError):
    """A pairwise tile registration scored below the acceptance floor."""

    def __init__(self, message, pair=None, score=None):
        super().__init__(message)
        self.pair = pair
        self.score = score
