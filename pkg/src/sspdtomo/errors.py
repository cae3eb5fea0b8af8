"""Exception types raised across the package."""


class SspdTomoError(Exception):
    """Base class for all package errors."""


class DomainError(SspdTomoError, ValueError):
    """An argument lies outside its mathematical domain."""


class DimensionError(SspdTomoError, ValueError):
    """Vectors or matrices have incompatible shapes."""


class TruncationError(SspdTomoError, ValueError):
    """The Fock-space truncation is too small for the requested object."""


class UndefinedStatisticError(SspdTomoError, ValueError):
    pass


class ValidationError(SspdTomoError, ValueError):
    """A data object violates its invariants."""


class ExtrapolationError(SspdTomoError, ValueError):
    pass


class UnderdeterminedError(SspdTomoError, ValueError):
    pass


class DegenerateDataError(SspdTomoError, ValueError):
    pass


class SupportMismatchError(SspdTomoError, ValueError):
    """The current state assigns zero probability to an observed outcome."""


class FitError(SspdTomoError):
    """A per-setting fit failed; carries the setting index."""

    def __init__(self, index, cause):
        super().__init__(f"setting {index}: {cause}")
        self.index = index
        self.cause = cause


class ParseError(SspdTomoError, ValueError):
    pass


class UnsupportedVersionError(SspdTomoError, ValueError):
    pass
