"""Exception types raised across the package.

Everything derives from :class:`ModalTransferError`, itself a ``ValueError``,
so callers that only care about bad inputs can catch ``ValueError``.
"""


class ModalTransferError(ValueError):
    """Base class for all package errors."""


class InvalidSpecError(ModalTransferError):
    """A structure description has non-physical values."""


class NumericalError(ModalTransferError):
    """An eigensolver failed or missed its accuracy target."""


class DegenerateDampingError(NumericalError):
    """A mode is critically or over-damped, so it has no damped frequency."""


class InvalidConfigError(ModalTransferError):
    pass


class InvalidDamageError(ModalTransferError):
    pass


class InvalidCrackError(ModalTransferError):
    pass


class UndefinedMACError(ModalTransferError):
    """MAC requested for a zero vector."""


class IncompatibleSensorsError(ModalTransferError):
    """Mode shapes were measured at a different number of locations."""


class InvalidPairingError(ModalTransferError):
    pass


class DegenerateScaleError(ModalTransferError):
    """The median heuristic produced a zero length scale."""


class InvalidInputError(ModalTransferError):
    pass


class MissingClassError(ModalTransferError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"classes missing from one domain: {self.missing}")


class DegenerateFeatureError(ModalTransferError):
    """A feature has zero variance in the normal-condition data."""


class RankError(ModalTransferError):
    pass


class ShapeError(ModalTransferError):
    pass


class IllConditionedError(NumericalError):
    pass


class InfeasibleCandidateError(ModalTransferError):
    """Two selected source modes map onto the same target mode."""


class NoFeasibleSubsetError(ModalTransferError):
    pass


class UndefinedCorrelationError(ModalTransferError):
    pass


class WindowError(ModalTransferError):
    """A peak window runs off the frequency grid or overlaps another."""


class ParseError(ModalTransferError):
    def __init__(self, message, *, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class StudyFailedError(ModalTransferError):
    """Too many tasks failed for the study to be trusted."""
