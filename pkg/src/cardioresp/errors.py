"""Exception hierarchy. Every error raised by the pipeline derives from
:class:`CardiorespError` so callers can catch one type."""


class CardiorespError(ValueError):
    pass


# signals
class MissingChannel(CardiorespError):
    pass


class NonUniformRate(CardiorespError):
    pass


class NonFiniteSample(CardiorespError):
    pass


class EpochOutOfRange(CardiorespError):
    pass


class ShortEttCpap(CardiorespError):
    pass


class UpsamplingRequested(CardiorespError):
    pass


class InvalidRate(CardiorespError):
    pass


# metrics / cardiac / patterns
class TooShort(CardiorespError):
    pass


class LengthMismatch(CardiorespError):
    pass


class NoPeaksFound(CardiorespError):
    pass


class TooFewPeaks(CardiorespError):
    pass


class EmptyInput(CardiorespError):
    pass


# features
class InsufficientValidSamples(CardiorespError):
    pass


class UnknownPatient(CardiorespError):
    pass


class DuplicatePatient(CardiorespError):
    pass


class AllMissingFeature(CardiorespError):
    pass


class SchemaMismatch(CardiorespError):
    pass


# forest
class SingleClass(CardiorespError):
    pass


class EmptyAfterRule(CardiorespError):
    pass


class RegistryMismatch(CardiorespError):
    pass


class MissingClinicalForCdbrf(CardiorespError):
    pass


class VersionMismatch(CardiorespError):
    pass


class CorruptModel(CardiorespError):
    pass


# eval
class EmptyGrid(CardiorespError):
    pass


class ClassSmallerThanK(UserWarning):
    """Warning: a class has fewer members than there are folds."""
