"""Exception and warning types shared across the package."""


class DispscanError(Exception):
    """Base class for all errors raised by this package."""


# dataset ingestion / serialization

class MismatchedNodeSet(DispscanError):
    """Run files disagree on node identifiers."""


class NonFiniteValue(DispscanError):
    """NaN or Inf encountered in position data."""


class UnitMismatch(DispscanError):
    """Declared units disagree between manifest and run files."""


class InconsistentInitialState(DispscanError):
    """Initial node positions differ between runs."""


class EmptyDataset(DispscanError):
    """Operation would produce or store a dataset with no nodes."""


class IoFailure(DispscanError):
    """File could not be read or written."""


class VersionMismatch(DispscanError):
    """Binary container has an unknown magic or version."""


# preprocessing

class DegenerateGeometry(DispscanError):
    """Node cloud is collinear or coincident; rigid fit undefined."""


class SingleRun(DispscanError):
    """Operation needs at least two runs."""


class EmptyClass(DispscanError):
    """A class has no members; balancing undefined."""


class UnknownPartId(DispscanError):
    """Excluded part id does not occur in the dataset."""


class OutOfRange(DispscanError):
    """Index or truncation length outside the valid range."""


# encodings

class TooShortForLevels(DispscanError):
    """Signal too short for the requested wavelet decomposition depth."""


class ZeroTimeIncrement(DispscanError):
    """Consecutive time stamps coincide; slope undefined."""


class DimensionMismatch(DispscanError):
    """Array dimensions do not chain."""


# model training

class NonFiniteLoss(DispscanError):
    """Training loss diverged to NaN or Inf."""


class BasisMissing(DispscanError):
    """Operation requires the frozen low-rank basis."""


class BasisAlreadyFrozen(DispscanError):
    """Joint training must run before the basis is fixed."""


class InsufficientSamples(DispscanError):
    """Fewer samples than the retained rank."""


class SingleClass(DispscanError):
    """Classifier training needs both classes present."""


class TooFewSamples(DispscanError):
    """Not enough samples for the requested split."""


# evaluation

class LengthMismatch(DispscanError):
    """Label arrays differ in length."""


class NonBinaryLabel(DispscanError):
    """Labels must be 0 or 1."""


# synthetic generator

class InfeasibleConfig(DispscanError):
    """Generator config cannot guarantee unambiguous ground truth."""


class RankDeficiencyWarning(UserWarning):
    """Retained rank exceeds the numerical rank of the latent batch."""
