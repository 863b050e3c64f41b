"""Exception hierarchy shared by all affkit modules."""


class AffkitError(Exception):
    """Base class for every error raised by this package."""


# --- knowledge graph ---

class DuplicateId(AffkitError):
    pass


class DanglingReference(AffkitError):
    pass


class InvalidProbability(AffkitError):
    pass


class UnknownEntity(AffkitError):
    pass


# --- detections, files, synthetic data ---

class EmptyLabelSet(AffkitError):
    pass


class MalformedPrompt(AffkitError):
    pass


class IoError(AffkitError):
    """File missing or unreadable."""


class SchemaError(AffkitError):
    """File or payload present but structurally invalid."""


class DimensionMismatch(AffkitError):
    pass


class ZeroNormEmbedding(AffkitError):
    pass


class InvalidSpec(AffkitError):
    pass


# --- projection ---

class TooFewPoints(AffkitError):
    pass


class PerplexityTooLarge(AffkitError):
    pass


class DegenerateDistances(AffkitError):
    pass


class NumericalDivergence(AffkitError):
    pass


# --- relabeling ---

class ZeroNormVector(AffkitError):
    pass


class EmptyStore(AffkitError):
    pass


class UnknownObjectId(AffkitError):
    pass


# --- pipeline / service ---

class BindError(AffkitError):
    pass


class SchemaVersionMismatch(AffkitError):
    pass


class StageError(AffkitError):
    """Wraps any error raised inside a pipeline stage with the stage name.

    The original error is chained as ``__cause__``.
    """

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
