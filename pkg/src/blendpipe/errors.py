"""Exception hierarchy shared by all pipeline stages.

Every domain failure raises a subclass of :class:`BlendpipeError`, so callers
can catch one base type at CLI boundaries while tests assert precise classes.
"""


class BlendpipeError(Exception):
    """Base class for all domain errors raised by this package."""


# ---- stream ingest / serialization -------------------------------------

class MalformedRecord(BlendpipeError):
    """A stream line could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class PointCountMismatch(BlendpipeError):
    pass


class NonMonotonicTimestamp(BlendpipeError):
    pass


class SinkFailure(BlendpipeError):
    pass


# ---- geometry -----------------------------------------------------------

class DegenerateAnchors(BlendpipeError):
    pass


class CollinearAnchors(BlendpipeError):
    pass


# ---- feature selection --------------------------------------------------

class InsufficientSamples(BlendpipeError):
    pass


class IndexOutOfRange(BlendpipeError):
    pass


# ---- transforms ---------------------------------------------------------

class DegenerateCovariance(BlendpipeError):
    pass


class LengthMismatch(BlendpipeError):
    pass


class DegenerateAnchorPair(BlendpipeError):
    pass


class DimensionMismatch(BlendpipeError):
    pass


class DomainViolation(BlendpipeError):
    pass


# ---- regression / statistics ---------------------------------------------

class SingularDesign(BlendpipeError):
    pass


class NonConvergence(BlendpipeError):
    pass


class ZeroVariance(BlendpipeError):
    pass


class ZeroResiduals(BlendpipeError):
    pass


class SampleSizeOutOfRange(BlendpipeError):
    pass


# ---- pipeline / persistence ----------------------------------------------

class InsufficientTraining(BlendpipeError):
    pass


class VersionMismatch(BlendpipeError):
    pass


class SchemaViolation(BlendpipeError):
    pass


class AlignmentFailure(BlendpipeError):
    pass
