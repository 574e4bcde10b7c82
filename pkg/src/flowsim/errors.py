"""Exception hierarchy shared by all flowsim modules."""


class FlowsimError(Exception):
    """Base class for all toolkit errors."""


class MissingFile(FlowsimError):
    pass


class UndecodableImage(FlowsimError):
    pass


class InvalidDimensions(FlowsimError):
    pass


class BadMagic(FlowsimError):
    pass


class TruncatedFile(FlowsimError):
    pass


class IoFailure(FlowsimError):
    pass


class DimensionMismatch(FlowsimError):
    pass


class ShapeMismatch(FlowsimError):
    pass


class DegenerateWarp(FlowsimError):
    pass


class EmptyMask(FlowsimError):
    pass


class BackendTimeout(FlowsimError):
    pass


class IncompleteSequence(FlowsimError):
    pass


class BadResult(FlowsimError):
    pass


class EmptySource(FlowsimError):
    pass


class EmptyGroundTruth(FlowsimError):
    pass


class EmptyDirectory(FlowsimError):
    pass


class MissingMask(FlowsimError):
    pass


class DuplicatePairId(FlowsimError):
    pass
