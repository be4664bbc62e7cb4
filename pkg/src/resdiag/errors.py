"""Exception hierarchy shared across the package."""


class ResdiagError(Exception):
    """Base class for all errors raised by resdiag."""


class DimensionMismatch(ResdiagError, ValueError):
    pass


class RankDeficient(ResdiagError, ValueError):
    pass


class DegenerateModel(ResdiagError, ValueError):
    pass


class SingularCovariance(ResdiagError, ValueError):
    pass


class ZeroVariance(ResdiagError, ValueError):
    pass


class ConstantVector(ResdiagError, ValueError):
    pass


class BucketTimeout(ResdiagError, RuntimeError):
    """Raised when balanced dataset construction exhausts its proposal budget."""


class EmptyInput(ResdiagError, ValueError):
    pass


class NonFinite(ResdiagError, ValueError):
    pass


class MalformedHeader(ResdiagError, ValueError):
    pass


class DegenerateInput(ResdiagError, ValueError):
    pass


class ShapeMismatch(ResdiagError, ValueError):
    pass


class NonFiniteActivation(ResdiagError, FloatingPointError):
    pass


class NonFiniteGradient(ResdiagError, FloatingPointError):
    pass


class VersionMismatch(ResdiagError, ValueError):
    pass


class ChecksumFailure(ResdiagError, ValueError):
    pass


class EmptyNulls(ResdiagError, ValueError):
    pass


class DegenerateFeatures(ResdiagError, ValueError):
    pass
