"""Exception hierarchy shared by every module of the package."""


class FollmerEPIError(Exception):
    """Base class for all errors raised by the package."""


class UnnormalizedDensity(FollmerEPIError):
    pass


class SamplerDiagnosticFailure(FollmerEPIError):
    pass


class PoincareUnavailable(FollmerEPIError):
    pass


class SingularCovariance(FollmerEPIError):
    pass


class NotPositiveDefinite(FollmerEPIError):
    pass


class QuadratureNoConvergence(FollmerEPIError):
    pass


class TimeOutOfRange(FollmerEPIError):
    pass


class DriftBlowup(FollmerEPIError):
    pass


class GridMismatch(FollmerEPIError):
    pass


class HypothesisViolated(FollmerEPIError):
    pass


class DegenerateCovariance(FollmerEPIError):
    pass


class ConvolutionUnavailable(FollmerEPIError):
    pass


class MeasureError(FollmerEPIError):
    """Invalid measure declaration (weights, covariance, log-concavity claim...)."""


class ConfigInvalid(FollmerEPIError):
    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
