class TpuImacError(Exception):
    """Base class for every error raised by tpu_imac_sim."""


class TopologyParseError(TpuImacError, ValueError):
    pass


class TopologyValidationError(TpuImacError, ValueError):
    pass


class LoweringError(TpuImacError, ValueError):
    """Raised when a layer has no GEMM lowering."""


class OracleScaleError(TpuImacError, RuntimeError):
    pass


class TraceRegionError(TpuImacError, ValueError):
    """Raised when trace address regions overlap for a workload."""


class DomainError(TpuImacError, ValueError):
    pass


class DimensionError(TpuImacError, ValueError):
    pass


class ConfigError(TpuImacError, ValueError):
    pass


class FormatError(TpuImacError, ValueError):
    """Raised for malformed dataset, weight or manifest files."""


class StateError(TpuImacError, RuntimeError):
    pass


class PlanError(TpuImacError, ValueError):
    pass


class EmptyWorkloadError(TpuImacError, ZeroDivisionError):
    pass


class TrainingDivergedError(TpuImacError, ArithmeticError):
    pass


class ManifestMismatchError(TpuImacError, ValueError):
    pass
