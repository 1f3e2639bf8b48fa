"""Streaming quantile regression with online pivotal inference."""

__version__ = "0.1.0"

from .exceptions import (
    ContractViolationError,
    DataError,
    DegenerateScalingError,
    DivergedPathError,
    InsufficientObservationsError,
    MissingCriticalValueError,
    SingularScalingError,
    StreamqrError,
    UsageError,
)
from .scaling import (
    RandomScalingMatrix,
    ScalingAccumulator,
    sum_of_squares,
    update_average,
)
from .sgd import (
    DualPathResult,
    LearningRateSchedule,
    Observation,
    PathResult,
    PathState,
    ScalingRequest,
    SgdConfig,
    run_dual_path,
    run_path,
    step,
    subgradient,
)

__all__ = [
    "__version__",
    "ContractViolationError",
    "DataError",
    "DegenerateScalingError",
    "DivergedPathError",
    "DualPathResult",
    "InsufficientObservationsError",
    "LearningRateSchedule",
    "MissingCriticalValueError",
    "Observation",
    "PathResult",
    "PathState",
    "RandomScalingMatrix",
    "ScalingAccumulator",
    "ScalingRequest",
    "SgdConfig",
    "SingularScalingError",
    "StreamqrError",
    "UsageError",
    "run_dual_path",
    "run_path",
    "step",
    "subgradient",
    "sum_of_squares",
    "update_average",
]
