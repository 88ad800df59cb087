# Stochastic primitives package
from .core import (
    BrownianSpec,
    CovarianceMatrix,
    MMatrix,
    NormalMethod,
    TimeGrid,
    cholesky,
    is_m_matrix,
    replication_stream,
    sample_increments,
    spectral_radius,
)
from .reflection import (
    ReflectedPath,
    ReflectionStepResult,
    WedgeChart,
    reflect_path,
    reflect_step,
    reflect_step_enumerate,
)

__all__ = [
    "BrownianSpec",
    "CovarianceMatrix",
    "MMatrix",
    "NormalMethod",
    "ReflectedPath",
    "ReflectionStepResult",
    "TimeGrid",
    "WedgeChart",
    "cholesky",
    "is_m_matrix",
    "reflect_path",
    "reflect_step",
    "reflect_step_enumerate",
    "replication_stream",
    "sample_increments",
    "spectral_radius",
]
