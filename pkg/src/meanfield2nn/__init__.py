"""Mean-field simulation and statics for wide two-layer networks trained by
one-pass SGD on centered Gaussian mixture classification."""

__version__ = "0.1.0"

from .kernels import AtomEnsemble, KernelGrid, Space
from .model import (
    ActivationKind,
    ActivationSpec,
    DataModel,
    DivergenceError,
    non_monotone,
    piecewise_linear,
    relu_affine,
)
from .sgd import Schedule, SgdConfig, WeightEnsemble, constant_schedule, power_schedule

__all__ = [
    "ActivationKind",
    "ActivationSpec",
    "AtomEnsemble",
    "DataModel",
    "DivergenceError",
    "KernelGrid",
    "Schedule",
    "SgdConfig",
    "Space",
    "WeightEnsemble",
    "__version__",
    "constant_schedule",
    "non_monotone",
    "piecewise_linear",
    "power_schedule",
    "relu_affine",
]
