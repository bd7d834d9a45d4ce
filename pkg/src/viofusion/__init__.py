"""Visual-inertial odometry with memory-augmented sensor fusion.

A self-contained pipeline: a numpy-backed reverse-mode autodiff core, a
strided-convolution visual encoder over stacked frame pairs, a dilated
causal gated-convolution inertial encoder, attention-based fusion with an
external memory, SE(3) pose losses with multi-state window constraints,
deterministic synthetic data, and KITTI-style drift evaluation.
"""

__version__ = "0.1.0"

from .config import Config
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DatasetChecksumError,
    DatasetTruncatedError,
    DatasetVersionError,
    EmptyReportError,
    GimbalLockError,
    GradientStateError,
    ParseError,
    ShapeError,
    TrainingDivergedError,
    VioError,
)
from .model import VioModel, build_model, param_report
from .tensor import Tensor

__all__ = [
    "Config",
    "Tensor",
    "VioModel",
    "build_model",
    "param_report",
    "VioError",
    "ShapeError",
    "ConfigError",
    "ContractError",
    "GradientStateError",
    "GimbalLockError",
    "ParseError",
    "DatasetVersionError",
    "DatasetTruncatedError",
    "DatasetChecksumError",
    "CheckpointError",
    "TrainingDivergedError",
    "EmptyReportError",
    "__version__",
]
