"""Exception hierarchy shared by every module.

Each class maps to one failure category so callers (and the HTTP service)
can translate them to stable error codes.
"""


class VioError(Exception):
    """Base class for all package errors."""

    code = "error"


class ShapeError(VioError):
    """An operation received operands whose shapes do not conform."""

    code = "shape_mismatch"


class ConfigError(VioError):
    """Invalid configuration value, unknown key, or inconsistent dims."""

    code = "bad_config"


class ContractError(VioError):
    """A documented precondition was violated by the caller."""

    code = "contract_violation"


class GradientStateError(ContractError):
    """Gradients were already populated, or missing when required."""

    code = "gradient_state"


class GimbalLockError(VioError):
    """Euler extraction requested too close to the pitch singularity."""

    code = "gimbal_lock"


class ParseError(VioError):
    """A text file (poses, config) could not be parsed."""

    code = "parse_error"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DatasetVersionError(VioError):
    """Dataset manifest declares an unsupported format version."""

    code = "dataset_version"


class DatasetTruncatedError(VioError):
    """Dataset payload is shorter than the manifest says it should be."""

    code = "dataset_truncated"


class DatasetChecksumError(VioError):
    """Stored checksum does not match the record bytes."""

    code = "dataset_checksum"


class CheckpointError(VioError):
    """Checkpoint file malformed or incompatible with the active config."""

    code = "bad_checkpoint"


class TrainingDivergedError(VioError):
    """Loss became non-finite; the last good checkpoint was kept."""

    code = "training_diverged"

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class EmptyReportError(VioError):
    """No drift sub-segment fit the trajectory; suggests scaled lengths."""

    code = "empty_report"
