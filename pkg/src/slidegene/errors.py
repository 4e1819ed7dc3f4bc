"""Exception taxonomy shared across the package."""


class SlidegeneError(Exception):
    """Base class for all package errors."""


class ShapeError(SlidegeneError):
    """Tensor dimensions incompatible with the requested operation."""


class ConfigError(SlidegeneError):
    """Invalid configuration value or combination."""


class ContractError(SlidegeneError):
    """API precondition violated by the caller."""


class GraphError(SlidegeneError):
    """Autodiff tape misuse (non-scalar loss, double backward, ...)."""


class NumericError(SlidegeneError):
    """A forward op produced NaN or Inf while finite checks were on."""


class InputError(SlidegeneError):
    """Malformed or empty input data (images, masks, coordinate lists)."""


class DataError(SlidegeneError):
    """Missing or inconsistent data discovered mid-pipeline."""


class UndefinedCorrelationError(DataError):
    """Correlation requested on a zero-variance vector."""


class FormatError(SlidegeneError):
    """Malformed serialized artifact (bag file, checkpoint, manifest)."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(SlidegeneError):
    """Unrecoverable state during optimization (non-finite gradients, ...)."""
