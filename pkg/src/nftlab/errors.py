class NftlError(Exception):
    """Base class for all errors raised by nftlab."""


class ShapeError(NftlError, ValueError):
    pass


class CheckpointError(NftlError, ValueError):
    pass


class NumericalError(NftlError, FloatingPointError):
    """Raised when a NaN or Inf shows up where finite values are required."""


class ConfigError(NftlError, ValueError):
    pass


def check_finite(arr, what: str) -> None:
    import numpy as np

    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {what}")
