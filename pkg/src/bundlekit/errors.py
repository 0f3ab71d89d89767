"""Exception types shared across the package."""


class BundlekitError(Exception):
    """Base class for all package errors."""


class DataFormatError(BundlekitError):
    """Raised when an input file violates its documented format."""


class ConfigError(BundlekitError):
    """Raised for invalid configuration values or inconsistent shapes."""


class TrainingDivergedError(BundlekitError):
    """Raised when a loss or gradient turns NaN during training.

    ``tensor_name`` names the first non-finite quantity observed.
    """

    def __init__(self, tensor_name: str, detail: str = ""):
        self.tensor_name = tensor_name
        msg = f"non-finite value in '{tensor_name}'"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)
