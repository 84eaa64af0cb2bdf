"""GCP-free UAV aerial triangulation: coordinate conversion, feature
matching, relative orientation, incremental reconstruction, GNSS-prior
bundle adjustment, and georeferenced accuracy evaluation."""

from .errors import AerotriError, ConfigError, DataError, NumericalError

__version__ = "0.1.0"

__all__ = [
    "AerotriError",
    "ConfigError",
    "DataError",
    "NumericalError",
    "__version__",
]
