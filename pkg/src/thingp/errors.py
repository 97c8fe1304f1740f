"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class ThinGPError(Exception):
    """Base class for all library errors."""


class ConfigError(ThinGPError):
    """Invalid configuration or arguments (CLI exit code 2)."""


class DataError(ThinGPError):
    """Unusable input data: missing files/columns, empty data (exit code 3)."""


class NumericalError(ThinGPError):
    """Numerical failure such as a non-PD covariance after jitter retries (exit code 4)."""
