"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1 (usage/config),
IntegrityError -> 3 (hash mismatch), everything else -> 2 (stage failure).
"""


class ConfigError(ValueError):
    """Invalid configuration, parameters, or usage."""


class ShapeError(ValueError):
    """Tensor shape or dimension mismatch."""


class NumericsError(ArithmeticError):
    """Non-finite value encountered where finite math is required."""


class ScheduleError(ValueError):
    """Learning-rate schedule queried outside its valid step range."""


class DataError(ValueError):
    """Malformed input data or ingestion failure."""


class CalibrationError(ValueError):
    """Threshold calibration impossible (e.g. empty calibration set)."""


class MetricError(ValueError):
    """Metric requested on an empty or inconsistent population."""


class IntegrityError(RuntimeError):
    """Run-bundle content does not match its recorded hashes."""
