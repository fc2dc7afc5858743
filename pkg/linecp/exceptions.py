"""Error hierarchy shared by every linecp module."""


class LinecpError(Exception):
    """Base class for all linecp errors. Carries the CLI exit code."""

    exit_code = 1


class InputError(LinecpError):
    """Malformed or out-of-range input: bad files, bad flags, bad values."""

    exit_code = 2


class CalibrationError(LinecpError):
    """A calibration stratum that must be non-empty has no scores."""

    exit_code = 3

    def __init__(self, message: str, stratum: str = ""):
        super().__init__(message)
        self.stratum = stratum


class ConsistencyError(LinecpError):
    """Artifacts that must agree do not (fingerprint, widths, taxonomy rules)."""

    exit_code = 3
