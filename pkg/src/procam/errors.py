"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ProcamError(Exception):
    exit_code = 1


class InputError(ProcamError, ValueError):
    """Malformed or dimensionally inconsistent input."""

    exit_code = 2


class BoundsError(ProcamError, IndexError):
    exit_code = 2


class ConfigError(ProcamError):
    exit_code = 2


class CalibrationError(ProcamError):
    """Base for failures during either calibration phase."""

    exit_code = 3


class SingularSystemError(CalibrationError):
    pass


class HorizonPointError(CalibrationError):
    pass


class CoverageError(CalibrationError):
    def __init__(self, msg, pixel=None):
        super().__init__(msg)
        self.pixel = pixel


class DetectionFailure(CalibrationError):
    pass


class GeometryError(CalibrationError):
    pass


class CalibrationQualityError(CalibrationError):
    pass


class UnsupportedKindError(ProcamError, ValueError):
    exit_code = 2


class BundleIOError(ProcamError, OSError):
    exit_code = 4
