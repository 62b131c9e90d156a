"""Exception types for the QPC 0.7-anomaly toolkit."""

from typing import Optional


class QpcError(Exception):
    """Base class for all toolkit errors."""

    kind = "error"


class ConfigurationError(QpcError, ValueError):
    """Invalid configuration, including tight-binding band-edge violations."""

    kind = "configuration"


class ModelValidityError(QpcError, ValueError):
    """The interaction model left its domain of validity (max U_eff >= 1)."""

    kind = "model_validity"


class DeviceDefectError(QpcError, RuntimeError):
    """A nonfunctional device was asked for a measurement."""

    kind = "device_defect"


class CalibrationError(QpcError, RuntimeError):
    """Series-resistance calibration failed (no first plateau)."""

    kind = "calibration"


class FitError(QpcError, RuntimeError):
    """The saddle-point fit did not converge."""

    kind = "fit"


class TransformError(QpcError, RuntimeError):
    """Gate voltage could not be mapped onto kappa."""

    kind = "transform"


class ExtractionError(QpcError, RuntimeError):
    """Bias spectroscopy could not extract a subband spacing."""

    kind = "extraction"


class StatisticsError(QpcError, ValueError):
    """Too few devices, or degenerate input, for a statistic."""

    kind = "statistics"

    def __init__(self, message: str, count: Optional[int] = None):
        super().__init__(message)
        self.count = count


class MuxFault(QpcError, RuntimeError):
    """Multiplexer addressing did not select exactly one device."""

    kind = "mux_fault"

    def __init__(self, message: str, fault_class: str, active_count: int):
        super().__init__(message)
        self.fault_class = fault_class
        self.active_count = active_count
