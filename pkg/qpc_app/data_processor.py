"""Signal processing helpers for conductance traces."""

from typing import List, Optional, Union

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.signal import savgol_coeffs, savgol_filter


ArrayInput = Union[np.ndarray, List[float]]


class DataProcessor:
    """Handles smoothing, differentiation and resampling of sampled curves."""

    @staticmethod
    def smooth(data: ArrayInput, window: int = 11, polyorder: int = 3) -> np.ndarray:
        """
        Savitzky-Golay smoothing.

        Args:
            data: Input data array or list
            window: Odd window length in samples
            polyorder: Polynomial order, below the window length

        Returns:
            Smoothed data array

        Raises:
            ValueError: If the window is even, too short for the polynomial
                or longer than the data
        """
        data_array = np.asarray(data, dtype=float)
        DataProcessor._check_window(len(data_array), window, polyorder)
        return savgol_filter(data_array, window, polyorder, mode='interp')

    @staticmethod
    def differentiate(x: ArrayInput, y: ArrayInput) -> np.ndarray:
        """Second-order accurate dy/dx on a possibly non-uniform grid."""
        x_array = np.asarray(x, dtype=float)
        y_array = np.asarray(y, dtype=float)
        if x_array.shape != y_array.shape:
            raise ValueError("x and y must have the same shape")
        if len(x_array) < 3:
            raise ValueError("Need at least three samples to differentiate")
        return np.gradient(y_array, x_array, edge_order=2)

    @staticmethod
    def smoothed_derivative(x: ArrayInput, y: ArrayInput, window: int = 11,
                            polyorder: int = 3) -> np.ndarray:
        """Savitzky-Golay smoothing followed by ``differentiate``."""
        return DataProcessor.differentiate(x, DataProcessor.smooth(y, window, polyorder))

    @staticmethod
    def derivative_noise_gain(window: int = 11, polyorder: int = 3, step: float = 1.0) -> float:
        """
        Standard deviation of ``smoothed_derivative`` for unit white noise.

        Interior-point gain of the smoothing filter followed by a central
        difference with spacing ``step``.
        """
        if step <= 0:
            raise ValueError("Step must be positive")
        smoothing = savgol_coeffs(window, polyorder)
        combined = np.convolve(smoothing, np.array([1.0, 0.0, -1.0]) / (2.0 * step))
        return float(np.sqrt(np.sum(combined ** 2)))

    @staticmethod
    def resample_uniform(x: ArrayInput, y: ArrayInput, grid: ArrayInput) -> np.ndarray:
        """
        Shape-preserving resampling onto ``grid``; NaN outside the data range.

        Raises:
            ValueError: If x is not strictly increasing
        """
        x_array = np.asarray(x, dtype=float)
        y_array = np.asarray(y, dtype=float)
        if np.any(np.diff(x_array) <= 0):
            raise ValueError("x must be strictly increasing to resample")
        return PchipInterpolator(x_array, y_array, extrapolate=False)(np.asarray(grid, dtype=float))

    @staticmethod
    def level_crossing(x: ArrayInput, y: ArrayInput, level: float,
                       start: Optional[float] = None) -> Optional[float]:
        """
        First upward crossing of ``level`` in y(x), linearly interpolated.

        Args:
            x: Increasing abscissa
            y: Ordinate
            level: Level to cross
            start: Only consider samples with x >= start

        Returns:
            The crossing abscissa, or None if y never reaches the level
        """
        x_array = np.asarray(x, dtype=float)
        y_array = np.asarray(y, dtype=float)
        if start is not None:
            keep = x_array >= start
            x_array, y_array = x_array[keep], y_array[keep]
        if len(x_array) == 0:
            return None
        above = y_array >= level
        if above[0]:
            return float(x_array[0])
        hits = np.flatnonzero(above[1:] & ~above[:-1])
        if len(hits) == 0:
            return None
        i = hits[0]
        y0, y1 = y_array[i], y_array[i + 1]
        return float(x_array[i] + (level - y0) * (x_array[i + 1] - x_array[i]) / (y1 - y0))

    @staticmethod
    def robust_noise(data: ArrayInput) -> float:
        """Gaussian-equivalent noise level from the median absolute deviation."""
        data_array = np.asarray(data, dtype=float)
        data_array = data_array[np.isfinite(data_array)]
        if len(data_array) == 0:
            return 0.0
        return float(1.4826 * np.median(np.abs(data_array - np.median(data_array))))

    @staticmethod
    def noise_level(data: ArrayInput, window: int = 11, polyorder: int = 3) -> float:
        """
        White-noise level of a sampled curve from its smoothing residual.

        The residual of a Savitzky-Golay filter keeps a fraction 1 - c0 of
        the noise variance, c0 being the filter's centre coefficient.
        """
        data_array = np.asarray(data, dtype=float)
        finite = data_array[np.isfinite(data_array)]
        if len(finite) < window:
            return 0.0
        residual = finite - DataProcessor.smooth(finite, window, polyorder)
        centre = savgol_coeffs(window, polyorder)[window // 2]
        return DataProcessor.robust_noise(residual) / float(np.sqrt(1.0 - centre))

    @staticmethod
    def _check_window(length: int, window: int, polyorder: int):
        if window % 2 == 0 or window < 3:
            raise ValueError(f"Smoothing window must be odd and >= 3, got {window}")
        if polyorder >= window:
            raise ValueError("Polynomial order must be less than the window length")
        if window > length:
            raise ValueError(f"Smoothing window {window} exceeds trace length {length}")
