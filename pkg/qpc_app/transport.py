"""Noninteracting saddle-point transport: transmission, G^0 and TC^0."""

from typing import Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import constants
from scipy.special import expit

from models import SaddlePotential, ThermalState


ArrayLike = Union[float, np.ndarray]

# Boltzmann constant in meV/K
K_B_MEV = constants.k / constants.e * 1e3
# Conductance quantum 2e^2/h in siemens
G_Q = 2 * constants.e ** 2 / constants.h

THERMAL_NODES = 128
THERMAL_SPAN = 20.0


def _fermi_kernel_rule():
    """Gauss-Legendre nodes x and weights w*K(x) over x in [-20, 20].

    K(x) = -df/dx = 1 / (4 cosh^2(x/2)). The weights are renormalised to
    the exact kernel mass so plateaus stay at integer multiples of G_Q.
    """
    t, w = leggauss(THERMAL_NODES)
    x = THERMAL_SPAN * t
    kernel = 0.25 / np.cosh(0.5 * x) ** 2
    weights = THERMAL_SPAN * w * kernel
    return x, weights / weights.sum()


_X_NODES, _X_WEIGHTS = _fermi_kernel_rule()


def thermal_energy(temperature: float) -> float:
    """k_B T in meV."""
    return K_B_MEV * temperature


def thermal_average(func, kappa: ArrayLike, theta: float) -> np.ndarray:
    """Average ``func`` over the Fermi window of width ``theta`` (in kappa units)."""
    kappa = np.asarray(kappa, dtype=float)
    if theta <= 0:
        return func(kappa)
    shifted = kappa[..., np.newaxis] + theta * _X_NODES
    return func(shifted) @ _X_WEIGHTS


class SaddleTransport:
    """Landauer-Buttiker transport through a parabolic saddle point."""

    @staticmethod
    def transmission(energy: ArrayLike, subband: int, pot: SaddlePotential) -> np.ndarray:
        """
        Saddle-point transmission of one subband.

        Args:
            energy: Electron energy (meV)
            subband: Subband index N >= 1
            pot: Saddle potential

        Returns:
            Transmission probability in [0, 1]

        Raises:
            ValueError: If the subband index is below 1
        """
        if subband < 1:
            raise ValueError(f"Subband index must be >= 1, got {subband}")
        energy = np.asarray(energy, dtype=float)
        return expit(2 * np.pi * (energy - pot.subband_bottom(subband)) / pot.e_x)

    @staticmethod
    def theta(pot: SaddlePotential, th: ThermalState) -> float:
        """Thermal width k_B T / E_x."""
        return thermal_energy(th.temperature) / pot.e_x

    @staticmethod
    def step_conductance(kappa: ArrayLike, theta: float) -> np.ndarray:
        """Thermally broadened single-subband step, kappa measured from its riser."""
        return thermal_average(lambda k: expit(2 * np.pi * k), kappa, theta)

    @staticmethod
    def step_transconductance(kappa: ArrayLike, theta: float) -> np.ndarray:
        """Derivative of ``step_conductance`` with respect to kappa."""
        def tc(k):
            t = expit(2 * np.pi * k)
            return 2 * np.pi * t * (1.0 - t)
        return thermal_average(tc, kappa, theta)

    @staticmethod
    def step_antiderivative(kappa: ArrayLike, theta: float) -> np.ndarray:
        """Integral of ``step_conductance`` from -infinity to kappa."""
        return thermal_average(
            lambda k: np.logaddexp(0.0, 2 * np.pi * k) / (2 * np.pi), kappa, theta)

    @staticmethod
    def conductance_noninteracting(kappa: ArrayLike, pot: SaddlePotential, th: ThermalState,
                                   n_subbands: int = 3) -> np.ndarray:
        """
        Noninteracting conductance G^0 in units of G_Q.

        Subband N opens at kappa = (N - 1) * U_E. At T = 0 the thermal
        integral reduces to the sum of transmissions at mu.

        Raises:
            ValueError: If n_subbands is below 1
        """
        if n_subbands < 1:
            raise ValueError(f"Number of subbands must be >= 1, got {n_subbands}")
        theta = SaddleTransport.theta(pot, th)
        kappa = np.asarray(kappa, dtype=float)
        total = np.zeros_like(kappa)
        for n in range(n_subbands):
            total = total + SaddleTransport.step_conductance(kappa - n * pot.u_e, theta)
        return total

    @staticmethod
    def conductance_biased(kappa: ArrayLike, v_sd: ArrayLike, pot: SaddlePotential,
                           th: ThermalState, n_subbands: int = 3) -> np.ndarray:
        """Differential conductance with the bias split evenly over source and drain."""
        delta = bias_shift(v_sd, pot.e_x)
        if np.all(delta == 0):
            return SaddleTransport.conductance_noninteracting(kappa, pot, th, n_subbands)
        kappa = np.asarray(kappa, dtype=float)
        upper = SaddleTransport.conductance_noninteracting(kappa + delta, pot, th, n_subbands)
        lower = SaddleTransport.conductance_noninteracting(kappa - delta, pot, th, n_subbands)
        return 0.5 * (upper + lower)

    @staticmethod
    def transconductance_noninteracting(kappa: ArrayLike, pot: SaddlePotential,
                                        th: ThermalState, n_subbands: int = 3) -> np.ndarray:
        """TC^0 = dG^0/dkappa in G_Q per unit kappa."""
        if n_subbands < 1:
            raise ValueError(f"Number of subbands must be >= 1, got {n_subbands}")
        theta = SaddleTransport.theta(pot, th)
        kappa = np.asarray(kappa, dtype=float)
        total = np.zeros_like(kappa)
        for n in range(n_subbands):
            total = total + SaddleTransport.step_transconductance(kappa - n * pot.u_e, theta)
        return total


def bias_shift(v_sd: ArrayLike, e_x: float) -> np.ndarray:
    """Half the bias energy eV_SD/2 in units of E_x (v_sd in volts)."""
    return 500.0 * np.asarray(v_sd, dtype=float) / e_x


def kappa_from_gate(gate_voltage: ArrayLike, pot: SaddlePotential) -> np.ndarray:
    """kappa = alpha * e * (V_G - V_riser) / E_x."""
    gate_voltage = np.asarray(gate_voltage, dtype=float)
    return pot.lever_arm * 1e3 * (gate_voltage - pot.v_riser) / pot.e_x


def gate_from_kappa(kappa: ArrayLike, pot: SaddlePotential) -> np.ndarray:
    """Inverse of ``kappa_from_gate``."""
    kappa = np.asarray(kappa, dtype=float)
    return pot.v_riser + kappa * pot.e_x / (pot.lever_arm * 1e3)
