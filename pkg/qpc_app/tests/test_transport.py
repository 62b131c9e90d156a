"""
Unit tests for noninteracting saddle-point transport.

Checks the transmission, the thermal quadrature, conductance plateaus,
the transconductance and the symmetric bias model.
"""

import pytest
import numpy as np
from scipy.integrate import quad, trapezoid
from scipy.special import expit

from models import SaddlePotential, ThermalState
from transport import (G_Q, K_B_MEV, SaddleTransport, bias_shift, gate_from_kappa,
                       kappa_from_gate, thermal_average, thermal_energy)


class TestSaddleTransport:
    """Test cases for SaddleTransport static methods."""

    def setup_method(self):
        """Setup a device with well separated subbands."""
        self.pot = SaddlePotential(e_x=1.0, e_y=3.0, lever_arm=0.05)
        self.cold = ThermalState(0.0)
        self.warm = ThermalState(1.4)
        self.kappa = np.linspace(-3.0, 9.0, 1201)

    def test_transmission_half_at_subband_bottom(self):
        """Test that transmission is 1/2 exactly at each subband bottom."""
        for n in (1, 2, 3):
            energy = self.pot.subband_bottom(n)
            assert SaddleTransport.transmission(energy, n, self.pot) == pytest.approx(0.5)

    def test_transmission_limits(self):
        """Test transmission far below and above the barrier."""
        bottom = self.pot.subband_bottom(1)
        assert SaddleTransport.transmission(bottom - 5.0, 1, self.pot) < 1e-12
        assert SaddleTransport.transmission(bottom + 5.0, 1, self.pot) > 1 - 1e-12

    def test_transmission_invalid_subband(self):
        """Test that subband indices below 1 are rejected."""
        with pytest.raises(ValueError, match="Subband index"):
            SaddleTransport.transmission(0.0, 0, self.pot)

    def test_half_conductance_at_first_riser(self):
        """G^0 is 0.5 G_Q at kappa = 0 for T = 0."""
        g = SaddleTransport.conductance_noninteracting(0.0, self.pot, self.cold, n_subbands=1)
        assert float(g) == pytest.approx(0.5, abs=1e-12)

    def test_zero_temperature_matches_transmission_sum(self):
        """At T = 0 the conductance is the sum of transmissions at mu."""
        g = SaddleTransport.conductance_noninteracting(self.kappa, self.pot, self.cold)
        expected = sum(expit(2 * np.pi * (self.kappa - n * self.pot.u_e)) for n in range(3))

        np.testing.assert_allclose(g, expected, atol=1e-14)

    @pytest.mark.parametrize("temperature", [0.0, 0.04, 1.4, 3.0])
    def test_monotone_in_kappa(self, temperature):
        """Test that G^0 never decreases with kappa."""
        g = SaddleTransport.conductance_noninteracting(self.kappa, self.pot,
                                                       ThermalState(temperature))
        assert np.all(np.diff(g) >= -1e-12)

    @pytest.mark.parametrize("temperature", [0.0, 1.4, 3.4])
    def test_plateau_values_preserved(self, temperature):
        """Plateau centres stay within 1e-3 G_Q of N for k_B T up to E_y / 10."""
        assert thermal_energy(temperature) <= self.pot.e_y / 10
        centres = np.array([0.5, 1.5]) * self.pot.u_e
        g = SaddleTransport.conductance_noninteracting(centres, self.pot,
                                                       ThermalState(temperature))

        np.testing.assert_allclose(g, [1.0, 2.0], atol=1e-3)

    def test_thermal_average_matches_direct_integral(self):
        """The Gauss-Legendre rule reproduces the Fermi-window integral."""
        theta = 0.12
        kappa = 0.3

        def integrand(x):
            return expit(2 * np.pi * (kappa + theta * x)) * 0.25 / np.cosh(0.5 * x) ** 2

        direct, _ = quad(integrand, -40.0, 40.0)
        assert float(SaddleTransport.step_conductance(kappa, theta)) == pytest.approx(direct,
                                                                                      abs=1e-8)

    def test_thermal_average_conserves_constants(self):
        """Test that averaging a constant returns the constant."""
        result = thermal_average(lambda k: np.full_like(k, 3.0), np.array([0.0, 1.0]), 0.2)
        np.testing.assert_allclose(result, [3.0, 3.0], rtol=1e-12)

    def test_thermal_average_zero_theta_is_identity(self):
        """Test that theta = 0 evaluates the function directly."""
        result = thermal_average(np.sin, np.array([0.1, 0.2]), 0.0)
        np.testing.assert_allclose(result, np.sin([0.1, 0.2]))

    def test_transconductance_matches_gradient(self):
        """Test TC^0 against a numerical derivative of G^0."""
        g = SaddleTransport.conductance_noninteracting(self.kappa, self.pot, self.warm)
        tc = SaddleTransport.transconductance_noninteracting(self.kappa, self.pot, self.warm)

        np.testing.assert_allclose(np.gradient(g, self.kappa), tc, atol=2e-3)

    def test_transconductance_integrates_to_subband_count(self):
        """The area under TC^0 equals the number of opened subbands."""
        kappa = np.linspace(-10.0, 16.0, 26001)
        tc = SaddleTransport.transconductance_noninteracting(kappa, self.pot, self.warm)

        assert trapezoid(tc, kappa) == pytest.approx(3.0, abs=1e-3)

    def test_step_antiderivative(self):
        """Test that the antiderivative differentiates back to the step."""
        kappa = np.linspace(-2.0, 2.0, 4001)
        theta = 0.05
        phi = SaddleTransport.step_antiderivative(kappa, theta)
        step = SaddleTransport.step_conductance(kappa, theta)

        np.testing.assert_allclose(np.gradient(phi, kappa)[1:-1], step[1:-1], atol=1e-5)

    def test_invalid_subband_count(self):
        """Test that fewer than one subband is rejected."""
        with pytest.raises(ValueError, match="Number of subbands"):
            SaddleTransport.conductance_noninteracting(self.kappa, self.pot, self.cold, 0)

        with pytest.raises(ValueError, match="Number of subbands"):
            SaddleTransport.transconductance_noninteracting(self.kappa, self.pot, self.cold, 0)


class TestBiasModel:
    """Test cases for the symmetric source-drain bias split."""

    def setup_method(self):
        """Setup test potential."""
        self.pot = SaddlePotential(e_x=1.0, e_y=3.0, lever_arm=0.05)
        self.th = ThermalState(0.0)

    def test_bias_shift_units(self):
        """eV/2 in units of E_x: 1 mV on E_x = 1 meV is half an E_x."""
        assert float(bias_shift(0.001, 1.0)) == pytest.approx(0.5)
        assert float(bias_shift(0.001, 0.5)) == pytest.approx(1.0)

    def test_zero_bias_equals_linear_response(self):
        """Test that V_SD = 0 reproduces G^0."""
        kappa = np.linspace(-2.0, 5.0, 301)
        biased = SaddleTransport.conductance_biased(kappa, 0.0, self.pot, self.th)
        linear = SaddleTransport.conductance_noninteracting(kappa, self.pot, self.th)

        np.testing.assert_array_equal(biased, linear)

    def test_bias_sign_symmetry(self):
        """Test that the conductance is even in the bias."""
        kappa = np.linspace(-2.0, 5.0, 301)
        plus = SaddleTransport.conductance_biased(kappa, 0.0012, self.pot, self.th)
        minus = SaddleTransport.conductance_biased(kappa, -0.0012, self.pot, self.th)

        np.testing.assert_allclose(plus, minus, atol=1e-14)

    def test_half_plateau_at_subband_spacing(self):
        """At eV_SD/2 = Delta E one window edge is open and the other closed."""
        v_sd = 2 * self.pot.e_y * 1e-3
        g = SaddleTransport.conductance_biased(0.5 * self.pot.u_e, v_sd, self.pot, self.th,
                                               n_subbands=1)
        assert float(g) == pytest.approx(0.5, abs=1e-3)

    def test_deep_plateau_unaffected_by_small_bias(self):
        """Test that a small bias leaves the plateau centre at 1 G_Q."""
        g = SaddleTransport.conductance_biased(1.5, 0.0002, self.pot, self.th)
        assert float(g) == pytest.approx(1.0, abs=1e-3)


class TestGateConversion:
    """Test cases for the gate-voltage to kappa mapping."""

    def setup_method(self):
        """Setup test potential with an offset riser."""
        self.pot = SaddlePotential(e_x=0.8, e_y=2.0, lever_arm=0.04, v_riser=-1.2)

    def test_riser_maps_to_zero(self):
        """Test that the riser voltage maps to kappa = 0."""
        assert float(kappa_from_gate(-1.2, self.pot)) == pytest.approx(0.0)

    def test_round_trip(self):
        """Test that gate_from_kappa inverts kappa_from_gate."""
        kappa = np.linspace(-3.0, 6.0, 31)
        np.testing.assert_allclose(kappa_from_gate(gate_from_kappa(kappa, self.pot), self.pot),
                                   kappa, atol=1e-12)

    def test_scale(self):
        """One E_x of kappa corresponds to E_x / (alpha e) of gate voltage."""
        step = float(gate_from_kappa(1.0, self.pot) - gate_from_kappa(0.0, self.pot))
        assert step == pytest.approx(0.8e-3 / 0.04)


class TestConstants:
    """Test cases for physical constants."""

    def test_conductance_quantum(self):
        """Test that G_Q = 2e^2/h is about 77.48 microsiemens."""
        assert G_Q == pytest.approx(7.748091729e-5, rel=1e-9)

    def test_boltzmann_in_mev(self):
        """Test k_B in meV per kelvin and the 1.4 K thermal energy."""
        assert K_B_MEV == pytest.approx(0.08617333, rel=1e-6)
        assert thermal_energy(1.4) == pytest.approx(0.1206427, rel=1e-5)
