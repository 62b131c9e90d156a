"""
Van Hove ridge of a 1D tight-binding saddle barrier.

Builds the discretised parabolic barrier, evaluates its local density of
states with recursive Green's functions and semi-infinite lead
self-energies, and turns the LDOS ridge into the effective interaction
U_eff = U * LDOS and the first-order Hartree barrier map.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import constants
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline, PchipInterpolator

from errors import ConfigurationError, ModelValidityError
from transport import THERMAL_SPAN, thermal_average, thermal_energy


logger = logging.getLogger(__name__)

# hbar^2 / (2 m_e) in meV nm^2
HBAR2_2ME = constants.hbar ** 2 / (2 * constants.m_e) / constants.e * 1e3 * 1e18

DEFAULT_KAPPA_RANGE = (-3.0, 9.0)
DEFAULT_KAPPA_POINTS = 601
BAND_EDGE_MARGIN = 0.1
HARTREE_COORDINATES = ("bare", "effective")


def hopping_energy(site_spacing: float, effective_mass: float = 0.067) -> float:
    """Nearest-neighbour hopping tau = hbar^2 / (2 m* a^2) in meV."""
    if site_spacing <= 0 or effective_mass <= 0:
        raise ConfigurationError("Site spacing and effective mass must be positive")
    return HBAR2_2ME / (effective_mass * site_spacing ** 2)


@dataclass
class BarrierProfile:
    """Onsite potential and interaction weights of the 1D chain."""

    n_sites: int
    site_spacing: float
    onsite_potential: np.ndarray
    interaction_profile: np.ndarray
    hopping: float
    e_x: float = 1.0
    e_y: float = 1.0
    v_c: float = 0.0
    broadening: float = 1e-6

    @property
    def site_energies(self) -> np.ndarray:
        """Hamiltonian diagonal V_j + 2 tau; the local band is [V_j, V_j + 4 tau]."""
        return self.onsite_potential + 2.0 * self.hopping

    @property
    def eta(self) -> float:
        """Imaginary broadening floor in meV."""
        return self.broadening * self.hopping

    @property
    def central_sites(self) -> np.ndarray:
        return np.flatnonzero(self.interaction_profile > 0)

    @property
    def central_weights(self) -> np.ndarray:
        weights = self.interaction_profile[self.central_sites]
        return weights / weights.sum()

    def shifted(self, delta: float) -> 'BarrierProfile':
        """Same barrier with V_c raised by ``delta``."""
        return BarrierProfile(self.n_sites, self.site_spacing, self.onsite_potential + delta,
                              self.interaction_profile.copy(), self.hopping, self.e_x,
                              self.e_y, self.v_c + delta, self.broadening)


def build_barrier(e_x: float, e_y: float, v_c: float, n_sites: Optional[int] = None,
                  hopping: Optional[float] = None, site_spacing: float = 2.0,
                  effective_mass: float = 0.067, floor_depth: float = 10.0,
                  interaction_strength: float = 1.0, central_half_width: float = 0.5,
                  kappa_range: Tuple[float, float] = DEFAULT_KAPPA_RANGE,
                  broadening: float = 1e-6) -> BarrierProfile:
    """
    Discretise the parabolic barrier V(x) = V_c - m* w_x^2 x^2 / 2.

    On the lattice this reads V_j = V_c - E_x^2 j^2 / (4 tau), clipped at
    V_c - floor_depth * E_x and held flat out to the leads. V_j is the local
    band bottom: the chain Hamiltonian carries V_j + 2 tau on its diagonal so
    that low-energy states see the continuum dispersion V_j + hbar^2 k^2 / 2m*.
    The interaction acts on the sites within ``central_half_width``
    oscillator lengths of the top.

    Args:
        e_x: Barrier curvature energy (meV)
        e_y: Lateral confinement energy (meV), kept for reference
        v_c: Barrier top (meV)
        n_sites: Odd chain length >= 101; derived from the floor when omitted
        hopping: Hopping energy (meV); derived from site_spacing when omitted
        site_spacing: Lattice constant (nm)
        effective_mass: Effective mass in units of m_e
        floor_depth: Depth of the flat floor in units of E_x
        interaction_strength: U on the central sites (meV)
        central_half_width: Half width of the interaction region (oscillator lengths)
        kappa_range: Energies of interest, (E - V_c) / E_x
        broadening: Imaginary broadening floor in units of the hopping

    Returns:
        BarrierProfile

    Raises:
        ValueError: If n_sites is even or below 101, or E_x is not positive
        ConfigurationError: If the energies of interest approach a band edge
    """
    if e_x <= 0:
        raise ValueError(f"E_x must be positive, got {e_x}")
    tau = hopping_energy(site_spacing, effective_mass) if hopping is None else float(hopping)
    if tau <= 0:
        raise ConfigurationError("Hopping must be positive")
    floor_site = np.sqrt(4.0 * tau * floor_depth / e_x)
    if n_sites is None:
        half = int(np.ceil(floor_site)) + 10
        n_sites = max(2 * half + 1, 101)
    elif n_sites < 101 or n_sites % 2 == 0:
        raise ValueError(f"n_sites must be odd and >= 101, got {n_sites}")
    half = n_sites // 2

    j = np.arange(-half, half + 1, dtype=float)
    onsite = v_c - (e_x * j) ** 2 / (4.0 * tau)
    onsite = np.maximum(onsite, v_c - floor_depth * e_x)

    oscillator_sites = np.sqrt(2.0 * tau / e_x)
    central = np.abs(j) <= central_half_width * oscillator_sites
    central[half] = True
    if central[0] or central[-1]:
        raise ConfigurationError("Interaction region reaches the chain ends; use more sites")
    interaction = np.where(central, interaction_strength, 0.0)

    profile = BarrierProfile(n_sites, site_spacing, onsite, interaction, tau, e_x, e_y, v_c,
                             broadening)
    energies = v_c + np.asarray(kappa_range, dtype=float) * e_x
    check_band_edges(profile, energies)
    logger.debug("Barrier built: %d sites, tau=%.2f meV, %d central sites",
                 n_sites, tau, central.sum())
    return profile


def check_band_edges(profile: BarrierProfile, energies: np.ndarray):
    """
    Raise ConfigurationError if any energy comes within 10% of the upper band edge.

    The upper edge V_j + 4 tau is a lattice artefact with no continuum
    counterpart and is lowest at the floor. Energies below a local band
    bottom are tunnelling states and need no guard.
    """
    energies = np.asarray(energies, dtype=float)
    margin = BAND_EDGE_MARGIN * 4.0 * profile.hopping
    highest = np.min(profile.onsite_potential) + 4.0 * profile.hopping - margin
    if energies.max() > highest:
        raise ConfigurationError(
            f"Energies up to {energies.max():.3f} meV come within 10% of the tight-binding "
            f"upper band edge ({highest:.3f} meV allowed); raise the hopping")


def lead_self_energy(z: np.ndarray, band_centre: float, hopping: float) -> np.ndarray:
    """Retarded self-energy of a semi-infinite uniform chain with the given band centre."""
    w = (z - band_centre) / (2.0 * hopping)
    root = np.sqrt(w - 1.0) * np.sqrt(w + 1.0)
    return hopping * (w - root)


def site_greens_diagonal(profile: BarrierProfile, energies: np.ndarray,
                         sites: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Diagonal of the retarded Green's function by recursive sweeps.

    Returns an array of shape (len(sites), len(energies)).
    """
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    z = energies + 1j * profile.eta
    v = profile.site_energies
    tau2 = profile.hopping ** 2
    n = profile.n_sites

    sigma_left = lead_self_energy(z, v[0], profile.hopping)
    sigma_right = lead_self_energy(z, v[-1], profile.hopping)

    # left-connected and right-connected surface functions
    left = np.empty((n, z.size), dtype=complex)
    left[0] = 1.0 / (z - v[0] - sigma_left)
    for i in range(1, n):
        left[i] = 1.0 / (z - v[i] - tau2 * left[i - 1])
    right = np.empty((n, z.size), dtype=complex)
    right[-1] = 1.0 / (z - v[-1] - sigma_right)
    for i in range(n - 2, -1, -1):
        right[i] = 1.0 / (z - v[i] - tau2 * right[i + 1])

    sites = np.arange(n) if sites is None else np.asarray(sites, dtype=int)
    diagonal = np.empty((sites.size, z.size), dtype=complex)
    for row, i in enumerate(sites):
        from_left = sigma_left if i == 0 else tau2 * left[i - 1]
        from_right = sigma_right if i == n - 1 else tau2 * right[i + 1]
        diagonal[row] = 1.0 / (z - v[i] - from_left - from_right)
    return diagonal


def site_ldos(profile: BarrierProfile, energies: np.ndarray,
              sites: Optional[Sequence[int]] = None) -> np.ndarray:
    """Per-spin LDOS (1/meV per site) from -Im G / pi."""
    return np.maximum(-site_greens_diagonal(profile, energies, sites).imag / np.pi, 0.0)


def region_ldos(profile: BarrierProfile, energies: np.ndarray) -> np.ndarray:
    """Interaction-weighted average LDOS over the central region."""
    ldos = site_ldos(profile, energies, profile.central_sites)
    return profile.central_weights @ ldos


@dataclass
class LdosCurve:
    """Central-region LDOS as a function of kappa = (mu - V_c) / E_x."""

    kappa_grid: np.ndarray
    ldos: np.ndarray
    ldos_max: float
    kappa_at_max: float
    e_x: float = 1.0
    temperature: float = 0.0

    @classmethod
    def from_samples(cls, kappa_grid, ldos, e_x: float = 1.0,
                     temperature: float = 0.0) -> 'LdosCurve':
        kappa_grid = np.asarray(kappa_grid, dtype=float)
        ldos = np.asarray(ldos, dtype=float)
        if np.any(ldos < 0):
            raise ValueError("LDOS must be non-negative")
        peak = int(np.argmax(ldos))
        return cls(kappa_grid, ldos, float(ldos[peak]), float(kappa_grid[peak]), e_x, temperature)

    def interpolant(self) -> Callable[[np.ndarray], np.ndarray]:
        """Shape-preserving LDOS(kappa); zero below the grid, held flat above it."""
        pchip = PchipInterpolator(self.kappa_grid, self.ldos, extrapolate=False)
        lo, hi = self.kappa_grid[0], self.kappa_grid[-1]

        def evaluate(kappa):
            kappa = np.asarray(kappa, dtype=float)
            values = np.maximum(pchip(np.clip(kappa, lo, hi)), 0.0)
            return np.where(kappa < lo, 0.0, values)
        return evaluate

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'kappa': self.kappa_grid, 'ldos_per_meV': self.ldos})


def ldos_ridge(profile: BarrierProfile, mu: float, temperature: float,
               kappa_grid: Optional[np.ndarray] = None, fine_step: float = 0.01) -> LdosCurve:
    """
    LDOS ridge seen at fixed mu while V_c is swept.

    At each kappa the barrier is shifted to V_c' = mu - kappa * E_x and the
    LDOS is read at mu, which equals the unshifted LDOS at V_c + kappa * E_x.
    For T > 0 the curve is convolved with -df/dE.
    """
    if temperature < 0:
        raise ValueError("Temperature must be >= 0")
    if kappa_grid is None:
        kappa_grid = np.linspace(*DEFAULT_KAPPA_RANGE, DEFAULT_KAPPA_POINTS)
    kappa_grid = np.asarray(kappa_grid, dtype=float)
    theta = thermal_energy(temperature) / profile.e_x

    def ldos_at(kappa):
        swept_v_c = mu - kappa * profile.e_x
        energies = mu - (swept_v_c - profile.v_c)
        check_band_edges(profile, energies)
        return region_ldos(profile, energies)

    if theta > 0:
        pad = THERMAL_SPAN * theta
        if kappa_grid.size > 1:
            fine_step = min(fine_step, float(np.min(np.diff(kappa_grid))))
        n_fine = int(np.ceil((kappa_grid[-1] - kappa_grid[0] + 2 * pad) / fine_step)) + 1
        fine = np.linspace(kappa_grid[0] - pad, kappa_grid[-1] + pad, n_fine)
        spline = CubicSpline(fine, ldos_at(fine))
        ldos = np.maximum(thermal_average(spline, kappa_grid, theta), 0.0)
    else:
        ldos = ldos_at(kappa_grid)

    curve = LdosCurve.from_samples(kappa_grid, ldos, profile.e_x, temperature)
    logger.debug("LDOS ridge: max %.5f /meV at kappa=%.3f (E_x=%.3f meV, T=%.3f K)",
                 curve.ldos_max, curve.kappa_at_max, profile.e_x, temperature)
    return curve


def u_eff(curve: LdosCurve, U: float) -> np.ndarray:
    """Effective interaction U_eff(kappa) = U * LDOS(kappa)."""
    if U < 0:
        raise ValueError(f"U must be >= 0, got {U}")
    return U * curve.ldos


@dataclass
class HartreeMap:
    """First-order effective Hartree barrier V_c^h(V_c), ascending in V_c."""

    v_c_grid: np.ndarray
    v_c_hartree: np.ndarray
    u_eff_grid: np.ndarray
    e_x: float = 1.0
    mu: float = 0.0
    coordinate: str = "bare"
    _splines: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def kappa_grid(self) -> np.ndarray:
        """Bare kappa, ascending."""
        return ((self.mu - self.v_c_grid) / self.e_x)[::-1]

    @property
    def kappa_hartree(self) -> np.ndarray:
        """Effective kappa_h on the ascending bare grid."""
        return ((self.mu - self.v_c_hartree) / self.e_x)[::-1]

    @property
    def max_u_eff(self) -> float:
        return float(np.max(self.u_eff_grid))

    def _spline(self, name: str) -> CubicSpline:
        if name not in self._splines:
            values = self.kappa_hartree if name == "kappa" else self.u_eff_grid[::-1]
            self._splines[name] = CubicSpline(self.kappa_grid, values)
        return self._splines[name]

    def effective_kappa(self, kappa: np.ndarray) -> np.ndarray:
        """kappa_h(kappa): identity offset below the grid, linear continuation above."""
        kappa = np.asarray(kappa, dtype=float)
        grid = self.kappa_grid
        k_h = self.kappa_hartree
        u = self.u_eff_grid[::-1]
        inside = self._spline("kappa")(np.clip(kappa, grid[0], grid[-1]))
        below = k_h[0] + (kappa - grid[0])
        above = k_h[-1] + (1.0 - u[-1]) * (kappa - grid[-1])
        return np.where(kappa < grid[0], below, np.where(kappa > grid[-1], above, inside))

    def u_eff_at(self, kappa: np.ndarray) -> np.ndarray:
        """U_eff on arbitrary bare kappa; zero below the grid, held flat above it."""
        kappa = np.asarray(kappa, dtype=float)
        grid = self.kappa_grid
        u = self.u_eff_grid[::-1]
        inside = np.maximum(self._spline("u")(np.clip(kappa, grid[0], grid[-1])), 0.0)
        return np.where(kappa < grid[0], 0.0, np.where(kappa > grid[-1], u[-1], inside))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'v_c_meV': self.v_c_grid,
            'v_c_hartree_meV': self.v_c_hartree,
            'u_eff': self.u_eff_grid,
        })


def hartree_map(profile: Optional[BarrierProfile], U: float, mu: float, temperature: float,
                v_c_range: Optional[Tuple[float, float]] = None, coordinate: str = "bare",
                curve: Optional[LdosCurve] = None, n_points: int = 2401,
                rtol: float = 1e-9, atol: float = 1e-11) -> HartreeMap:
    """
    Effective Hartree barrier from dV_c^h/dV_c = 1 - U_eff.

    Integration starts deep in pinch-off (largest V_c) where U_eff vanishes.
    The default ``coordinate="bare"`` reads the LDOS ridge at V_c, so the
    total shift V_c - V_c^h is U times the area under the ridge. The opt-in
    ``"effective"`` reads it at the renormalised barrier V_c^h instead,
    which stretches the ridge over a wider V_c span.

    Raises:
        ValueError: For negative U or an unknown coordinate
        ModelValidityError: If max U_eff >= 1
    """
    if U < 0:
        raise ValueError(f"U must be >= 0, got {U}")
    if coordinate not in HARTREE_COORDINATES:
        raise ValueError(f"Unknown Hartree coordinate: {coordinate}")
    if curve is None:
        if profile is None:
            raise ValueError("hartree_map needs a barrier profile or a precomputed LDOS curve")
        curve = ldos_ridge(profile, mu, temperature)
    peak = U * curve.ldos_max
    if peak >= 1.0:
        raise ModelValidityError(
            f"max U_eff = {peak:.3f} >= 1: suppression would reverse the sweep")

    e_x = curve.e_x
    if v_c_range is None:
        k_lo, k_hi = float(curve.kappa_grid[0]), float(curve.kappa_grid[-1])
    else:
        v_lo, v_hi = sorted(v_c_range)
        k_lo, k_hi = (mu - v_hi) / e_x, (mu - v_lo) / e_x
    kappa = np.linspace(k_lo, k_hi, n_points)
    ldos = curve.interpolant()

    if U == 0:
        kappa_h = kappa.copy()
        u = np.zeros_like(kappa)
    else:
        bare = coordinate == "bare"

        def rhs(k, y):
            return 1.0 - U * ldos(k if bare else y[0])

        solution = solve_ivp(rhs, (k_lo, k_hi), [k_lo], method="DOP853", t_eval=kappa,
                             rtol=rtol, atol=atol)
        if not solution.success:
            raise ModelValidityError(f"Hartree map integration failed: {solution.message}")
        kappa_h = solution.y[0]
        u = U * ldos(kappa if bare else kappa_h)

    logger.debug("Hartree map (%s): max U_eff %.4f, total shift %.4f E_x",
                 coordinate, float(u.max()), float(kappa[-1] - kappa_h[-1]))
    v_c = mu - kappa * e_x
    v_c_h = mu - kappa_h * e_x
    return HartreeMap(v_c[::-1].copy(), v_c_h[::-1].copy(), u[::-1].copy(), e_x, mu, coordinate)
