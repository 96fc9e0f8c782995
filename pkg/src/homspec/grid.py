"""Spectral bin lattice with energy-conserving partner pairing.

Detected photons are histogrammed on a lattice of angular frequencies that is
uniform in frequency and symmetric about half the pump frequency.  With bins
sorted by increasing frequency (0-based indices), bin i and bin N-1-i then
satisfy

    omega_i + omega_{N-1-i} = omega_pump

exactly, which is what lets a click pair be tested against energy
conservation by bin index alone.  Users specify the band in wavelength
(center and width in nm, the natural units of a grating spectrometer); the
conversion to the frequency lattice happens once, here.

The physical spectrometer pixels are approximately uniform in wavelength, not
frequency.  The model grid trades that fidelity for an exact per-bin pairing
rule; bin index is the canonical coordinate everywhere downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Vacuum speed of light in nm/s.
C_NM_PER_S = 299_792_458.0 * 1e9


def angular_frequency_from_wavelength(wavelength_nm):
    """omega [rad/s] for a vacuum wavelength [nm]; accepts scalars or arrays."""
    wl = np.asarray(wavelength_nm, dtype=float)
    if np.any(wl <= 0):
        raise ValueError("wavelength must be positive")
    out = 2.0 * math.pi * C_NM_PER_S / wl
    return float(out) if np.isscalar(wavelength_nm) else out


def wavelength_from_angular_frequency(omega_rad_s):
    """Vacuum wavelength [nm] for an angular frequency [rad/s]."""
    w = np.asarray(omega_rad_s, dtype=float)
    if np.any(w <= 0):
        raise ValueError("angular frequency must be positive")
    out = 2.0 * math.pi * C_NM_PER_S / w
    return float(out) if np.isscalar(omega_rad_s) else out


@dataclass(frozen=True, eq=False)
class SpectralGrid:
    """Immutable frequency lattice shared by every stage of the pipeline.

    Attributes:
        n_bins: even number of spectral bins N.
        pump_frequency: omega_pump [rad/s]; partner bins sum to this exactly.
        bin_frequencies: N angular frequencies [rad/s], strictly increasing,
            symmetric about pump_frequency / 2.
    """

    n_bins: int
    pump_frequency: float
    bin_frequencies: np.ndarray = field(repr=False)

    def __post_init__(self):
        freqs = np.asarray(self.bin_frequencies, dtype=float)
        if self.n_bins % 2 != 0 or self.n_bins < 2:
            raise ValueError("n_bins must be even and >= 2")
        if freqs.shape != (self.n_bins,):
            raise ValueError("bin_frequencies length must equal n_bins")
        if np.any(np.diff(freqs) <= 0):
            raise ValueError("bin frequencies must be strictly increasing")
        if freqs[0] <= 0:
            raise ValueError("bin frequencies must be positive")
        pair_sum = freqs + freqs[::-1]
        if np.max(np.abs(pair_sum - self.pump_frequency)) > 1e-9 * self.pump_frequency:
            raise ValueError("partner bins must sum to the pump frequency")
        freqs.setflags(write=False)
        object.__setattr__(self, "bin_frequencies", freqs)

    # -- derived quantities -------------------------------------------------

    @property
    def center_frequency(self) -> float:
        return 0.5 * self.pump_frequency

    @property
    def pump_wavelength_nm(self) -> float:
        return wavelength_from_angular_frequency(self.pump_frequency)

    @property
    def bin_wavelengths_nm(self) -> np.ndarray:
        return wavelength_from_angular_frequency(self.bin_frequencies)

    @property
    def frequency_step(self) -> float:
        return float(self.bin_frequencies[1] - self.bin_frequencies[0])

    @property
    def partner_indices(self) -> np.ndarray:
        """Index array p with p[i] = N-1-i."""
        return np.arange(self.n_bins - 1, -1, -1)

    @property
    def delta_omega(self) -> np.ndarray:
        """Per-bin partner frequency difference omega_i - omega_{N-1-i}."""
        return self.bin_frequencies - self.bin_frequencies[::-1]

    def partner(self, i: int) -> int:
        """Energy-conservation partner of bin i (involution)."""
        if not 0 <= i < self.n_bins:
            raise IndexError(f"bin index {i} outside [0, {self.n_bins})")
        return self.n_bins - 1 - i

    # -- provenance header --------------------------------------------------

    def header(self) -> dict:
        wl = self.bin_wavelengths_nm
        return {
            "n_bins": self.n_bins,
            "pump_wavelength_nm": repr(self.pump_wavelength_nm),
            "wavelength_min_nm": repr(float(wl.min())),
            "wavelength_max_nm": repr(float(wl.max())),
        }

    def same_lattice(self, other: "SpectralGrid", rtol: float = 1e-12) -> bool:
        return (
            self.n_bins == other.n_bins
            and math.isclose(self.pump_frequency, other.pump_frequency, rel_tol=rtol)
            and np.allclose(self.bin_frequencies, other.bin_frequencies, rtol=rtol)
        )


def make_grid(center_wavelength_nm: float, bandwidth_nm: float, n_bins: int) -> SpectralGrid:
    """Build the frequency-uniform lattice for a wavelength band.

    The band [center - bw/2, center + bw/2] is converted to a frequency span,
    then recentered on omega_center = 2*pi*c / center so the partner-sum
    invariant holds exactly.  The grid endpoints therefore deviate slightly
    (sub-percent for realistic bands) from the requested wavelength edges.
    """
    if n_bins % 2 != 0 or n_bins < 2:
        raise ValueError("n_bins must be even and >= 2 (partner pairing is undefined otherwise)")
    if bandwidth_nm <= 0:
        raise ValueError("bandwidth must be positive")
    if center_wavelength_nm <= 0:
        raise ValueError("center wavelength must be positive")
    if bandwidth_nm >= 2 * center_wavelength_nm:
        raise ValueError("bandwidth too wide for the requested center wavelength")

    center_omega = angular_frequency_from_wavelength(center_wavelength_nm)
    omega_hi = angular_frequency_from_wavelength(center_wavelength_nm - 0.5 * bandwidth_nm)
    omega_lo = angular_frequency_from_wavelength(center_wavelength_nm + 0.5 * bandwidth_nm)
    span = omega_hi - omega_lo

    # Symmetric offsets (i - (N-1)/2) * step guarantee exact partner sums up
    # to one rounding of the final addition.
    step = span / (n_bins - 1)
    offsets = (np.arange(n_bins) - (n_bins - 1) / 2.0) * step
    freqs = center_omega + offsets
    return SpectralGrid(n_bins=n_bins, pump_frequency=2.0 * center_omega, bin_frequencies=freqs)


def grid_from_header(header: dict) -> SpectralGrid:
    """Reconstruct a grid from the provenance header written by `header()`."""
    n_bins = int(header["n_bins"])
    pump_wl = float(header["pump_wavelength_nm"])
    wl_min = float(header["wavelength_min_nm"])
    wl_max = float(header["wavelength_max_nm"])
    omega_lo = angular_frequency_from_wavelength(wl_max)
    omega_hi = angular_frequency_from_wavelength(wl_min)
    pump = angular_frequency_from_wavelength(pump_wl)
    center = 0.5 * pump
    step = (omega_hi - omega_lo) / (n_bins - 1)
    offsets = (np.arange(n_bins) - (n_bins - 1) / 2.0) * step
    return SpectralGrid(n_bins=n_bins, pump_frequency=pump, bin_frequencies=center + offsets)


def active_half_slice(grid: SpectralGrid) -> slice:
    """Bins where campaign samples may absorb: the short-wavelength half.

    The reconstruction attributes differential quantities to these bins; their
    long-wavelength partners are required to be flat.
    """
    return slice(grid.n_bins // 2, grid.n_bins)


def flat_half_slice(grid: SpectralGrid) -> slice:
    """Long-wavelength (low-frequency) bins that must carry no sample response."""
    return slice(0, grid.n_bins // 2)
