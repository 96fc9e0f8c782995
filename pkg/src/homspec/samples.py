"""Sample optical responses: absorbance plus phase on a spectral grid.

Absorbance uses the natural-log convention, T = exp(-A), matching the loss
parameterization of the measurement model.  Conversion helpers to and from
decadic absorbance units (the convention of bench-top spectrometer plots) are
provided.

The Lorentzian model builds the absorptive and dispersive parts from one
complex lineshape, so the stored phase is the Kramers-Kronig transform of the
stored absorbance by construction.  `kramers_kronig_phase` is the independent
numerical check: a discrete Hilbert transform used to validate reconstructions,
never as an estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import hilbert

from .grid import (
    SpectralGrid,
    angular_frequency_from_wavelength,
    flat_half_slice,
    grid_from_header,
)
from .io import read_table, write_table

LN10 = math.log(10.0)


@dataclass(eq=False)
class SampleResponse:
    """Per-bin absorbance A_i (natural log, >= 0) and phase [rad] of a sample."""

    grid: SpectralGrid
    absorbance: np.ndarray
    phase: np.ndarray = field(default=None)

    def __post_init__(self):
        self.absorbance = np.asarray(self.absorbance, dtype=float)
        if self.phase is None:
            self.phase = np.zeros(self.grid.n_bins)
        self.phase = np.asarray(self.phase, dtype=float)
        n = self.grid.n_bins
        if self.absorbance.shape != (n,) or self.phase.shape != (n,):
            raise ValueError("absorbance and phase must have one entry per grid bin")
        if not np.all(np.isfinite(self.absorbance)) or not np.all(np.isfinite(self.phase)):
            raise ValueError("absorbance and phase must be finite")
        if np.any(self.absorbance < 0):
            raise ValueError("absorbance must be non-negative")

    @property
    def transmittance(self) -> np.ndarray:
        return np.exp(-self.absorbance)

    def is_flat_on_long_wavelength_half(self, atol: float = 0.0) -> bool:
        """True when the calibration (long-wavelength) half carries no response."""
        sl = flat_half_slice(self.grid)
        return bool(
            np.all(np.abs(self.absorbance[sl]) <= atol)
            and np.all(np.abs(self.phase[sl]) <= atol)
        )

    def to_csv(self, path) -> None:
        write_table(
            path,
            {
                "wavelength_nm": self.grid.bin_wavelengths_nm,
                "absorbance": self.absorbance,
                "phase_rad": self.phase,
            },
            header=self.grid.header(),
        )

    @classmethod
    def from_csv(cls, path, grid: SpectralGrid | None = None) -> "SampleResponse":
        header, cols = read_table(path)
        file_grid = grid_from_header(header)
        if grid is not None and not grid.same_lattice(file_grid):
            raise ValueError(f"grid in {path} does not match the expected lattice")
        use = grid if grid is not None else file_grid
        # Files store rows in wavelength order; bins are frequency ordered.
        order = np.argsort(-np.asarray(cols["wavelength_nm"]))
        wl_sorted = np.asarray(cols["wavelength_nm"])[order]
        if not np.allclose(wl_sorted, use.bin_wavelengths_nm, rtol=1e-9):
            raise ValueError(f"wavelength axis in {path} does not match the grid")
        return cls(use, cols["absorbance"][order], cols["phase_rad"][order])


def decadic_from_natural(absorbance):
    """Natural-log absorbance to decadic absorbance units."""
    return np.asarray(absorbance, dtype=float) / LN10


def natural_from_decadic(absorbance_decadic):
    return np.asarray(absorbance_decadic, dtype=float) * LN10


def flat_response(grid: SpectralGrid, transmittance: float, phase: float = 0.0) -> SampleResponse:
    """Spectrally flat sample: A_i = -ln(transmittance), constant phase."""
    if not 0.0 < transmittance <= 1.0:
        raise ValueError("transmittance must lie in (0, 1]")
    a = -math.log(transmittance)
    return SampleResponse(grid, np.full(grid.n_bins, a), np.full(grid.n_bins, float(phase)))


def lorentzian_response(
    grid: SpectralGrid,
    center_nm: float,
    fwhm_nm: float,
    peak_absorbance: float,
) -> SampleResponse:
    """Single absorption line with its matching dispersive phase.

    Both quadratures come from the complex lineshape
    L(omega) = gamma / ((omega0 - omega) - i*gamma)  (gamma = HWHM in rad/s):

        A(omega)   = peak * Im L = peak * gamma^2 / ((omega - omega0)^2 + gamma^2)
        Phi(omega) = (peak / 2) * Re L

    L is analytic in the upper half plane, so the pair is exactly
    Kramers-Kronig consistent on the infinite frequency line; the phase
    extrema are +-peak/4 at one HWHM either side of center.
    """
    if fwhm_nm <= 0:
        raise ValueError("fwhm must be positive")
    if fwhm_nm >= 2 * center_nm:
        raise ValueError("fwhm too wide to convert to a frequency width")
    if peak_absorbance < 0:
        raise ValueError("peak absorbance must be non-negative")
    wl = grid.bin_wavelengths_nm
    if not wl.min() <= center_nm <= wl.max():
        raise ValueError(
            f"line center {center_nm} nm is outside the grid span "
            f"[{wl.min():.2f}, {wl.max():.2f}] nm"
        )
    omega0 = angular_frequency_from_wavelength(center_nm)
    hwhm = 0.5 * (
        angular_frequency_from_wavelength(center_nm - 0.5 * fwhm_nm)
        - angular_frequency_from_wavelength(center_nm + 0.5 * fwhm_nm)
    )
    detuning = grid.bin_frequencies - omega0
    denom = detuning**2 + hwhm**2
    absorbance = peak_absorbance * hwhm**2 / denom
    phase = 0.5 * peak_absorbance * hwhm * (-detuning) / denom
    return SampleResponse(grid, absorbance, phase)


def confined_to_active_half(response: SampleResponse) -> SampleResponse:
    """Zero the long-wavelength half so the response is campaign-eligible.

    Campaign reconstruction assumes the sample acts only on the
    short-wavelength half of the band; this chops any residual tail off the
    calibration half.  The result is the ground truth a closed-loop run is
    judged against.
    """
    sl = flat_half_slice(response.grid)
    absorbance = response.absorbance.copy()
    phase = response.phase.copy()
    absorbance[sl] = 0.0
    phase[sl] = 0.0
    return SampleResponse(response.grid, absorbance, phase)


def kramers_kronig_phase(
    grid: SpectralGrid,
    absorbance: np.ndarray,
    taper_fraction: float = 0.1,
    pad_factor: int = 8,
) -> np.ndarray:
    """Discrete Kramers-Kronig phase estimate for an absorbance spectrum.

    Computes Phi = H[A/2] with the Hilbert-transform convention
    H[f](w) = (1/pi) P.V. integral f(w') / (w' - w) dw', evaluated by FFT on
    the uniform frequency lattice.  The spectrum is apodized with a cosine
    taper over the outer `taper_fraction` of bins and embedded in a buffer
    `pad_factor` times longer to suppress periodic wrap-around.  Accuracy is
    validation grade: about 1% of the peak phase over the central 80% of the
    band for lines well inside the span.
    """
    a = np.asarray(absorbance, dtype=float)
    if a.shape != (grid.n_bins,):
        raise ValueError("absorbance must have one entry per grid bin")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ValueError("absorbance must be finite and non-negative")
    if pad_factor < 1:
        raise ValueError("pad_factor must be >= 1")

    n = grid.n_bins
    half = 0.5 * a
    k = int(round(taper_fraction * n))
    if k > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * (np.arange(k) + 0.5) / k))
        window = np.ones(n)
        window[:k] = ramp
        window[n - k :] = ramp[::-1]
        half = half * window

    m = pad_factor * n
    buf = np.zeros(m)
    start = (m - n) // 2
    buf[start : start + n] = half
    # scipy's analytic signal is x + i*H_sp[x] with H_sp = -H, hence the sign.
    return -hilbert(buf).imag[start : start + n]
