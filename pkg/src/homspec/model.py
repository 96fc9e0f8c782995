"""Analytic measurement model for the two-photon interferometer.

One emitted photon pair occupies partner bins (i, N-1-i): the sample-arm
photon at bin i with amplitude transmission sqrt(T_i) and phase phi_i, the
reference-arm photon at the partner bin with transmission sqrt(R).  The 50:50
beam splitter superposes the two emission orderings, so a surviving pair
distributes over the bunched (same output channel) and antibunched (opposite
channels) patterns with weights

    |s_i + s_j|^2  and  |s_i - s_j|^2,   s_k = psi_k sqrt(T_k R_partner) e^{i phi_k},

while every lossy branch (photon absorbed in an arm, or missed by a detector
after the splitter) contributes classically.  `outcome_probabilities` returns
the complete, mutually exclusive per-attempt outcome distribution; everything
else in the package (expected rates, Monte Carlo sampling, estimator oracles)
is derived from it.

Imperfect spatial overlap of the two photons is modeled by scaling only the
interference cross-term by mode_overlap in [0, 1]; at 1 the ideal formulas
are recovered, below 1 the fringe visibility drops without touching any
non-interfering rate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .grid import SpectralGrid
from .samples import SampleResponse


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class BiphotonSource:
    """Pair source: emission probability per attempt and spectral amplitude.

    spectral_amplitude is real, non-negative, symmetric between partner bins
    and normalized so sum(amplitude^2) = 1.
    """

    grid: SpectralGrid
    pair_probability: float
    spectral_amplitude: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.pair_probability < 1.0:
            raise ValueError("pair probability must lie in [0, 1)")
        amp = np.asarray(self.spectral_amplitude, dtype=float)
        if amp.shape != (self.grid.n_bins,):
            raise ValueError("spectral amplitude must have one entry per bin")
        if np.any(amp < 0) or not np.all(np.isfinite(amp)):
            raise ValueError("spectral amplitude must be finite and non-negative")
        norm = float(np.sum(amp**2))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError("spectral amplitude must be normalized (sum of squares = 1)")
        if np.max(np.abs(amp - amp[::-1])) > 1e-12:
            raise ValueError("spectral amplitude must be symmetric between partner bins")
        amp.setflags(write=False)
        self.spectral_amplitude = amp

    @property
    def bin_weights(self) -> np.ndarray:
        """|psi_i|^2, the emission probability split across pair types."""
        return self.spectral_amplitude**2


def gaussian_source(
    grid: SpectralGrid,
    pair_probability: float,
    width_fraction: float = 0.2,
) -> BiphotonSource:
    """Truncated-Gaussian spectrum, symmetric about the degeneracy frequency.

    width_fraction is the Gaussian sigma as a fraction of the grid's full
    frequency span.
    """
    if width_fraction <= 0:
        raise ValueError("width fraction must be positive")
    n = grid.n_bins
    # Index-based offsets keep the amplitude exactly partner symmetric.
    x = (np.arange(n) - (n - 1) / 2.0) / (n - 1)
    amp = np.exp(-0.5 * (x / width_fraction) ** 2)
    amp = amp / np.sqrt(np.sum(amp**2))
    return BiphotonSource(grid, pair_probability, amp)


@dataclass(eq=False)
class ArmConfig:
    """Optical paths between the source and the beam splitter.

    The sample arm carries scattering loss chi_i plus the sample absorbance
    theta_i (intensity transmission T_i = exp(-chi_i - theta_i)) and the
    sample phase.  The stage and cuvette delays enter as the linear spectral
    phase -omega_i * (stage_delay + cuvette_delay) on the sample arm.  Either
    arm can be blocked for calibration exposures.
    """

    grid: SpectralGrid
    scattering_loss: np.ndarray
    sample_absorbance: np.ndarray
    sample_phase: np.ndarray
    reference_transmission: np.ndarray
    stage_delay_s: float = 0.0
    cuvette_delay_s: float = 0.0
    sample_blocked: bool = False
    reference_blocked: bool = False

    def __post_init__(self):
        n = self.grid.n_bins
        for name in ("scattering_loss", "sample_absorbance", "sample_phase", "reference_transmission"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape == ():
                arr = np.full(n, float(arr))
            if arr.shape != (n,):
                raise ValueError(f"{name} must be a scalar or have one entry per bin")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            setattr(self, name, arr)
        if np.any(self.scattering_loss < 0) or np.any(self.sample_absorbance < 0):
            raise ValueError("losses must be non-negative")
        if np.any((self.reference_transmission < 0) | (self.reference_transmission > 1)):
            raise ValueError("reference transmission must lie in [0, 1]")
        if not np.isfinite(self.stage_delay_s) or not np.isfinite(self.cuvette_delay_s):
            raise ValueError("delays must be finite")

    @classmethod
    def from_sample(
        cls,
        sample: SampleResponse | None,
        grid: SpectralGrid,
        scattering_loss=0.0,
        reference_transmission=1.0,
        stage_delay_s: float = 0.0,
        cuvette_delay_s: float = 0.0,
        sample_blocked: bool = False,
        reference_blocked: bool = False,
    ) -> "ArmConfig":
        if sample is None:
            absorbance = np.zeros(grid.n_bins)
            phase = np.zeros(grid.n_bins)
        else:
            if not sample.grid.same_lattice(grid):
                raise ValueError("sample grid does not match the measurement grid")
            absorbance = sample.absorbance
            phase = sample.phase
        return cls(
            grid=grid,
            scattering_loss=scattering_loss,
            sample_absorbance=absorbance,
            sample_phase=phase,
            reference_transmission=reference_transmission,
            stage_delay_s=stage_delay_s,
            cuvette_delay_s=cuvette_delay_s,
            sample_blocked=sample_blocked,
            reference_blocked=reference_blocked,
        )

    @property
    def sample_transmission(self) -> np.ndarray:
        if self.sample_blocked:
            return np.zeros(self.grid.n_bins)
        return np.exp(-(self.scattering_loss + self.sample_absorbance))

    @property
    def reference_arm_transmission(self) -> np.ndarray:
        if self.reference_blocked:
            return np.zeros(self.grid.n_bins)
        return self.reference_transmission

    @property
    def sample_arm_phase(self) -> np.ndarray:
        """phi_i = Phi_i - omega_i * (stage delay + cuvette delay)."""
        total_delay = self.stage_delay_s + self.cuvette_delay_s
        return self.sample_phase - self.grid.bin_frequencies * total_delay


@dataclass(eq=False)
class DetectionConfig:
    """Post-splitter detection: per-bin efficiencies, overlap, dark counts."""

    grid: SpectralGrid
    efficiency_a: np.ndarray
    efficiency_b: np.ndarray
    mode_overlap: float = 1.0
    dark_rate_hz: float = 0.0
    timing_jitter_sigma_s: float = 3e-9

    def __post_init__(self):
        n = self.grid.n_bins
        for name in ("efficiency_a", "efficiency_b"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape == ():
                arr = np.full(n, float(arr))
            if arr.shape != (n,):
                raise ValueError(f"{name} must be a scalar or have one entry per bin")
            if np.any(arr <= 0) or np.any(arr > 1):
                raise ValueError(f"{name} must lie in (0, 1]")
            setattr(self, name, arr)
        if not 0.0 <= self.mode_overlap <= 1.0:
            raise ValueError("mode overlap must lie in [0, 1]")
        if self.dark_rate_hz < 0:
            raise ValueError("dark rate must be non-negative")
        if self.timing_jitter_sigma_s < 0:
            raise ValueError("timing jitter must be non-negative")

    @property
    def efficiency_ratio(self) -> np.ndarray:
        """True per-bin ratio efficiency_b / efficiency_a."""
        return self.efficiency_b / self.efficiency_a


@dataclass(eq=False)
class MeasurementConfig:
    """Full optical-path parameterization of one exposure.

    pair_generation_rate is the rate of emitted pairs [pairs/s]; the source
    attempt rate is pair_generation_rate / pair_probability, so expected
    counts of an outcome with per-attempt probability p are
    p * pair_generation_rate * exposure_seconds / pair_probability.
    """

    source: BiphotonSource
    arms: ArmConfig
    detection: DetectionConfig
    exposure_seconds: float
    pair_generation_rate: float

    def __post_init__(self):
        if self.exposure_seconds <= 0:
            raise ValueError("exposure must be positive")
        if self.pair_generation_rate < 0:
            raise ValueError("pair generation rate must be non-negative")
        g = self.source.grid
        if not (self.arms.grid.same_lattice(g) and self.detection.grid.same_lattice(g)):
            raise ValueError("source, arms and detection must share one grid")

    @property
    def grid(self) -> SpectralGrid:
        return self.source.grid

    def with_stage_delay(self, stage_delay_s: float) -> "MeasurementConfig":
        return replace(self, arms=replace(self.arms, stage_delay_s=stage_delay_s))

    def attempts(self, duration_s: float | None = None) -> float:
        """Expected number of pair-generation attempts in an exposure."""
        dt = self.exposure_seconds if duration_s is None else duration_s
        if self.source.pair_probability == 0:
            return 0.0
        return self.pair_generation_rate * dt / self.source.pair_probability

    def config_hash(self) -> str:
        digest = hashlib.sha256()
        for arr in (
            self.source.spectral_amplitude,
            self.arms.sample_transmission,
            self.arms.sample_phase,
            self.arms.reference_arm_transmission,
            self.detection.efficiency_a,
            self.detection.efficiency_b,
        ):
            digest.update(np.ascontiguousarray(arr).tobytes())
        for scalar in (
            self.source.pair_probability,
            self.arms.stage_delay_s,
            self.arms.cuvette_delay_s,
            self.detection.mode_overlap,
            self.detection.dark_rate_hz,
            self.detection.timing_jitter_sigma_s,
            self.exposure_seconds,
            self.pair_generation_rate,
        ):
            digest.update(repr(float(scalar)).encode())
        return digest.hexdigest()


# ---------------------------------------------------------------------------
# outcome probabilities
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class OutcomeProbabilities:
    """Mutually exclusive per-attempt detection outcomes.

    single_a[i] / single_b[i]: exactly one click, at channel A / B, bin i.
    pair_aa[i] / pair_bb[i]: both photons in one channel at the unordered bin
        pair {i, partner(i)}; the array is partner-symmetric, so each physical
        outcome appears at both entries and sums are halved.
    pair_ab[i]: antibunched pair with the A click at bin i and the B click at
        the partner bin; entries at i and partner(i) are distinct outcomes.
    vacuum: no click at all (no emission, photons lost, or missed detections).
    """

    grid: SpectralGrid
    vacuum: float
    single_a: np.ndarray
    single_b: np.ndarray
    pair_aa: np.ndarray
    pair_bb: np.ndarray
    pair_ab: np.ndarray

    @property
    def marginal_singles_a(self) -> np.ndarray:
        """Unconditioned click probability per A bin (paired or not)."""
        return self.single_a + self.pair_aa + self.pair_ab

    @property
    def marginal_singles_b(self) -> np.ndarray:
        return self.single_b + self.pair_bb + self.pair_ab[::-1]

    def total(self) -> float:
        """Probability mass over all exclusive outcomes; 1 if complete."""
        return float(
            self.vacuum
            + np.sum(self.single_a)
            + np.sum(self.single_b)
            + 0.5 * (np.sum(self.pair_aa) + np.sum(self.pair_bb))
            + np.sum(self.pair_ab)
        )


def pair_amplitude(config: MeasurementConfig, i: int, j: int) -> complex:
    """Two-photon detection amplitude for sample-arm bin i, reference-arm bin j.

    Equals sqrt(T_i R_j) * exp(i phi_i): the reference arm is lossless in
    phase by convention, all delays and sample phase live on the sample arm.
    """
    grid = config.grid
    if not (0 <= i < grid.n_bins and 0 <= j < grid.n_bins):
        raise IndexError("bin index outside the grid")
    t = config.arms.sample_transmission[i]
    r = config.arms.reference_arm_transmission[j]
    phi = config.arms.sample_arm_phase[i]
    return complex(np.sqrt(t * r) * np.exp(1j * phi))


def outcome_probabilities(config: MeasurementConfig) -> OutcomeProbabilities:
    """Exact per-attempt outcome distribution for one exposure configuration."""
    grid = config.grid
    g = config.source.pair_probability
    weights = config.source.bin_weights
    t = config.arms.sample_transmission
    r = config.arms.reference_arm_transmission
    phi = config.arms.sample_arm_phase
    eta_a = config.detection.efficiency_a
    eta_b = config.detection.efficiency_b
    mu = config.detection.mode_overlap

    rev = slice(None, None, -1)
    t_p = t[rev]
    r_p = r[rev]
    phi_p = phi[rev]
    weights_p = weights[rev]
    eta_a_p = eta_a[rev]
    eta_b_p = eta_b[rev]

    # Both-survive weight of pair type i (sample photon at i, reference photon
    # at partner) and the interference cross term between type i and type
    # partner(i).
    own = weights * t * r_p
    cross = np.sqrt(own * own[rev]) * np.cos(phi - phi_p)
    # Squared moduli of the two-path amplitudes: clamp the cancellation
    # rounding residue so Poisson rates never go negative.
    u_plus = np.maximum(own + own[rev] + 2.0 * mu * cross, 0.0)
    u_minus = np.maximum(own + own[rev] - 2.0 * mu * cross, 0.0)

    pair_aa = 0.25 * g * eta_a * eta_a_p * u_plus
    pair_bb = 0.25 * g * eta_b * eta_b_p * u_plus
    pair_ab = 0.25 * g * eta_a * eta_b_p * u_minus

    # One photon lost inside an arm: the survivor reaches bin i with the full
    # pair-type weight, then splits 50:50 over the output channels.
    lone_at_i = g * (weights * t * (1.0 - r_p) + weights_p * (1.0 - t_p) * r)
    single_a = 0.5 * lone_at_i * eta_a
    single_b = 0.5 * lone_at_i * eta_b

    # Both photons survive but only the bin-i click registers.
    single_a += 0.25 * g * eta_a * (u_plus * (1.0 - eta_a_p) + u_minus * (1.0 - eta_b_p))
    single_b += 0.25 * g * eta_b * (u_plus * (1.0 - eta_b_p) + u_minus * (1.0 - eta_a_p))

    # Vacuum assembled independently of the other branches so that
    # total() == 1 acts as a real consistency check on the algebra above.
    vacuum = (1.0 - g) + g * float(np.sum(weights * (1.0 - t) * (1.0 - r_p)))
    vacuum += float(np.sum(lone_at_i * (1.0 - 0.5 * eta_a - 0.5 * eta_b)))
    vacuum += 0.25 * g * float(
        np.sum(
            0.5 * u_plus * (1.0 - eta_a) * (1.0 - eta_a_p)
            + 0.5 * u_plus * (1.0 - eta_b) * (1.0 - eta_b_p)
            + u_minus * (1.0 - eta_a) * (1.0 - eta_b_p)
        )
    )

    return OutcomeProbabilities(
        grid=grid,
        vacuum=vacuum,
        single_a=single_a,
        single_b=single_b,
        pair_aa=pair_aa,
        pair_bb=pair_bb,
        pair_ab=pair_ab,
    )


# ---------------------------------------------------------------------------
# corrected rates
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SpectraSet:
    """Efficiency-corrected spectra for one stage delay.

    singles[i] combines the unconditioned click counts of both channels with
    the relative-efficiency correction; coincidence_sum / coincidence_diff are
    the corrected bunched+antibunched sum and difference at the partner bin
    pair of i.  The raw partner-diagonal joint spectra are kept alongside:
    bunched_aa/bb count pairs by constituent bin, antibunched_a/b count
    antibunched pairs by the bin of their A-side / B-side click.  Entries
    where the efficiency ratio was unavailable are masked via `valid`.

    Values are probabilities per attempt when built analytically and corrected
    counts when accumulated from processed click streams.
    """

    grid: SpectralGrid
    stage_delay_s: float
    singles: np.ndarray
    coincidence_sum: np.ndarray
    coincidence_diff: np.ndarray
    bunched_aa: np.ndarray
    bunched_bb: np.ndarray
    antibunched_a: np.ndarray
    antibunched_b: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        n = self.grid.n_bins
        for name in (
            "singles",
            "coincidence_sum",
            "coincidence_diff",
            "bunched_aa",
            "bunched_bb",
            "antibunched_a",
            "antibunched_b",
        ):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have one entry per bin")
            setattr(self, name, arr)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != (n,):
            raise ValueError("valid mask must have one entry per bin")


def corrected_rates(
    probabilities: OutcomeProbabilities,
    efficiency_ratio: np.ndarray,
    stage_delay_s: float = 0.0,
) -> SpectraSet:
    """Combine outcome probabilities into efficiency-corrected spectra.

    efficiency_ratio is eta_b / eta_a per bin.  The B-channel contributions
    are rescaled onto the A channel before summing, which cancels the channel
    split and leaves rates proportional to the arm transmissions only.
    """
    ratio = np.asarray(efficiency_ratio, dtype=float)
    grid = probabilities.grid
    if ratio.shape != (grid.n_bins,):
        raise ValueError("efficiency ratio must have one entry per bin")
    if np.any(ratio <= 0) or not np.all(np.isfinite(ratio)):
        raise ValueError("efficiency ratio must be positive and finite")

    inv = 1.0 / ratio
    inv_p = inv[::-1]
    singles = probabilities.marginal_singles_a + inv * probabilities.marginal_singles_b
    ab_a = probabilities.pair_ab
    ab_b = probabilities.pair_ab[::-1]
    bunched = probabilities.pair_aa + inv * inv_p * probabilities.pair_bb
    anti = inv_p * ab_a + inv * ab_b
    return SpectraSet(
        grid=grid,
        stage_delay_s=stage_delay_s,
        singles=singles,
        coincidence_sum=bunched + anti,
        coincidence_diff=bunched - anti,
        bunched_aa=probabilities.pair_aa,
        bunched_bb=probabilities.pair_bb,
        antibunched_a=ab_a,
        antibunched_b=ab_b,
        valid=np.ones(grid.n_bins, dtype=bool),
    )


def expected_spectra(config: MeasurementConfig, stage_delay_s: float | None = None) -> SpectraSet:
    """Corrected rates for a config using its true efficiency ratio."""
    if stage_delay_s is not None:
        config = config.with_stage_delay(stage_delay_s)
    probs = outcome_probabilities(config)
    return corrected_rates(probs, config.detection.efficiency_ratio, config.arms.stage_delay_s)


def hom_interferogram(config: MeasurementConfig, stage_delays_s: np.ndarray) -> np.ndarray:
    """Coincidence-difference matrix over a delay scan.

    Returns shape (n_delays, n_bins); each bin-pair column oscillates in the
    stage delay at the partner frequency difference |omega_i - omega_partner|.
    """
    delays = np.asarray(stage_delays_s, dtype=float)
    if not np.all(np.isfinite(delays)):
        raise ValueError("stage delays must be finite")
    rows = np.empty((delays.size, config.grid.n_bins))
    for k, delay in enumerate(delays):
        rows[k] = expected_spectra(config, delay).coincidence_diff
    return rows


def efficiency_ratio_from_singles(singles_a, singles_b) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin estimate of eta_b / eta_a from unconditioned click spectra.

    Both channels see the same optical state, so the click ratio is the
    efficiency ratio.  Bins with no A counts cannot be calibrated and come
    back masked (ratio NaN, valid False); downstream corrected rates exclude
    them.
    """
    a = np.asarray(singles_a, dtype=float)
    b = np.asarray(singles_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("channel spectra must have matching shapes")
    valid = a > 0
    ratio = np.full(a.shape, np.nan)
    np.divide(b, a, out=ratio, where=valid)
    return ratio, valid
