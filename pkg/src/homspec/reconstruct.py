"""Estimators recovering sample transmission and phase from campaign spectra.

A campaign measures four configurations: the sample of interest (s), the
reference sample (r), and two single-arm calibrations with the reference arm
blocked (0) or the sample arm blocked (0').  Their delay-summed singles and
coincidence-sum spectra feed a calibrated ratio estimator that cancels the
source spectrum, the detection efficiencies and the arm losses bin by bin:
with Q_i the fractional change of the coincidence-to-singles ratio between
(s) and (r), and K_i the blocked-arm correction term, the transmission change
is (1 + K_i) * Q_i - K_i, exact in expectation whenever the long-wavelength
partner half of the band is identical across configurations.

Phase comes from the antibunching fringes: each bin-pair column of the
coincidence-difference interferogram oscillates in the stage delay at the
known partner frequency difference, so a linear least-squares fit with fixed
frequency yields the fringe phase.  The cuvette group delay is estimated
first from the position of the summed-fringe maximum (the classic two-photon
interference dip) and subtracted; differencing sample against reference then
isolates the sample's differential phase on the short-wavelength half.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import SpectralGrid, active_half_slice, grid_from_header
from .io import read_table, write_table
from .model import SpectraSet

CONFIGURATION_LABELS = ("sample", "reference", "blocked_reference", "blocked_sample")


def wrap_phase(phase):
    """Wrap angles to (-pi, pi]."""
    wrapped = np.mod(np.asarray(phase, dtype=float), 2.0 * math.pi)
    if wrapped.ndim == 0:
        return float(wrapped - 2.0 * math.pi) if wrapped > math.pi else float(wrapped)
    out = wrapped.copy()
    out[out > math.pi] -= 2.0 * math.pi
    return out


@dataclass(eq=False)
class CampaignSpectra:
    """One repeat's spectra: a delay scan for each of the four configurations."""

    grid: SpectralGrid
    sample: list
    reference: list
    blocked_reference: list
    blocked_sample: list

    def __post_init__(self):
        delays = None
        for label in CONFIGURATION_LABELS:
            sets: list[SpectraSet] = getattr(self, label)
            if len(sets) == 0:
                raise ValueError(f"configuration {label!r} has no delay steps")
            for s in sets:
                if not s.grid.same_lattice(self.grid):
                    raise ValueError(f"configuration {label!r} uses a different grid")
            axis = np.array([s.stage_delay_s for s in sets])
            if delays is None:
                delays = axis
            elif axis.shape != delays.shape or not np.allclose(axis, delays, rtol=0, atol=1e-18):
                raise ValueError("delay axes differ between configurations")
        self.stage_delays_s = delays

    def stacked(self, label: str, attr: str) -> np.ndarray:
        return np.vstack([getattr(s, attr) for s in getattr(self, label)])

    def delay_summed(self, label: str, attr: str) -> np.ndarray:
        return self.stacked(label, attr).sum(axis=0)

    def combined_valid(self, label: str) -> np.ndarray:
        return np.logical_and.reduce([s.valid for s in getattr(self, label)])


# ---------------------------------------------------------------------------
# transmission estimators
# ---------------------------------------------------------------------------


def estimate_transmission(
    campaign: CampaignSpectra, min_denominator: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Calibrated per-bin estimate of T_sample / T_reference.

    Uses delay-summed singles and coincidence sums (both are fringe-free, so
    summing the scan only improves statistics).  Returns (estimate, valid);
    bins with a vanishing calibration denominator are masked.  The estimate
    is meaningful on bins whose partner response is configuration independent,
    which campaigns arrange to be the short-wavelength half.

    min_denominator masks bins whose calibration denominators fall below a
    statistics floor; ratios of few-count Poisson variables are severely
    biased, so campaigns (count units) set this to a few tens of counts.
    Analytic rates (probability units) keep the default 0.
    """
    s_s = campaign.delay_summed("sample", "singles")
    s_r = campaign.delay_summed("reference", "singles")
    s_0 = campaign.delay_summed("blocked_reference", "singles")
    s_0p = campaign.delay_summed("blocked_sample", "singles")
    c_s = campaign.delay_summed("sample", "coincidence_sum")
    c_r = campaign.delay_summed("reference", "coincidence_sum")

    valid = np.logical_and.reduce(
        [campaign.combined_valid(label) for label in CONFIGURATION_LABELS]
    )

    rev = slice(None, None, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        # Blocked-arm correction term, a product of three singles ratios.
        correction = (s_0[rev] / s_0p[rev]) * (s_0p / s_0) * (s_0 / (s_r - s_0p))
        # Fractional change of the coincidence-to-singles ratio.
        ratio_change = (c_s / s_s[rev]) / (c_r / s_r[rev])
        estimate = (1.0 + correction) * ratio_change - correction

    floor = max(min_denominator, 0.0)
    denominators = [s_0p, s_0p[rev], s_0, s_0[rev], s_r - s_0p, s_s[rev], s_r[rev], c_r]
    for d in denominators:
        valid &= np.isfinite(d) & (d > 0) & (d >= floor)
    valid &= np.isfinite(estimate)
    estimate = np.where(valid, estimate, np.nan)
    return estimate, valid


def singles_only_transmission(
    campaign: CampaignSpectra, min_denominator: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Background-subtracted singles ratio, the classical-spectrometer analog.

    (S_sample - S_blocked_sample) / (S_reference - S_blocked_sample): the
    blocked-sample singles measure the reference-arm contribution, so the
    subtraction isolates the light that went through the sample arm.
    """
    s_s = campaign.delay_summed("sample", "singles")
    s_r = campaign.delay_summed("reference", "singles")
    s_0p = campaign.delay_summed("blocked_sample", "singles")
    valid = (
        campaign.combined_valid("sample")
        & campaign.combined_valid("reference")
        & campaign.combined_valid("blocked_sample")
    )
    denominator = s_r - s_0p
    with np.errstate(divide="ignore", invalid="ignore"):
        estimate = (s_s - s_0p) / denominator
    valid &= np.isfinite(denominator) & (denominator > 0) & np.isfinite(estimate)
    valid &= denominator >= max(min_denominator, 0.0)
    return np.where(valid, estimate, np.nan), valid


# ---------------------------------------------------------------------------
# delay and phase estimation
# ---------------------------------------------------------------------------


def estimate_cuvette_delay(stage_delays_s: np.ndarray, coincidence_diff: np.ndarray) -> float:
    """Group delay of the sample cell from the summed-fringe maximum.

    Sums the coincidence difference over all bins for each stage delay; the
    total is maximal where the stage compensates the cuvette, so the cuvette
    delay is minus the location of the maximum, refined by a three-point
    parabolic interpolation around the discrete peak.
    """
    delays = np.asarray(stage_delays_s, dtype=float)
    matrix = np.asarray(coincidence_diff, dtype=float)
    if delays.size < 5:
        raise ValueError("delay scan must have at least 5 steps")
    if matrix.shape[0] != delays.size:
        raise ValueError("matrix rows must match the delay axis")

    dip = np.nansum(matrix, axis=1)
    peak = int(np.argmax(dip))
    if peak == 0 or peak == delays.size - 1:
        raise ValueError("summed fringe is maximal on the scan boundary; the scan does not capture the dip")

    left, mid, right = dip[peak - 1], dip[peak], dip[peak + 1]
    denom = left - 2.0 * mid + right
    shift = 0.0 if denom == 0 else 0.5 * (left - right) / denom
    shift = float(np.clip(shift, -0.5, 0.5))
    step = delays[1] - delays[0]
    return float(-(delays[peak] + shift * step))


@dataclass(eq=False)
class FringeFit:
    """Fixed-frequency sinusoid fit of one bin-pair fringe."""

    phase: float
    phase_stderr: float
    amplitude: float
    amplitude_stderr: float
    offset: float
    reduced_chi2: float
    valid: bool
    reason: str = ""


def fit_fringe_phase(
    stage_delays_s: np.ndarray,
    coincidence_diff: np.ndarray,
    delta_omega: float,
    cuvette_delay_s: float = 0.0,
    weights: np.ndarray | None = None,
    noise_variance: np.ndarray | None = None,
) -> FringeFit:
    """Least-squares fringe phase at a fixed, grid-determined frequency.

    Fits a*cos(w t) + b*sin(w t) + c with w = |delta_omega| over the stage
    delay t, then reports atan2(b, a) corrected by delta_omega*cuvette_delay
    so the result estimates the sample's partner phase difference.  The fit
    is linear, so it is convex and deterministic.  Bins whose fringe is
    slower than the scan (less than one period) or whose fitted amplitude is
    below twice its standard error come back masked.
    """
    t = np.asarray(stage_delays_s, dtype=float)
    y = np.asarray(coincidence_diff, dtype=float)
    if t.shape != y.shape:
        raise ValueError("delay axis and fringe column must match")

    span = t.max() - t.min()
    if delta_omega == 0 or abs(delta_omega) * span < 2.0 * math.pi:
        return FringeFit(np.nan, np.nan, np.nan, np.nan, np.nan, np.nan, False, "degenerate")

    good = np.isfinite(y)
    if weights is not None:
        good &= np.isfinite(weights) & (np.asarray(weights) > 0)
    if np.count_nonzero(good) < 4:
        return FringeFit(np.nan, np.nan, np.nan, np.nan, np.nan, np.nan, False, "too_few_points")
    t, y = t[good], y[good]

    w = abs(delta_omega)
    design = np.column_stack([np.cos(w * t), np.sin(w * t), np.ones_like(t)])
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float)[good])
        design = design * sw[:, None]
        y = y * sw
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    residuals = y - design @ coef
    dof = max(1, t.size - 3)
    sigma2 = float(residuals @ residuals) / dof
    gram_inv = np.linalg.inv(design.T @ design)
    cov = sigma2 * gram_inv

    a, b = float(coef[0]), float(coef[1])
    amp2 = a * a + b * b
    amplitude = math.sqrt(amp2)
    if amp2 == 0:
        return FringeFit(np.nan, np.nan, 0.0, np.nan, float(coef[2]), np.nan, False, "zero_amplitude")

    # Delta method on atan2(b, a) and sqrt(a^2 + b^2).
    var_phase = (a * a * cov[1, 1] + b * b * cov[0, 0] - 2 * a * b * cov[0, 1]) / (amp2 * amp2)
    var_amp = (a * a * cov[0, 0] + b * b * cov[1, 1] + 2 * a * b * cov[0, 1]) / amp2
    phase_stderr = math.sqrt(max(var_phase, 0.0))
    amp_stderr = math.sqrt(max(var_amp, 0.0))

    if noise_variance is not None:
        nv = np.asarray(noise_variance, dtype=float)[good]
        chi2 = float(np.sum(residuals**2 / np.maximum(nv, 1.0))) / dof
    else:
        chi2 = 1.0

    if amplitude < 2.0 * amp_stderr:
        return FringeFit(np.nan, phase_stderr, amplitude, amp_stderr, float(coef[2]), chi2, False, "below_noise_floor")

    # The fitted phase estimates Phi_i - Phi_partner - delta_omega*cuvette;
    # restore the sample part using the sign of the true frequency difference.
    raw = math.atan2(b, a) * (1.0 if delta_omega >= 0 else -1.0)
    phase = wrap_phase(raw + delta_omega * cuvette_delay_s)
    return FringeFit(float(phase), phase_stderr, amplitude, amp_stderr, float(coef[2]), chi2, True)


def fit_all_fringes(
    campaign_label_matrix: np.ndarray,
    stage_delays_s: np.ndarray,
    grid: SpectralGrid,
    cuvette_delay_s: float,
    valid: np.ndarray | None = None,
    poisson_weights: bool = False,
    noise_matrix: np.ndarray | None = None,
) -> dict:
    """Fit every bin-pair column of an interferogram matrix.

    Returns arrays over the full grid: phase, stderr, amplitude, chi2, valid.
    """
    n = grid.n_bins
    matrix = np.asarray(campaign_label_matrix, dtype=float)
    phases = np.full(n, np.nan)
    stderr = np.full(n, np.nan)
    amplitude = np.full(n, np.nan)
    chi2 = np.full(n, np.nan)
    mask = np.zeros(n, dtype=bool)
    delta = grid.delta_omega
    for i in range(n):
        if valid is not None and not valid[i]:
            continue
        column = matrix[:, i]
        noise = noise_matrix[:, i] if noise_matrix is not None else None
        w = None
        if poisson_weights and noise is not None:
            w = 1.0 / np.maximum(noise, 1.0)
        fit = fit_fringe_phase(stage_delays_s, column, float(delta[i]), cuvette_delay_s, w, noise)
        phases[i] = fit.phase
        stderr[i] = fit.phase_stderr
        amplitude[i] = fit.amplitude
        chi2[i] = fit.reduced_chi2
        mask[i] = fit.valid
    return {
        "phase": phases,
        "phase_stderr": stderr,
        "amplitude": amplitude,
        "reduced_chi2": chi2,
        "valid": mask,
    }


def _residual_at_frequency(t: np.ndarray, y: np.ndarray, w: float) -> float:
    design = np.column_stack([np.cos(w * t), np.sin(w * t), np.ones_like(t)])
    _, residual, _, _ = np.linalg.lstsq(design, y, rcond=None)
    if residual.size:
        return float(residual[0])
    fit = design @ np.linalg.lstsq(design, y, rcond=None)[0]
    return float(np.sum((y - fit) ** 2))


def estimate_fringe_frequency(stage_delays_s: np.ndarray, column: np.ndarray, pad_factor: int = 32) -> float:
    """Angular fringe frequency of one interferogram column.

    A Hann-windowed, zero-padded FFT locates the peak coarsely; a dense
    least-squares frequency scan around it then minimizes the sinusoid-fit
    residual, which resolves even fringes slower than the scan length.  Used
    to verify the reciprocal delay-frequency law independently of the
    fixed-frequency phase fits.
    """
    t = np.asarray(stage_delays_s, dtype=float)
    y = np.asarray(column, dtype=float)
    y = y - np.nanmean(y)
    y = np.where(np.isfinite(y), y, 0.0)
    n = t.size
    if n < 8:
        raise ValueError("need at least 8 samples")
    step = t[1] - t[0]
    window = np.hanning(n)
    padded = np.zeros(pad_factor * n)
    padded[:n] = y * window
    spectrum = np.abs(np.fft.rfft(padded))
    freqs = np.fft.rfftfreq(padded.size, d=step)
    coarse = 2.0 * math.pi * float(freqs[int(np.argmax(spectrum))])

    resolution = 2.0 * math.pi / (n * step)
    lo = max(1e-4 * resolution, coarse - 1.5 * resolution)
    hi = coarse + 1.5 * resolution
    candidates = np.linspace(lo, hi, 241)
    residuals = np.array([_residual_at_frequency(t, y, float(w)) for w in candidates])
    k = int(np.argmin(residuals))
    if 0 < k < candidates.size - 1:
        left, mid, right = residuals[k - 1], residuals[k], residuals[k + 1]
        denom = left - 2 * mid + right
        shift = 0.0 if denom <= 0 else float(np.clip(0.5 * (left - right) / denom, -1.0, 1.0))
    else:
        shift = 0.0
    return float(candidates[k] + shift * (candidates[1] - candidates[0]))


# ---------------------------------------------------------------------------
# per-repeat reconstruction and aggregation
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ReconstructionResult:
    """Recovered spectra on the attributed (short-wavelength) half band."""

    grid: SpectralGrid
    bin_indices: np.ndarray
    wavelength_nm: np.ndarray
    transmission_ratio: np.ndarray
    transmission_stderr: np.ndarray
    transmission_valid: np.ndarray
    singles_transmission: np.ndarray
    singles_valid: np.ndarray
    differential_phase: np.ndarray
    phase_stderr: np.ndarray
    phase_valid: np.ndarray
    cuvette_delay_sample_s: float
    cuvette_delay_reference_s: float
    diagnostics: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict, repr=False)

    def to_csv(self, path) -> None:
        header = dict(self.grid.header())
        header.update(
            {
                "cuvette_delay_sample_fs": repr(float(self.cuvette_delay_sample_s) * 1e15),
                "cuvette_delay_reference_fs": repr(float(self.cuvette_delay_reference_s) * 1e15),
            }
        )
        write_table(
            path,
            {
                "wavelength_nm": self.wavelength_nm,
                "T_ratio": self.transmission_ratio,
                "T_ratio_stderr": self.transmission_stderr,
                "T_singles_only": self.singles_transmission,
                "phase_rad": self.differential_phase,
                "phase_stderr": self.phase_stderr,
                "T_ratio_valid": self.transmission_valid.astype(int),
                "T_singles_valid": self.singles_valid.astype(int),
                "phase_valid": self.phase_valid.astype(int),
            },
            header=header,
        )

    @classmethod
    def from_csv(cls, path) -> "ReconstructionResult":
        header, cols = read_table(path)
        grid = grid_from_header(header)
        active = active_half_slice(grid)
        return cls(
            grid=grid,
            bin_indices=np.arange(active.start, active.stop),
            wavelength_nm=cols["wavelength_nm"],
            transmission_ratio=cols["T_ratio"],
            transmission_stderr=cols["T_ratio_stderr"],
            transmission_valid=cols["T_ratio_valid"] > 0,
            singles_transmission=cols["T_singles_only"],
            singles_valid=cols["T_singles_valid"] > 0,
            differential_phase=cols["phase_rad"],
            phase_stderr=cols["phase_stderr"],
            phase_valid=cols["phase_valid"] > 0,
            cuvette_delay_sample_s=float(header["cuvette_delay_sample_fs"]) * 1e-15,
            cuvette_delay_reference_s=float(header["cuvette_delay_reference_fs"]) * 1e-15,
        )


def differential_phase(
    fits_sample: dict,
    fits_reference: dict,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample-minus-reference fringe phase, wrapped to (-pi, pi].

    Any stage-delay offset common to both scans cancels; bins masked in
    either input stay masked.
    """
    phase = wrap_phase(fits_sample["phase"] - fits_reference["phase"])
    stderr = np.sqrt(fits_sample["phase_stderr"] ** 2 + fits_reference["phase_stderr"] ** 2)
    valid = fits_sample["valid"] & fits_reference["valid"]
    return np.where(valid, phase, np.nan), stderr, valid


def reconstruct_repeat(
    campaign: CampaignSpectra,
    poisson_weights: bool = False,
    min_denominator: float = 0.0,
) -> ReconstructionResult:
    """Run every estimator on one repeat's campaign spectra."""
    grid = campaign.grid
    delays = campaign.stage_delays_s

    transmission, t_valid = estimate_transmission(campaign, min_denominator)
    singles_t, s_valid = singles_only_transmission(campaign, min_denominator)

    cminus_s = campaign.stacked("sample", "coincidence_diff")
    cminus_r = campaign.stacked("reference", "coincidence_diff")
    cplus_s = campaign.stacked("sample", "coincidence_sum")
    cplus_r = campaign.stacked("reference", "coincidence_sum")

    tau_c_s = estimate_cuvette_delay(delays, cminus_s)
    tau_c_r = estimate_cuvette_delay(delays, cminus_r)

    fits_s = fit_all_fringes(
        cminus_s, delays, grid, tau_c_s,
        valid=campaign.combined_valid("sample"),
        poisson_weights=poisson_weights, noise_matrix=cplus_s,
    )
    fits_r = fit_all_fringes(
        cminus_r, delays, grid, tau_c_r,
        valid=campaign.combined_valid("reference"),
        poisson_weights=poisson_weights, noise_matrix=cplus_r,
    )
    phase, phase_err, p_valid = differential_phase(fits_s, fits_r)

    active = active_half_slice(grid)
    idx = np.arange(active.start, active.stop)
    diagnostics = {
        "masked_transmission_bins": int(np.count_nonzero(~t_valid[active])),
        "masked_phase_bins": int(np.count_nonzero(~p_valid[active])),
        "median_reduced_chi2_sample": float(np.nanmedian(fits_s["reduced_chi2"])),
        "median_reduced_chi2_reference": float(np.nanmedian(fits_r["reduced_chi2"])),
    }
    return ReconstructionResult(
        grid=grid,
        bin_indices=idx,
        wavelength_nm=grid.bin_wavelengths_nm[active],
        transmission_ratio=transmission[active],
        transmission_stderr=np.zeros(idx.size),
        transmission_valid=t_valid[active],
        singles_transmission=singles_t[active],
        singles_valid=s_valid[active],
        differential_phase=phase[active],
        phase_stderr=phase_err[active],
        phase_valid=p_valid[active],
        cuvette_delay_sample_s=tau_c_s,
        cuvette_delay_reference_s=tau_c_r,
        diagnostics=diagnostics,
        extras={
            "transmission_full": transmission,
            "transmission_valid_full": t_valid,
            "singles_transmission_full": singles_t,
            "phase_full": phase,
            "phase_valid_full": p_valid,
            "fits_sample": fits_s,
            "fits_reference": fits_r,
        },
    )


def _masked_mean_stderr(values: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-bin mean and standard error over repeats, honoring masks.

    Values are shifted by the first valid entry of each bin before the
    variance pass, so identical repeats yield exactly zero standard error.
    """
    counts = valid.sum(axis=0)
    ok = counts >= 2
    first = np.argmax(valid, axis=0)
    shift = np.take_along_axis(values, first[None, :], axis=0)[0]
    centered = np.where(valid, values - shift[None, :], 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_c = centered.sum(axis=0) / np.maximum(counts, 1)
        spread = np.where(valid, centered - mean_c[None, :], 0.0)
        variance = (spread**2).sum(axis=0) / np.maximum(counts - 1, 1)
        stderr = np.sqrt(variance / np.maximum(counts, 1))
    mean = np.where(ok, shift + mean_c, np.nan)
    stderr = np.where(ok, stderr, np.nan)
    return mean, stderr, ok


def aggregate_repeats(results: list[ReconstructionResult]) -> ReconstructionResult:
    """Per-bin mean and standard error of the mean over repeated campaigns."""
    if len(results) < 2:
        raise ValueError("aggregation needs at least 2 repeats")
    first = results[0]
    for r in results[1:]:
        if not r.grid.same_lattice(first.grid):
            raise ValueError("repeats use different grids")

    def stack(attr, mask_attr):
        vals = np.vstack([getattr(r, attr) for r in results])
        masks = np.vstack([getattr(r, mask_attr) for r in results])
        finite = np.isfinite(vals)
        return np.where(finite, vals, 0.0), masks & finite

    t_vals, t_masks = stack("transmission_ratio", "transmission_valid")
    t_mean, t_err, t_ok = _masked_mean_stderr(t_vals, t_masks)
    s_vals, s_masks = stack("singles_transmission", "singles_valid")
    s_mean, _s_err, s_ok = _masked_mean_stderr(s_vals, s_masks)
    p_vals, p_masks = stack("differential_phase", "phase_valid")
    p_mean, p_err, p_ok = _masked_mean_stderr(p_vals, p_masks)

    diagnostics = {
        "repeats": len(results),
        "cuvette_delay_sample_fs_per_repeat": [r.cuvette_delay_sample_s * 1e15 for r in results],
        "cuvette_delay_reference_fs_per_repeat": [r.cuvette_delay_reference_s * 1e15 for r in results],
        "masked_transmission_bins": int(np.count_nonzero(~t_ok)),
        "masked_phase_bins": int(np.count_nonzero(~p_ok)),
    }
    return ReconstructionResult(
        grid=first.grid,
        bin_indices=first.bin_indices,
        wavelength_nm=first.wavelength_nm,
        transmission_ratio=t_mean,
        transmission_stderr=t_err,
        transmission_valid=t_ok,
        singles_transmission=s_mean,
        singles_valid=s_ok,
        differential_phase=p_mean,
        phase_stderr=p_err,
        phase_valid=p_ok,
        cuvette_delay_sample_s=float(np.mean([r.cuvette_delay_sample_s for r in results])),
        cuvette_delay_reference_s=float(np.mean([r.cuvette_delay_reference_s for r in results])),
        diagnostics=diagnostics,
    )
