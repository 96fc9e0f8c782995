"""Campaign orchestration: the four-configuration delay-scan protocol.

A campaign simulates, processes and reconstructs a complete virtual
experiment: for every repeat, each of the four measurement configurations
(sample, reference, blocked reference arm, blocked sample arm) is scanned
over the full stage-delay range, each exposure's click stream is paired and
filtered, the relative detection efficiency is calibrated from the pooled
click spectra of the repeat, and the corrected spectra finally feed the
transmission and phase estimators.

Everything is deterministic in one master seed: per-exposure seeds derive
from (configuration index, repeat, delay index), so any single exposure can
be regenerated by the `simulate` subcommand and byte-identical outputs come
back from identical inputs regardless of worker scheduling.
"""

from __future__ import annotations

import configparser
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .grid import SpectralGrid, make_grid
from .io import sha256_of_file, write_key_values, write_table
from .model import (
    ArmConfig,
    DetectionConfig,
    MeasurementConfig,
    efficiency_ratio_from_singles,
    gaussian_source,
)
from .reconstruct import (
    CampaignSpectra,
    ReconstructionResult,
    aggregate_repeats,
    reconstruct_repeat,
)
from .samples import SampleResponse, flat_response, lorentzian_response, confined_to_active_half
from .simulate import (
    apply_perturbation,
    linear_tilt,
    seed_for_exposure,
    simulate_exposure,
    write_event_file,
)
from .spectra_io import read_spectra_csv, write_spectra_csv
from .tags import ExposureProducts, ProcessorSettings, accumulate, pair_and_filter

CONFIGURATION_ORDER = ("sample", "reference", "blocked_reference", "blocked_sample")

# Detection calibration reproducing a representative time-tagging camera
# setup: a 3 s exposure of the bare source yields about 216k singles and
# 976 identified coincidences at a 0.5% spectrum-averaged system efficiency.
# The Gaussian efficiency profile's width and peak follow from those two
# count targets; the pair rate is then fixed by the singles total.
LAB_PEAK_EFFICIENCY = 0.011613891292805994
LAB_EFFICIENCY_WIDTH_FRACTION = 0.06742407908891054
LAB_PAIR_RATE_HZ = 7.27e6
LAB_DARK_RATE_HZ = 100.0


class CampaignConfigError(ValueError):
    """Invalid or inconsistent campaign configuration."""


@dataclass(eq=False)
class CampaignConfig:
    """Parsed campaign description (see docs/campaign_example.ini)."""

    # grid
    center_wavelength_nm: float = 810.0
    bandwidth_nm: float = 155.0
    n_bins: int = 256
    # source
    pair_probability: float = 0.01
    pair_rate_hz: float = LAB_PAIR_RATE_HZ
    spectral_width_fraction: float = 0.2
    # detection
    peak_efficiency: float = LAB_PEAK_EFFICIENCY
    efficiency_width_fraction: float = LAB_EFFICIENCY_WIDTH_FRACTION
    mode_overlap: float = 1.0
    dark_rate_hz: float = LAB_DARK_RATE_HZ
    timing_jitter_ns: float = 3.0
    # arms
    scattering_loss: float = 0.05
    reference_transmission: float = 0.95
    # sample / reference responses
    sample_kind: str = "lorentzian"
    sample_center_nm: float = 802.0
    sample_fwhm_nm: float = 8.0
    sample_peak_absorbance: float = 2.0
    sample_file: str = ""
    sample_cuvette_delay_fs: float = 50.0
    reference_kind: str = "flat"
    reference_transmittance: float = 1.0
    reference_phase_rad: float = 0.0
    reference_file: str = ""
    reference_cuvette_delay_fs: float = 30.0
    # scan
    delay_start_fs: float = -200.0
    delay_step_fs: float = 4.0
    delay_count: int = 100
    # run
    exposure_seconds: float = 3.0
    repeats: int = 10
    # processing
    coincidence_window_ns: float = 25.0
    energy_tolerance_bins: int = 2
    min_denominator_counts: float = 25.0
    # perturbation (coupling systematic injected into one configuration)
    perturbation_enabled: bool = False
    perturbation_target: str = "sample"
    perturbation_factor_long_nm: float = 1.0
    perturbation_factor_short_nm: float = 1.0

    base_dir: Path = field(default_factory=Path, repr=False)

    def __post_init__(self):
        if self.delay_count < 5:
            raise CampaignConfigError("scan needs at least 5 delay steps")
        if self.repeats < 1:
            raise CampaignConfigError("repeats must be >= 1")
        if self.exposure_seconds <= 0:
            raise CampaignConfigError("exposure must be positive")
        if self.sample_kind not in ("lorentzian", "flat", "file"):
            raise CampaignConfigError(f"unknown sample kind {self.sample_kind!r}")
        if self.reference_kind not in ("lorentzian", "flat", "file"):
            raise CampaignConfigError(f"unknown reference kind {self.reference_kind!r}")
        if self.perturbation_target not in CONFIGURATION_ORDER:
            raise CampaignConfigError(f"unknown perturbation target {self.perturbation_target!r}")
        for kind, name in ((self.sample_kind, self.sample_file), (self.reference_kind, self.reference_file)):
            if kind == "file":
                path = self.base_dir / name
                if not path.is_file():
                    raise CampaignConfigError(f"response file not found: {path}")

    @property
    def stage_delays_s(self) -> np.ndarray:
        return (self.delay_start_fs + self.delay_step_fs * np.arange(self.delay_count)) * 1e-15

    @property
    def processor_settings(self) -> ProcessorSettings:
        return ProcessorSettings(self.coincidence_window_ns, self.energy_tolerance_bins)


_SCHEMA = {
    "grid": {
        "center_wavelength_nm": float,
        "bandwidth_nm": float,
        "n_bins": int,
    },
    "source": {
        "pair_probability": float,
        "pair_rate_hz": float,
        "spectral_width_fraction": float,
    },
    "detection": {
        "peak_efficiency": float,
        "efficiency_width_fraction": float,
        "mode_overlap": float,
        "dark_rate_hz": float,
        "timing_jitter_ns": float,
    },
    "arms": {
        "scattering_loss": float,
        "reference_transmission": float,
    },
    "sample": {
        "kind": ("sample_kind", str),
        "center_nm": ("sample_center_nm", float),
        "fwhm_nm": ("sample_fwhm_nm", float),
        "peak_absorbance": ("sample_peak_absorbance", float),
        "file": ("sample_file", str),
        "cuvette_delay_fs": ("sample_cuvette_delay_fs", float),
    },
    "reference": {
        "kind": ("reference_kind", str),
        "transmittance": ("reference_transmittance", float),
        "phase_rad": ("reference_phase_rad", float),
        "file": ("reference_file", str),
        "cuvette_delay_fs": ("reference_cuvette_delay_fs", float),
    },
    "scan": {
        "delay_start_fs": float,
        "delay_step_fs": float,
        "delay_count": int,
    },
    "run": {
        "exposure_seconds": float,
        "repeats": int,
    },
    "processing": {
        "coincidence_window_ns": float,
        "energy_tolerance_bins": int,
        "min_denominator_counts": float,
    },
    "perturbation": {
        "enabled": ("perturbation_enabled", bool),
        "target": ("perturbation_target", str),
        "factor_long_nm": ("perturbation_factor_long_nm", float),
        "factor_short_nm": ("perturbation_factor_short_nm", float),
    },
}


def parse_campaign_config(path) -> CampaignConfig:
    """Read the INI-style key-value campaign description."""
    path = Path(path)
    if not path.is_file():
        raise CampaignConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise CampaignConfigError(f"{path}: {exc}") from exc

    kwargs: dict = {"base_dir": path.parent}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise CampaignConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            entry = _SCHEMA[section].get(key)
            if entry is None:
                raise CampaignConfigError(f"{path}: unknown key {key!r} in [{section}]")
            attr, cast = entry if isinstance(entry, tuple) else (key, entry)
            try:
                if cast is bool:
                    kwargs[attr] = raw.strip().lower() in ("1", "true", "yes", "on")
                else:
                    kwargs[attr] = cast(raw)
            except ValueError as exc:
                raise CampaignConfigError(f"{path}: bad value for {section}.{key}: {raw!r}") from exc
    return CampaignConfig(**kwargs)


# ---------------------------------------------------------------------------
# configuration assembly
# ---------------------------------------------------------------------------


def build_grid(cfg: CampaignConfig) -> SpectralGrid:
    return make_grid(cfg.center_wavelength_nm, cfg.bandwidth_nm, cfg.n_bins)


def gaussian_efficiency(grid: SpectralGrid, peak: float, width_fraction: float) -> np.ndarray:
    n = grid.n_bins
    x = (np.arange(n) - (n - 1) / 2.0) / (n - 1)
    eta = peak * np.exp(-0.5 * (x / width_fraction) ** 2)
    return np.maximum(eta, 1e-12)  # efficiencies must stay positive


def build_response(cfg: CampaignConfig, grid: SpectralGrid, which: str) -> SampleResponse:
    kind = getattr(cfg, f"{which}_kind")
    if kind == "flat":
        transmittance = getattr(cfg, "reference_transmittance") if which == "reference" else 1.0
        phase = getattr(cfg, "reference_phase_rad") if which == "reference" else 0.0
        return flat_response(grid, transmittance, phase)
    if kind == "lorentzian":
        if which == "reference":
            raise CampaignConfigError("lorentzian reference responses are not supported")
        response = lorentzian_response(
            grid, cfg.sample_center_nm, cfg.sample_fwhm_nm, cfg.sample_peak_absorbance
        )
        return confined_to_active_half(response)
    return SampleResponse.from_csv(cfg.base_dir / getattr(cfg, f"{which}_file"), grid)


def validate_campaign_responses(sample: SampleResponse, reference: SampleResponse) -> None:
    """Responses must be flat on the long-wavelength calibration half."""
    for name, resp in (("sample", sample), ("reference", reference)):
        if not resp.is_flat_on_long_wavelength_half(atol=0.0):
            raise CampaignConfigError(
                f"{name} response is not flat on the long-wavelength half; "
                "the calibration algebra requires it (confine the response to the short-wavelength half)"
            )


def build_measurement_config(
    cfg: CampaignConfig,
    grid: SpectralGrid,
    label: str,
    sample: SampleResponse,
    reference: SampleResponse,
    scale: float = 1.0,
) -> MeasurementConfig:
    """One of the four protocol configurations, at a count-rate scale factor."""
    source = gaussian_source(grid, cfg.pair_probability, cfg.spectral_width_fraction)
    detection = DetectionConfig(
        grid=grid,
        efficiency_a=gaussian_efficiency(grid, cfg.peak_efficiency, cfg.efficiency_width_fraction),
        efficiency_b=gaussian_efficiency(grid, cfg.peak_efficiency, cfg.efficiency_width_fraction),
        mode_overlap=cfg.mode_overlap,
        dark_rate_hz=cfg.dark_rate_hz * scale,
        timing_jitter_sigma_s=cfg.timing_jitter_ns * 1e-9,
    )
    common = dict(
        grid=grid,
        scattering_loss=np.full(grid.n_bins, cfg.scattering_loss),
        reference_transmission=np.full(grid.n_bins, cfg.reference_transmission),
    )
    if label == "sample":
        arms = ArmConfig(
            sample_absorbance=sample.absorbance,
            sample_phase=sample.phase,
            cuvette_delay_s=cfg.sample_cuvette_delay_fs * 1e-15,
            **common,
        )
    elif label == "reference":
        arms = ArmConfig(
            sample_absorbance=reference.absorbance,
            sample_phase=reference.phase,
            cuvette_delay_s=cfg.reference_cuvette_delay_fs * 1e-15,
            **common,
        )
    elif label == "blocked_reference":
        arms = ArmConfig(
            sample_absorbance=np.zeros(grid.n_bins),
            sample_phase=np.zeros(grid.n_bins),
            reference_blocked=True,
            **common,
        )
    elif label == "blocked_sample":
        arms = ArmConfig(
            sample_absorbance=np.zeros(grid.n_bins),
            sample_phase=np.zeros(grid.n_bins),
            sample_blocked=True,
            **common,
        )
    else:
        raise CampaignConfigError(f"unknown configuration label {label!r}")

    config = MeasurementConfig(
        source=source,
        arms=arms,
        detection=detection,
        exposure_seconds=cfg.exposure_seconds,
        pair_generation_rate=cfg.pair_rate_hz * scale,
    )
    if cfg.perturbation_enabled and label == cfg.perturbation_target:
        perturbation = linear_tilt(
            grid, cfg.perturbation_factor_long_nm, cfg.perturbation_factor_short_nm
        )
        config = apply_perturbation(config, perturbation)
    return config


def lab_scale_config(grid: SpectralGrid, exposure_seconds: float = 3.0, scale: float = 1.0) -> MeasurementConfig:
    """Bare-source benchmark configuration (no sample, lossless arms)."""
    cfg = CampaignConfig(scattering_loss=0.0, reference_transmission=1.0, exposure_seconds=exposure_seconds)
    null = flat_response(grid, 1.0, 0.0)
    config = build_measurement_config(cfg, grid, "reference", null, null, scale=scale)
    return replace(config, arms=replace(config.arms, cuvette_delay_s=0.0))


# ---------------------------------------------------------------------------
# campaign execution
# ---------------------------------------------------------------------------


def _scan_one_configuration(args) -> tuple:
    """Worker: simulate and pair-filter a full delay scan of one configuration."""
    (cfg, grid, label, config_index, repeat, scale, sample, reference, master_seed, event_dir) = args
    settings = cfg.processor_settings
    measurement = build_measurement_config(cfg, grid, label, sample, reference, scale)
    products: list[ExposureProducts] = []
    for delay_index, delay in enumerate(cfg.stage_delays_s):
        seed = seed_for_exposure(master_seed, config_index, repeat, delay_index)
        record = simulate_exposure(
            measurement.with_stage_delay(float(delay)), cfg.exposure_seconds, seed
        )
        if event_dir is not None:
            name = f"events_{label}_rep{repeat:02d}_d{delay_index:03d}.bin"
            write_event_file(Path(event_dir) / name, record)
        products.append(pair_and_filter(record, settings, stage_delay_s=float(delay)))
    return label, repeat, products


@dataclass(eq=False)
class CampaignOutput:
    output_dir: Path
    result: ReconstructionResult
    per_repeat: list
    manifest_path: Path
    files: list


def _write_manifest(output_dir: Path, files: list, master_seed: int, scale: float, status: str) -> Path:
    manifest_path = output_dir / "MANIFEST"
    with manifest_path.open("w", encoding="utf-8") as f:
        f.write(f"# status={status}\n")
        f.write(f"# master_seed={master_seed}\n")
        f.write(f"# scale={scale!r}\n")
        for path in sorted(files):
            f.write(f"{sha256_of_file(path)}  {path.relative_to(output_dir)}\n")
    return manifest_path


def run_campaign(
    cfg: CampaignConfig,
    output_dir,
    master_seed: int = 0,
    scale: float = 1.0,
    parallelism: int = 1,
    keep_events: bool = False,
    progress: bool = False,
) -> CampaignOutput:
    """Run the full protocol and write every result file.

    Output tree: ground-truth responses, per-(configuration, repeat) spectra,
    per-repeat efficiency ratios, interferogram matrices for the sample and
    reference configurations, the aggregated reconstruction with its summary,
    a processing report, and a MANIFEST listing sha256 hashes of everything.
    A failure partway through still writes the MANIFEST, flagged
    status=partial, covering whatever files exist.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    grid = build_grid(cfg)
    sample = build_response(cfg, grid, "sample")
    reference = build_response(cfg, grid, "reference")
    validate_campaign_responses(sample, reference)

    files: list[Path] = []
    sample.to_csv(output_dir / "truth_sample.csv")
    reference.to_csv(output_dir / "truth_reference.csv")
    files += [output_dir / "truth_sample.csv", output_dir / "truth_reference.csv"]

    try:
        return _run_campaign_body(
            cfg, output_dir, grid, sample, reference, files,
            master_seed, scale, parallelism, keep_events, progress,
        )
    except Exception:
        _write_manifest(output_dir, files, master_seed, scale, "partial")
        raise


def _run_campaign_body(
    cfg, output_dir, grid, sample, reference, files,
    master_seed, scale, parallelism, keep_events, progress,
) -> CampaignOutput:
    def emit_table(name, columns, header=None):
        path = output_dir / name
        write_table(path, columns, header={**grid.header(), **(header or {})})
        files.append(path)
        return path

    event_dir = None
    if keep_events:
        event_dir = output_dir / "events"
        event_dir.mkdir(exist_ok=True)

    tasks = [
        (cfg, grid, label, ci, repeat, scale, sample, reference, master_seed, event_dir)
        for repeat in range(cfg.repeats)
        for ci, label in enumerate(CONFIGURATION_ORDER)
    ]
    scans: dict = {}
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for label, repeat, products in pool.map(_scan_one_configuration, tasks):
                scans[(label, repeat)] = products
                if progress:
                    print(f"scanned {label} repeat {repeat}")
    else:
        for task in tasks:
            label, repeat, products = _scan_one_configuration(task)
            scans[(label, repeat)] = products
            if progress:
                print(f"scanned {label} repeat {repeat}")

    delays_fs = cfg.stage_delays_s * 1e15
    per_repeat_results = []
    interferograms: dict[str, list] = {"sample": [], "reference": []}
    totals = {
        "exposures": 4 * cfg.repeats * cfg.delay_count,
        "total_events": 0,
        "singles": 0,
        "kept_pairs": 0,
        "rejected_pairs": 0,
        "discarded_events": 0,
    }

    for repeat in range(cfg.repeats):
        # Relative-efficiency calibration pooled over the whole repeat: the
        # click ratio is state independent, so every exposure contributes.
        clicks_a = np.zeros(grid.n_bins)
        clicks_b = np.zeros(grid.n_bins)
        for label in CONFIGURATION_ORDER:
            for products in scans[(label, repeat)]:
                clicks_a += products.clicks_a
                clicks_b += products.clicks_b
                for key, value in products.counts.as_dict().items():
                    totals[key] += value
        ratio, ratio_valid = efficiency_ratio_from_singles(clicks_a, clicks_b)
        emit_table(
            f"efficiency_ratio_rep{repeat:02d}.csv",
            {
                "bin": np.arange(grid.n_bins),
                "wavelength_nm": grid.bin_wavelengths_nm,
                "ratio_b_over_a": np.where(ratio_valid, ratio, np.nan),
                "valid": ratio_valid.astype(int),
            },
        )

        spectra_sets = {}
        for label in CONFIGURATION_ORDER:
            sets = [accumulate(p, ratio, ratio_valid) for p in scans[(label, repeat)]]
            path = output_dir / f"spectra_{label}_rep{repeat:02d}.csv"
            write_spectra_csv(path, sets, extra_header={"configuration": label, "repeat": repeat})
            files.append(path)
            # Reconstruct from the file just written, not the in-memory sets:
            # the spectra files must be a sufficient interface on their own,
            # and this guarantees stagewise CLI runs reproduce the campaign
            # bit for bit.
            spectra_sets[label] = read_spectra_csv(path, grid)

        campaign_spectra = CampaignSpectra(grid=grid, **spectra_sets)
        for label in ("sample", "reference"):
            interferograms[label].append(campaign_spectra.stacked(label, "coincidence_diff"))
        per_repeat_results.append(
            reconstruct_repeat(campaign_spectra, min_denominator=cfg.min_denominator_counts)
        )

    if cfg.repeats >= 2:
        result = aggregate_repeats(per_repeat_results)
    else:
        result = per_repeat_results[0]

    # Interferogram matrices (delay rows, one column per bin pair keyed by
    # its short-wavelength bin), averaged over repeats.  Bins masked in every
    # repeat stay NaN.
    for label in ("sample", "reference"):
        stack = np.stack(interferograms[label])
        finite = np.isfinite(stack)
        counts_finite = finite.sum(axis=0)
        with np.errstate(invalid="ignore"):
            mean_matrix = np.where(finite, stack, 0.0).sum(axis=0) / counts_finite
        mean_matrix[counts_finite == 0] = np.nan
        half = np.arange(grid.n_bins // 2, grid.n_bins)
        columns = {"delay_fs": delays_fs}
        for i in half:
            columns[f"pair_bin{i:03d}"] = mean_matrix[:, i]
        emit_table(
            f"interferogram_{label}.csv",
            columns,
            header={"columns": "coincidence difference per bin pair, repeat averaged"},
        )

    result_path = output_dir / "reconstruction.csv"
    result.to_csv(result_path)
    files.append(result_path)

    summary = {
        "repeats": cfg.repeats,
        "master_seed": master_seed,
        "scale": scale,
        "cuvette_delay_sample_fs": result.cuvette_delay_sample_s * 1e15,
        "cuvette_delay_reference_fs": result.cuvette_delay_reference_s * 1e15,
        "masked_transmission_bins": int(np.count_nonzero(~result.transmission_valid)),
        "masked_phase_bins": int(np.count_nonzero(~result.phase_valid)),
        "diagnostics": {
            k: v for k, v in result.diagnostics.items() if not isinstance(v, np.ndarray)
        },
    }
    summary_path = output_dir / "reconstruction_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    files.append(summary_path)

    report_path = output_dir / "processing_report.txt"
    write_key_values(report_path, totals)
    files.append(report_path)

    if keep_events and event_dir is not None:
        files += sorted(event_dir.glob("*.bin"))

    manifest_path = _write_manifest(output_dir, files, master_seed, scale, "complete")

    return CampaignOutput(
        output_dir=output_dir,
        result=result,
        per_repeat=per_repeat_results,
        manifest_path=manifest_path,
        files=files,
    )
