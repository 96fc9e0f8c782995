"""Acceptance gate: the ten release criteria, one test each.

Each test prints a single [ACCEPT-nn] PASS/FAIL line (run pytest -s to see
them).  Criterion 5 runs the full four-configuration campaign at desk scale
(scale 0.1, ten repeats) once per session; criterion 6 reuses its output.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import random_measurement_config
from test_reconstruct import analytic_campaign, four_configurations
from homspec import make_grid
from homspec.campaign import (
    CampaignConfig,
    build_grid,
    build_measurement_config,
    build_response,
    lab_scale_config,
    run_campaign,
)
from homspec.grid import active_half_slice
from homspec.io import read_key_values, read_table
from homspec.model import (
    ArmConfig,
    BiphotonSource,
    DetectionConfig,
    MeasurementConfig,
    hom_interferogram,
    outcome_probabilities,
)
from homspec.reconstruct import estimate_fringe_frequency, estimate_transmission
from homspec.samples import kramers_kronig_phase, lorentzian_response
from homspec.simulate import ORIGIN_PAIR_AB, simulate_exposure
from homspec.tags import ProcessorSettings, pair_and_filter

DESK_SEED = 1


def verdict(tag: str, ok: bool, detail: str) -> None:
    print(f"[{tag}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{tag} failed: {detail}"


@pytest.fixture(scope="module")
def desk_campaign(tmp_path_factory):
    """Scale-0.1 default campaign: 4 configurations x 10 repeats x 100 delays."""
    out_dir = tmp_path_factory.mktemp("desk_campaign")
    cfg = CampaignConfig()
    started = time.perf_counter()
    output = run_campaign(cfg, out_dir, master_seed=DESK_SEED, scale=0.1)
    elapsed = time.perf_counter() - started
    _, truth_cols = read_table(out_dir / "truth_sample.csv")
    order = np.argsort(-truth_cols["wavelength_nm"])
    active = active_half_slice(output.result.grid)
    truth = {
        "phase": truth_cols["phase_rad"][order][active],
        "transmission": np.exp(-truth_cols["absorbance"][order][active]),
    }
    return {"config": cfg, "output": output, "elapsed": elapsed, "truth": truth, "dir": out_dir}


def test_01_estimator_exactness(grid16):
    rng = np.random.default_rng(2001)
    delays = np.linspace(-20e-15, 20e-15, 6)
    worst = 0.0
    started = time.perf_counter()
    for _ in range(100):
        base = random_measurement_config(grid16, rng, flat_partner_half=True)
        ref_abs = np.zeros(grid16.n_bins)
        ref_abs[grid16.n_bins // 2 :] = rng.uniform(0.0, 0.5, grid16.n_bins // 2)
        configs = four_configurations(base, reference_absorbance=ref_abs)
        campaign = analytic_campaign(configs, delays)
        estimate, valid = estimate_transmission(campaign)
        active = active_half_slice(grid16)
        truth = np.exp(-(base.arms.sample_absorbance - ref_abs))
        assert np.all(valid[active])
        worst = max(worst, float(np.max(np.abs(estimate[active] - truth[active]))))
    elapsed = time.perf_counter() - started
    verdict(
        "ACCEPT-01",
        worst <= 1e-12 and elapsed < 1.0,
        f"calibrated estimator exact on 100 random noiseless configs "
        f"(worst |error| {worst:.2e}, {elapsed:.2f} s)",
    )


def test_01b_estimator_identity_in_exact_arithmetic():
    # Companion oracle for criterion 1: the calibration algebra collapses to
    # the transmission ratio identically in rational arithmetic.
    rng = np.random.default_rng(2002)

    def frac(lo, hi, q=127):
        return Fraction(int(rng.integers(int(lo * q), int(hi * q))), q)

    n, partner = 4, [3, 2, 1, 0]
    for _ in range(20):
        g = Fraction(1, 100)
        eta = [frac(0.05, 0.9) for _ in range(n)]
        w = [frac(0.1, 1.0) for _ in range(n)]
        chi_t = [frac(0.5, 1.0) for _ in range(n)]
        r_arm = [frac(0.5, 1.0) for _ in range(n)]
        t_s = [Fraction(1), Fraction(1), frac(0.2, 0.9), frac(0.2, 0.9)]
        t_r = [Fraction(1), Fraction(1), frac(0.5, 1.0), frac(0.5, 1.0)]

        def singles(tt, rr):
            return [g * eta[i] * (tt[i] + rr[i]) * w[i] for i in range(n)]

        def coinc(tt, rr):
            return [
                g * eta[i] * eta[partner[i]] * (tt[i] * rr[partner[i]] + tt[partner[i]] * rr[i]) * w[i]
                for i in range(n)
            ]

        zero = [Fraction(0)] * n
        ts_full = [chi_t[i] * t_s[i] for i in range(n)]
        tr_full = [chi_t[i] * t_r[i] for i in range(n)]
        s_s, c_s = singles(ts_full, r_arm), coinc(ts_full, r_arm)
        s_r, c_r = singles(tr_full, r_arm), coinc(tr_full, r_arm)
        s_0, s_0p = singles(chi_t, zero), singles(zero, r_arm)
        for i in (2, 3):
            p = partner[i]
            correction = (s_0[p] / s_0p[p]) * (s_0p[i] / s_0[i]) * (s_0[i] / (s_r[i] - s_0p[i]))
            ratio_change = (c_s[i] / s_s[p]) / (c_r[i] / s_r[p])
            assert (1 + correction) * ratio_change - correction == t_s[i] / t_r[i]


def test_02_count_rate_calibration(grid256):
    config = lab_scale_config(grid256)
    started = time.perf_counter()
    record = simulate_exposure(config, 3.0, seed=2)
    products = pair_and_filter(record, ProcessorSettings())
    elapsed = time.perf_counter() - started
    singles = products.counts.singles
    coincidences = products.counts.kept_pairs
    ok = (
        abs(singles - 216_000) <= 0.10 * 216_000
        and abs(coincidences - 976) <= 0.10 * 976
        and elapsed < 5.0
    )
    verdict(
        "ACCEPT-02",
        ok,
        f"3 s bare-source exposure: {singles} singles (216000 +-10%), "
        f"{coincidences} coincidences (976 +-10%), {elapsed:.2f} s",
    )


def test_03_hom_suppression(grid16):
    n = grid16.n_bins
    source = BiphotonSource(grid16, 0.01, np.full(n, 1.0 / math.sqrt(n)))
    arms = ArmConfig(
        grid=grid16,
        scattering_loss=np.zeros(n),
        sample_absorbance=np.zeros(n),
        sample_phase=np.zeros(n),
        reference_transmission=np.ones(n),
    )
    detection = DetectionConfig(grid16, np.ones(n), np.ones(n), mode_overlap=1.0, dark_rate_hz=0.0,
                                timing_jitter_sigma_s=0.0)
    config = MeasurementConfig(source, arms, detection, 1.0, 1e6)
    probs = outcome_probabilities(config)
    analytic_zero = float(np.max(np.abs(probs.pair_ab)))
    record = simulate_exposure(config, 1.0, seed=3)
    n_anti = int(np.count_nonzero(record.truth_origin == ORIGIN_PAIR_AB)) // 2
    n_bunch = int(np.count_nonzero(record.truth_pair >= 0)) // 2 - n_anti
    ok = analytic_zero == 0.0 and n_bunch > 900_000 and n_anti < 1e-3 * n_bunch
    verdict(
        "ACCEPT-03",
        ok,
        f"ideal interference: analytic antibunched probability {analytic_zero}, "
        f"Monte Carlo {n_anti} antibunched vs {n_bunch} bunched pairs",
    )


def test_04_fringe_period_law(grid256):
    n = grid256.n_bins
    source = BiphotonSource(grid256, 0.01, np.full(n, 1.0 / math.sqrt(n)))
    arms = ArmConfig(
        grid=grid256,
        scattering_loss=np.zeros(n),
        sample_absorbance=np.zeros(n),
        sample_phase=np.zeros(n),
        reference_transmission=np.ones(n),
    )
    detection = DetectionConfig(grid256, np.full(n, 0.5), np.full(n, 0.5))
    config = MeasurementConfig(source, arms, detection, 3.0, 1e5)
    delays = -200e-15 + 4e-15 * np.arange(100)
    matrix = hom_interferogram(config, delays)
    span = delays[-1] - delays[0]
    resolution = 2.0 * math.pi / span
    worst = 0.0
    for i in range(n):
        estimate = estimate_fringe_frequency(delays, matrix[:, i])
        worst = max(worst, abs(estimate - abs(grid256.delta_omega[i])))
    verdict(
        "ACCEPT-04",
        worst <= resolution,
        f"fitted fringe frequency within the scan's Fourier resolution for all "
        f"{n} bin pairs (worst {worst / resolution:.2f} of resolution)",
    )


def test_05_closed_loop_recovery(desk_campaign):
    result = desk_campaign["output"].result
    truth = desk_campaign["truth"]
    elapsed = desk_campaign["elapsed"]

    pk = result.phase_valid
    tk = result.transmission_valid
    z_phase = np.abs(result.differential_phase - truth["phase"]) / result.phase_stderr
    z_trans = np.abs(result.transmission_ratio - truth["transmission"]) / result.transmission_stderr
    peak = int(np.argmax(truth["phase"]))
    peak_ok = bool(pk[peak]) and abs(
        result.differential_phase[peak] - truth["phase"][peak]
    ) <= 3.0 * result.phase_stderr[peak]
    phase_cov = float(np.mean(z_phase[pk] <= 3.0))
    trans_cov = float(np.mean(z_trans[tk] <= 3.0))
    ok = (
        peak_ok
        and phase_cov >= 0.95
        and trans_cov >= 0.95
        and pk.sum() >= 20
        and tk.sum() >= 20
        and elapsed < 600.0
    )
    verdict(
        "ACCEPT-05",
        ok,
        f"desk-scale campaign: peak phase {result.differential_phase[peak]:+.3f} "
        f"vs 0.5 rad within 3 sigma ({peak_ok}), phase coverage {phase_cov:.2f} "
        f"({int(pk.sum())} bins), transmission coverage {trans_cov:.2f} "
        f"({int(tk.sum())} bins), {elapsed:.0f} s",
    )


def test_06_cuvette_delay_compensation(desk_campaign):
    cfg = desk_campaign["config"]
    result = desk_campaign["output"].result
    step = cfg.delay_step_fs * 1e-15
    err_s = abs(result.cuvette_delay_sample_s - cfg.sample_cuvette_delay_fs * 1e-15)
    err_r = abs(result.cuvette_delay_reference_s - cfg.reference_cuvette_delay_fs * 1e-15)
    ok = err_s <= step and err_r <= step
    verdict(
        "ACCEPT-06",
        ok,
        f"injected cell delays recovered within one 4 fs step despite the "
        f"0.5 rad sample phase (errors {err_s * 1e15:+.2f} fs, {err_r * 1e15:+.2f} fs)",
    )


def test_07_kramers_kronig_oracle(grid256):
    started = time.perf_counter()
    response = lorentzian_response(grid256, 805.0, 10.0, 1.0)
    kk = kramers_kronig_phase(grid256, response.absorbance)
    elapsed = time.perf_counter() - started
    n = grid256.n_bins
    central = slice(int(0.1 * n), int(0.9 * n))
    peak = float(np.max(np.abs(response.phase)))
    worst = float(np.max(np.abs(kk[central] - response.phase[central])))
    ok = worst < 0.01 * peak and elapsed < 1.0
    verdict(
        "ACCEPT-07",
        ok,
        f"discrete KK phase within {worst / peak * 100:.2f}% of peak over the "
        f"central 80% band ({elapsed:.2f} s)",
    )


def test_08_coupling_systematic_same_sign(tmp_path):
    common = dict(
        n_bins=32,
        delay_count=12,
        delay_start_fs=-28.0,
        repeats=2,
        exposure_seconds=1.0,
        pair_rate_hz=1e6,
        peak_efficiency=0.3,
        efficiency_width_fraction=0.5,
        sample_center_nm=790.0,
        sample_fwhm_nm=20.0,
        sample_peak_absorbance=1.0,
        sample_cuvette_delay_fs=10.0,
        reference_cuvette_delay_fs=5.0,
        dark_rate_hz=0.0,
    )
    clean_cfg = CampaignConfig(**common)
    tilted_cfg = CampaignConfig(
        **common,
        perturbation_enabled=True,
        perturbation_target="sample",
        perturbation_factor_long_nm=1.15,
        perturbation_factor_short_nm=0.85,
    )
    clean = run_campaign(clean_cfg, tmp_path / "clean", master_seed=8).result
    tilted = run_campaign(tilted_cfg, tmp_path / "tilted", master_seed=8).result

    grid = clean.grid
    wl = grid.bin_wavelengths_nm
    frac = (wl - wl.min()) / (wl.max() - wl.min())
    kappa = (0.85 + (1.15 - 0.85) * frac)[active_half_slice(grid)]

    valid = (
        clean.transmission_valid & tilted.transmission_valid
        & clean.singles_valid & tilted.singles_valid
        & (np.abs(kappa - 1.0) >= 0.05)
    )
    delta_coincidence = tilted.transmission_ratio - clean.transmission_ratio
    delta_singles = tilted.singles_transmission - clean.singles_transmission
    agree = np.sign(delta_coincidence[valid]) == np.sign(delta_singles[valid])
    expected = np.sign(delta_singles[valid]) == np.sign(kappa[valid] - 1.0)
    ok = valid.sum() >= 8 and np.mean(agree) >= 0.9 and np.mean(expected) >= 0.9
    verdict(
        "ACCEPT-08",
        ok,
        f"coupling tilt on the sample arm biases both estimators the same way: "
        f"{int(np.count_nonzero(agree))}/{int(valid.sum())} bins agree in sign, "
        f"{int(np.count_nonzero(expected))} follow the injected tilt",
    )


def test_09_pipeline_conservation(grid256):
    cfg = CampaignConfig()
    grid = build_grid(cfg)
    sample = build_response(cfg, grid, "sample")
    reference = build_response(cfg, grid, "reference")
    settings = cfg.processor_settings
    checked = 0
    for ci, label in enumerate(("sample", "reference", "blocked_reference", "blocked_sample")):
        config = build_measurement_config(cfg, grid, label, sample, reference, scale=0.1)
        for k in range(6):
            record = simulate_exposure(config.with_stage_delay(float(cfg.stage_delays_s[k])), 3.0,
                                       seed=9000 + 100 * ci + k)
            counts = pair_and_filter(record, settings).counts
            assert (
                counts.singles + 2 * counts.kept_pairs + 2 * counts.rejected_pairs
                + counts.discarded_events == record.n_events
            )
            checked += 1
    verdict(
        "ACCEPT-09",
        checked == 24,
        f"event conservation exact on {checked} processed exposures across all "
        f"four configurations",
    )


def test_10_determinism(tmp_path):
    cfg = CampaignConfig(
        n_bins=32, delay_count=8, delay_start_fs=-20.0, repeats=2,
        exposure_seconds=0.2, pair_rate_hz=2e5, peak_efficiency=0.3,
        efficiency_width_fraction=0.5, sample_center_nm=790.0,
        sample_fwhm_nm=20.0, sample_peak_absorbance=1.0,
        sample_cuvette_delay_fs=8.0, reference_cuvette_delay_fs=4.0,
    )
    first = run_campaign(cfg, tmp_path / "first", master_seed=77)
    second = run_campaign(cfg, tmp_path / "second", master_seed=77)

    def hashes(output):
        return [
            line.split("  ", 1)[0]
            for line in output.manifest_path.read_text().splitlines()
            if not line.startswith("#")
        ]

    ok = hashes(first) == hashes(second) and len(hashes(first)) > 0
    verdict(
        "ACCEPT-10",
        ok,
        f"identical master seed reproduces byte-identical outputs "
        f"({len(hashes(first))} files hashed)",
    )
