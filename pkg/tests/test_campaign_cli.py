import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from homspec.campaign import (
    CampaignConfig,
    CampaignConfigError,
    CONFIGURATION_ORDER,
    build_grid,
    build_measurement_config,
    build_response,
    lab_scale_config,
    parse_campaign_config,
    run_campaign,
    validate_campaign_responses,
)
from homspec.cli import main as cli_main
from homspec.io import read_key_values, read_table
from homspec.model import expected_spectra
from homspec.reconstruct import ReconstructionResult
from homspec.samples import SampleResponse, flat_response, lorentzian_response
from homspec.spectra_io import read_spectra_csv

EXAMPLE_INI = Path(__file__).resolve().parent.parent / "docs" / "campaign_example.ini"


def tiny_config(**overrides) -> CampaignConfig:
    defaults = dict(
        n_bins=32,
        delay_count=12,
        delay_start_fs=-28.0,
        repeats=2,
        exposure_seconds=0.2,
        pair_rate_hz=2e5,
        peak_efficiency=0.3,
        efficiency_width_fraction=0.5,
        sample_center_nm=790.0,
        sample_fwhm_nm=20.0,
        sample_peak_absorbance=1.0,
        sample_cuvette_delay_fs=10.0,
        reference_cuvette_delay_fs=5.0,
        dark_rate_hz=10.0,
    )
    defaults.update(overrides)
    return CampaignConfig(**defaults)


def write_tiny_ini(path: Path, **overrides) -> Path:
    cfg = tiny_config(**overrides)
    text = f"""
[grid]
n_bins = {cfg.n_bins}

[source]
pair_rate_hz = {cfg.pair_rate_hz}

[detection]
peak_efficiency = {cfg.peak_efficiency}
efficiency_width_fraction = {cfg.efficiency_width_fraction}
dark_rate_hz = {cfg.dark_rate_hz}

[sample]
center_nm = {cfg.sample_center_nm}
fwhm_nm = {cfg.sample_fwhm_nm}
peak_absorbance = {cfg.sample_peak_absorbance}
cuvette_delay_fs = {cfg.sample_cuvette_delay_fs}

[reference]
cuvette_delay_fs = {cfg.reference_cuvette_delay_fs}

[scan]
delay_start_fs = {cfg.delay_start_fs}
delay_step_fs = {cfg.delay_step_fs}
delay_count = {cfg.delay_count}

[run]
exposure_seconds = {cfg.exposure_seconds}
repeats = {cfg.repeats}
"""
    path.write_text(text.strip() + "\n", encoding="utf-8")
    return path


class TestConfigParsing:
    def test_example_ini_parses_to_defaults(self):
        cfg = parse_campaign_config(EXAMPLE_INI)
        assert cfg.n_bins == 256
        assert cfg.center_wavelength_nm == 810.0
        assert cfg.bandwidth_nm == 155.0
        assert cfg.pair_rate_hz == pytest.approx(7.27e6)
        assert cfg.delay_count == 100
        assert cfg.delay_step_fs == pytest.approx(4.0)
        assert cfg.repeats == 10
        assert cfg.exposure_seconds == pytest.approx(3.0)
        assert cfg.coincidence_window_ns == pytest.approx(25.0)
        assert cfg.energy_tolerance_bins == 2
        assert cfg.sample_kind == "lorentzian"
        assert not cfg.perturbation_enabled

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[grid]\nbogus = 1\n", encoding="utf-8")
        with pytest.raises(CampaignConfigError, match="unknown key"):
            parse_campaign_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[nonsense]\nx = 1\n", encoding="utf-8")
        with pytest.raises(CampaignConfigError, match="unknown section"):
            parse_campaign_config(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[grid]\nn_bins = many\n", encoding="utf-8")
        with pytest.raises(CampaignConfigError, match="bad value"):
            parse_campaign_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(CampaignConfigError, match="not found"):
            parse_campaign_config(tmp_path / "absent.ini")

    def test_too_few_delays_rejected(self):
        with pytest.raises(CampaignConfigError, match="delay steps"):
            tiny_config(delay_count=4)

    def test_missing_response_file_rejected(self, tmp_path):
        with pytest.raises(CampaignConfigError, match="response file"):
            CampaignConfig(sample_kind="file", sample_file="nope.csv", base_dir=tmp_path)


class TestResponseValidation:
    def test_lorentzian_sample_is_confined(self):
        cfg = tiny_config()
        grid = build_grid(cfg)
        sample = build_response(cfg, grid, "sample")
        assert sample.is_flat_on_long_wavelength_half()

    def test_unconfined_sample_rejected(self):
        cfg = tiny_config()
        grid = build_grid(cfg)
        leaky = lorentzian_response(grid, 790.0, 20.0, 1.0)  # tails cross 810 nm
        reference = flat_response(grid, 1.0)
        with pytest.raises(CampaignConfigError, match="flat on the long-wavelength half"):
            validate_campaign_responses(leaky, reference)

    def test_blocked_configurations_have_dead_arm(self):
        cfg = tiny_config()
        grid = build_grid(cfg)
        sample = build_response(cfg, grid, "sample")
        reference = build_response(cfg, grid, "reference")
        blocked_ref = build_measurement_config(cfg, grid, "blocked_reference", sample, reference)
        blocked_sam = build_measurement_config(cfg, grid, "blocked_sample", sample, reference)
        assert np.all(blocked_ref.arms.reference_arm_transmission == 0)
        assert np.all(blocked_sam.arms.sample_transmission == 0)
        # No interference without both arms.
        assert np.all(expected_spectra(blocked_ref).coincidence_sum == 0)
        assert np.all(expected_spectra(blocked_sam).coincidence_sum == 0)


class TestCampaignRun:
    def test_outputs_and_manifest(self, tmp_path):
        out = run_campaign(tiny_config(), tmp_path / "run", master_seed=7)
        names = {p.name for p in out.files}
        assert "reconstruction.csv" in names
        assert "reconstruction_summary.json" in names
        assert "truth_sample.csv" in names
        assert "interferogram_sample.csv" in names
        assert "processing_report.txt" in names
        for label in CONFIGURATION_ORDER:
            assert f"spectra_{label}_rep00.csv" in names
            assert f"spectra_{label}_rep01.csv" in names
        manifest = out.manifest_path.read_text().splitlines()
        assert manifest[0] == "# status=complete"
        hashed = {line.split("  ", 1)[1] for line in manifest if not line.startswith("#")}
        assert hashed == {str(p.relative_to(out.output_dir)) for p in out.files}

    def test_determinism_byte_identical(self, tmp_path):
        out_a = run_campaign(tiny_config(), tmp_path / "a", master_seed=11)
        out_b = run_campaign(tiny_config(), tmp_path / "b", master_seed=11)
        lines_a = out_a.manifest_path.read_text().splitlines()
        lines_b = out_b.manifest_path.read_text().splitlines()
        assert lines_a == lines_b  # same hashes for every file
        out_c = run_campaign(tiny_config(), tmp_path / "c", master_seed=12)
        assert out_c.manifest_path.read_text() != out_a.manifest_path.read_text()

    def test_parallelism_matches_serial(self, tmp_path):
        serial = run_campaign(tiny_config(), tmp_path / "serial", master_seed=5, parallelism=1)
        parallel = run_campaign(tiny_config(), tmp_path / "parallel", master_seed=5, parallelism=3)
        hashes = lambda o: [l.split("  ")[0] for l in o.manifest_path.read_text().splitlines() if not l.startswith("#")]
        assert hashes(serial) == hashes(parallel)

    def test_scale_scales_counts(self, tmp_path):
        full = run_campaign(tiny_config(repeats=1), tmp_path / "full", master_seed=3, scale=1.0)
        small = run_campaign(tiny_config(repeats=1), tmp_path / "small", master_seed=3, scale=0.25)
        report_full = read_key_values(tmp_path / "full" / "processing_report.txt")
        report_small = read_key_values(tmp_path / "small" / "processing_report.txt")
        ratio = int(report_small["total_events"]) / int(report_full["total_events"])
        assert ratio == pytest.approx(0.25, rel=0.05)

    def test_summary_contents(self, tmp_path):
        out = run_campaign(tiny_config(), tmp_path / "run", master_seed=7)
        summary = json.loads((tmp_path / "run" / "reconstruction_summary.json").read_text())
        assert summary["repeats"] == 2
        assert summary["master_seed"] == 7
        assert summary["cuvette_delay_sample_fs"] == pytest.approx(10.0, abs=2.0)
        assert summary["cuvette_delay_reference_fs"] == pytest.approx(5.0, abs=2.0)

    def test_spectra_round_trip_from_disk(self, tmp_path):
        out = run_campaign(tiny_config(repeats=1), tmp_path / "run", master_seed=9)
        sets = read_spectra_csv(tmp_path / "run" / "spectra_sample_rep00.csv")
        assert len(sets) == 12
        delays = [s.stage_delay_s for s in sets]
        assert delays == sorted(delays)
        assert np.nansum(sets[0].singles) > 0


class TestPipelineComposition:
    def test_stagewise_cli_equals_campaign(self, tmp_path):
        ini = write_tiny_ini(tmp_path / "campaign.ini")
        run_dir = tmp_path / "run"
        cfg = parse_campaign_config(ini)
        run_campaign(cfg, run_dir, master_seed=21, keep_events=True)

        # Stage 1: simulate must reproduce the campaign's event stream.
        event_out = tmp_path / "solo_events.bin"
        rc = cli_main([
            "simulate", "--config", str(ini), "--configuration", "sample",
            "--repeat", "0", "--delay-index", "3", "--seed", "21",
            "--output", str(event_out),
        ])
        assert rc == 0
        campaign_events = run_dir / "events" / "events_sample_rep00_d003.bin"
        assert event_out.read_bytes() == campaign_events.read_bytes()

        # Stage 2: process with the campaign's pooled efficiency ratio must
        # reproduce the matching delay block of the campaign's spectra file.
        spectra_out = tmp_path / "solo_spectra.csv"
        delay_fs = cfg.stage_delays_s[3] * 1e15
        rc = cli_main([
            "process", "--config", str(ini), "--events", str(event_out),
            "--delay-fs", repr(float(delay_fs)),
            "--efficiency-ratio", str(run_dir / "efficiency_ratio_rep00.csv"),
            "--output", str(spectra_out),
        ])
        assert rc == 0
        solo = read_spectra_csv(spectra_out)[0]
        full = read_spectra_csv(run_dir / "spectra_sample_rep00.csv")[3]
        assert np.allclose(solo.singles, full.singles, equal_nan=True)
        assert np.allclose(solo.coincidence_sum, full.coincidence_sum, equal_nan=True)
        assert np.allclose(solo.coincidence_diff, full.coincidence_diff, equal_nan=True)

        # Stage 3: reconstruct from the campaign's own spectra files must
        # reproduce its reconstruction byte for byte.
        result_out = tmp_path / "solo_result.csv"
        rc = cli_main([
            "reconstruct", "--config", str(ini), "--input", str(run_dir),
            "--output", str(result_out),
        ])
        assert rc == 0
        assert result_out.read_bytes() == (run_dir / "reconstruction.csv").read_bytes()


class TestCliCommands:
    def test_process_empty_event_file(self, tmp_path, capsys):
        ini = write_tiny_ini(tmp_path / "c.ini")
        cfg = parse_campaign_config(ini)
        from homspec.simulate import ExposureRecord, write_event_file

        grid = build_grid(cfg)
        empty = ExposureRecord(
            grid=grid, duration_s=0.2, seed=0, config_hash="",
            timestamps_ns=np.empty(0, dtype=np.int64),
            channels=np.empty(0, dtype=np.uint8),
            bins=np.empty(0, dtype=np.uint16),
        )
        path = tmp_path / "empty.bin"
        write_event_file(path, empty)
        out_csv = tmp_path / "spectra.csv"
        rc = cli_main(["process", "--config", str(ini), "--events", str(path), "--output", str(out_csv)])
        assert rc == 0
        sets = read_spectra_csv(out_csv)
        # Empty stream: nothing to correct, all-zero spectra.
        assert len(sets) == 1
        assert np.all(sets[0].singles == 0)
        assert np.all(sets[0].coincidence_sum == 0)
        assert np.all(sets[0].coincidence_diff == 0)

    def test_kk_reproduces_analytic_phase(self, tmp_path):
        from homspec import make_grid

        grid = make_grid(810.0, 155.0, 256)
        response = lorentzian_response(grid, 805.0, 10.0, 1.0)
        src = tmp_path / "absorbance.csv"
        SampleResponse(grid, response.absorbance, np.zeros(grid.n_bins)).to_csv(src)
        dst = tmp_path / "phase.csv"
        rc = cli_main(["kk", "--input", str(src), "--output", str(dst)])
        assert rc == 0
        _, cols = read_table(dst)
        order = np.argsort(-cols["wavelength_nm"])
        peak = np.max(np.abs(response.phase))
        central = slice(26, 230)
        assert np.max(np.abs(cols["phase_rad"][order][central] - response.phase[central])) < 0.01 * peak

    def test_report_renders_figures(self, tmp_path):
        run_dir = tmp_path / "run"
        run_campaign(tiny_config(repeats=1), run_dir, master_seed=13)
        rc = cli_main(["report", "--input", str(run_dir)])
        assert rc == 0
        figures = sorted(p.name for p in (run_dir / "figures").glob("*.png"))
        assert figures == [
            "hom_dip.png",
            "interferogram_reference.png",
            "interferogram_sample.png",
            "reconstruction.png",
            "singles_spectra.png",
        ]

    def test_cli_reports_stage_on_error(self, tmp_path, capsys):
        rc = cli_main(["process", "--config", str(tmp_path / "missing.ini"),
                       "--events", "x.bin", "--output", "y.csv"])
        assert rc == 1
        err = capsys.readouterr().err
        assert "error [process]" in err
        assert "not found" in err

    def test_simulate_rejects_bad_delay_index(self, tmp_path, capsys):
        ini = write_tiny_ini(tmp_path / "c.ini")
        rc = cli_main([
            "simulate", "--config", str(ini), "--delay-index", "99",
            "--output", str(tmp_path / "e.bin"),
        ])
        assert rc == 1
        assert "outside the scan" in capsys.readouterr().err


class TestLabScaleConfig:
    def test_count_calibration_sanity(self, grid256):
        # Full check lives in the acceptance suite; here only the analytic
        # expectation that the configuration is in the right regime.
        config = lab_scale_config(grid256)
        probs_total = expected_spectra(config).singles.sum()
        expected_singles = probs_total * config.attempts(3.0) / config.exposure_seconds * 3.0
        assert expected_singles == pytest.approx(216000, rel=0.03)


class TestPartialFailure:
    def test_manifest_flags_partial_on_failure(self, tmp_path, monkeypatch):
        import homspec.campaign as campaign_module

        def boom(*args, **kwargs):
            raise RuntimeError("injected failure")

        monkeypatch.setattr(campaign_module, "reconstruct_repeat", boom)
        with pytest.raises(RuntimeError, match="injected failure"):
            run_campaign(tiny_config(repeats=1), tmp_path / "run", master_seed=1)
        manifest = (tmp_path / "run" / "MANIFEST").read_text().splitlines()
        assert manifest[0] == "# status=partial"
        assert len([l for l in manifest if not l.startswith("#")]) > 0
