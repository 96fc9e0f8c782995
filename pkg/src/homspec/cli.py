"""Command-line interface.

Subcommands compose through files: `simulate` writes a time-tagged event
stream, `process` turns an event stream into corrected spectra, `reconstruct`
turns a directory of spectra into transmission and phase estimates, and
`campaign` chains everything for the full four-configuration protocol.
`kk` applies the Kramers-Kronig check to an absorbance spectrum and `report`
renders figures from a campaign output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _add_config(parser):
    parser.add_argument("--config", required=True, help="campaign configuration file (INI)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homspec",
        description="Simulate and reconstruct spectrally resolved two-photon interference spectroscopy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate one exposure's event stream")
    _add_config(p)
    p.add_argument("--configuration", default="sample",
                   choices=("sample", "reference", "blocked_reference", "blocked_sample"))
    p.add_argument("--repeat", type=int, default=0)
    p.add_argument("--delay-index", type=int, default=0)
    p.add_argument("--seed", type=int, default=0, help="campaign master seed")
    p.add_argument("--scale", type=float, default=1.0, help="count-rate scale factor")
    p.add_argument("--output", required=True, help="output event file (.bin or .csv)")

    p = sub.add_parser("process", help="event stream -> corrected spectra")
    _add_config(p)
    p.add_argument("--events", required=True)
    p.add_argument("--delay-fs", type=float, default=0.0, help="stage delay tag for the spectra")
    p.add_argument("--efficiency-ratio", default=None,
                   help="efficiency ratio CSV; default: self-calibrate from this stream")
    p.add_argument("--output", required=True, help="spectra CSV")
    p.add_argument("--report", default=None, help="processing report (key=value)")
    p.add_argument("--joint", default=None, help="raw joint-spectra matrix CSV")

    p = sub.add_parser("reconstruct", help="campaign spectra directory -> result CSV")
    _add_config(p)
    p.add_argument("--input", required=True, help="directory with spectra_*_rep*.csv files")
    p.add_argument("--output", required=True, help="reconstruction CSV")
    p.add_argument("--summary", default=None, help="JSON summary path")

    p = sub.add_parser("campaign", help="run the full four-configuration protocol")
    _add_config(p)
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--scale", type=float, default=1.0, help="count-rate scale factor")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--keep-events", action="store_true", help="also write per-exposure event files")
    p.add_argument("--progress", action="store_true")

    p = sub.add_parser("kk", help="absorbance CSV -> Kramers-Kronig phase CSV")
    p.add_argument("--input", required=True, help="sample response CSV (wavelength_nm, absorbance)")
    p.add_argument("--output", required=True)

    p = sub.add_parser("report", help="render figures from a campaign output directory")
    p.add_argument("--input", required=True, help="campaign output directory")
    p.add_argument("--output", default=None, help="figure directory (default: <input>/figures)")
    p.add_argument("--dpi", type=int, default=150)
    return parser


def cmd_simulate(args) -> int:
    from .campaign import (
        CONFIGURATION_ORDER,
        build_grid,
        build_measurement_config,
        build_response,
        parse_campaign_config,
        validate_campaign_responses,
    )
    from .simulate import seed_for_exposure, simulate_exposure, write_event_file, write_events_csv

    cfg = parse_campaign_config(args.config)
    grid = build_grid(cfg)
    sample = build_response(cfg, grid, "sample")
    reference = build_response(cfg, grid, "reference")
    validate_campaign_responses(sample, reference)
    if not 0 <= args.delay_index < cfg.delay_count:
        raise ValueError(f"delay index {args.delay_index} outside the scan (0..{cfg.delay_count - 1})")
    config = build_measurement_config(cfg, grid, args.configuration, sample, reference, args.scale)
    delay = float(cfg.stage_delays_s[args.delay_index])
    seed = seed_for_exposure(args.seed, CONFIGURATION_ORDER.index(args.configuration), args.repeat, args.delay_index)
    record = simulate_exposure(config.with_stage_delay(delay), cfg.exposure_seconds, seed)
    out = Path(args.output)
    if out.suffix == ".csv":
        write_events_csv(out, record)
    else:
        write_event_file(out, record)
    print(f"wrote {record.n_events} events to {out}")
    return 0


def cmd_process(args) -> int:
    from .campaign import build_grid, parse_campaign_config
    from .simulate import read_event_file, read_events_csv
    from .spectra_io import read_efficiency_ratio_csv, write_joint_spectra_csv, write_spectra_csv
    from .tags import process_exposure, write_processing_report

    cfg = parse_campaign_config(args.config)
    grid = build_grid(cfg)
    events = Path(args.events)
    if events.suffix == ".csv":
        record = read_events_csv(events, grid)
    else:
        record = read_event_file(events, grid)
    ratio = valid = None
    if args.efficiency_ratio:
        ratio, valid = read_efficiency_ratio_csv(args.efficiency_ratio, grid)
    spectra, counts = process_exposure(
        record,
        cfg.processor_settings,
        stage_delay_s=args.delay_fs * 1e-15,
        efficiency_ratio=ratio,
        ratio_valid=valid,
    )
    write_spectra_csv(Path(args.output), [spectra])
    if args.report:
        write_processing_report(args.report, counts)
    if args.joint:
        write_joint_spectra_csv(args.joint, spectra)
    print(
        f"processed {counts.total_events} events: "
        f"{counts.singles} singles, {counts.kept_pairs} kept pairs, "
        f"{counts.rejected_pairs} rejected, {counts.discarded_events} discarded"
    )
    return 0


def cmd_reconstruct(args) -> int:
    from .campaign import CONFIGURATION_ORDER, build_grid, parse_campaign_config
    from .reconstruct import CampaignSpectra, aggregate_repeats, reconstruct_repeat
    from .spectra_io import discover_repeats, read_spectra_csv

    cfg = parse_campaign_config(args.config)
    grid = build_grid(cfg)
    directory = Path(args.input)
    repeats = discover_repeats(directory)
    results = []
    for repeat in repeats:
        sets = {}
        for label in CONFIGURATION_ORDER:
            path = directory / f"spectra_{label}_rep{repeat:02d}.csv"
            if not path.is_file():
                raise FileNotFoundError(f"missing {path}")
            sets[label] = read_spectra_csv(path, grid)
        results.append(
            reconstruct_repeat(
                CampaignSpectra(grid=grid, **sets), min_denominator=cfg.min_denominator_counts
            )
        )
    result = aggregate_repeats(results) if len(results) >= 2 else results[0]
    result.to_csv(args.output)
    if args.summary:
        summary = {
            "repeats": len(results),
            "cuvette_delay_sample_fs": result.cuvette_delay_sample_s * 1e15,
            "cuvette_delay_reference_fs": result.cuvette_delay_reference_s * 1e15,
            "masked_transmission_bins": int(np.count_nonzero(~result.transmission_valid)),
            "masked_phase_bins": int(np.count_nonzero(~result.phase_valid)),
        }
        Path(args.summary).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"reconstructed {len(results)} repeat(s) from {directory}")
    return 0


def cmd_campaign(args) -> int:
    from .campaign import parse_campaign_config, run_campaign

    cfg = parse_campaign_config(args.config)
    output = run_campaign(
        cfg,
        args.output,
        master_seed=args.seed,
        scale=args.scale,
        parallelism=args.parallelism,
        keep_events=args.keep_events,
        progress=args.progress,
    )
    print(f"campaign complete: {len(output.files)} files in {output.output_dir}")
    print(f"manifest: {output.manifest_path}")
    return 0


def cmd_kk(args) -> int:
    from .grid import grid_from_header
    from .io import read_table, write_table
    from .samples import kramers_kronig_phase

    header, cols = read_table(args.input)
    grid = grid_from_header(header)
    order = np.argsort(-cols["wavelength_nm"])  # frequency order
    absorbance = cols["absorbance"][order]
    phase = kramers_kronig_phase(grid, absorbance)
    inverse = np.argsort(order)
    write_table(
        args.output,
        {
            "wavelength_nm": cols["wavelength_nm"],
            "absorbance": cols["absorbance"],
            "phase_rad": phase[inverse],
        },
        header=grid.header(),
    )
    print(f"wrote Kramers-Kronig phase for {grid.n_bins} bins to {args.output}")
    return 0


def cmd_report(args) -> int:
    from .report import render_campaign_report

    figures = render_campaign_report(args.input, args.output, dpi=args.dpi)
    for path in figures:
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "process": cmd_process,
    "reconstruct": cmd_reconstruct,
    "campaign": cmd_campaign,
    "kk": cmd_kk,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for stage errors
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
