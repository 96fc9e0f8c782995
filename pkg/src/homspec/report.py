"""Render campaign output files into figures.

Reads only the delimited outputs of a finished campaign directory, so it can
run long after the campaign (or on someone else's results).  Figures land
next to the CSVs, in <output>/figures by default: per-configuration singles
spectra, the sample and reference interferograms, the summed-fringe delay
curve, and the reconstruction against ground truth where truth files exist.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grid import active_half_slice, grid_from_header
from .io import read_table
from .reconstruct import ReconstructionResult
from .spectra_io import discover_repeats, read_spectra_csv

plt.rcParams.update(
    {
        "figure.figsize": (7.0, 4.2),
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 9,
    }
)


def _save(fig, path, dpi):
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return Path(path)


def plot_singles_spectra(directory: Path, out_dir: Path, dpi: int) -> Path | None:
    labels = ("sample", "reference", "blocked_reference", "blocked_sample")
    fig, ax = plt.subplots()
    plotted = False
    for label in labels:
        path = directory / f"spectra_{label}_rep00.csv"
        if not path.is_file():
            continue
        sets = read_spectra_csv(path)
        wl = sets[0].grid.bin_wavelengths_nm
        total = np.nansum([s.singles for s in sets], axis=0)
        ax.plot(wl, total, label=label.replace("_", " "))
        plotted = True
    if not plotted:
        return None
    ax.set_xlabel("wavelength (nm)")
    ax.set_ylabel("delay-summed singles (corrected counts)")
    ax.set_title("Unconditioned singles spectra, repeat 0")
    ax.legend()
    return _save(fig, out_dir / "singles_spectra.png", dpi)


def _load_interferogram(path: Path):
    header, cols = read_table(path)
    delays = cols["delay_fs"]
    pair_cols = [name for name in cols if name.startswith("pair_bin")]
    bins = np.array([int(name.replace("pair_bin", "")) for name in pair_cols])
    matrix = np.column_stack([cols[name] for name in pair_cols])
    grid = grid_from_header(header)
    return grid, delays, bins, matrix


def plot_interferogram(directory: Path, out_dir: Path, label: str, dpi: int) -> Path | None:
    path = directory / f"interferogram_{label}.csv"
    if not path.is_file():
        return None
    grid, delays, bins, matrix = _load_interferogram(path)
    delta_f_thz = np.abs(grid.delta_omega[bins]) / (2 * np.pi) / 1e12
    fig, ax = plt.subplots()
    mesh = ax.pcolormesh(delta_f_thz, delays, np.nan_to_num(matrix), shading="nearest", cmap="RdBu_r")
    fig.colorbar(mesh, ax=ax, label="coincidence difference")
    ax.set_xlabel("partner frequency difference (THz)")
    ax.set_ylabel("stage delay (fs)")
    ax.set_title(f"Phase-sensitive interference, {label}")
    return _save(fig, out_dir / f"interferogram_{label}.png", dpi)


def plot_hom_dip(directory: Path, out_dir: Path, dpi: int) -> Path | None:
    fig, ax = plt.subplots()
    plotted = False
    for label in ("sample", "reference"):
        path = directory / f"interferogram_{label}.csv"
        if not path.is_file():
            continue
        _, delays, _, matrix = _load_interferogram(path)
        ax.plot(delays, np.nansum(matrix, axis=1), label=label)
        plotted = True
    if not plotted:
        return None
    ax.set_xlabel("stage delay (fs)")
    ax.set_ylabel("summed coincidence difference")
    ax.set_title("Summed fringes (interference dip) per configuration")
    ax.legend()
    return _save(fig, out_dir / "hom_dip.png", dpi)


def plot_reconstruction(directory: Path, out_dir: Path, dpi: int) -> Path | None:
    path = directory / "reconstruction.csv"
    if not path.is_file():
        return None
    result = ReconstructionResult.from_csv(path)
    wl = result.wavelength_nm

    truth_ratio = truth_phase = None
    truth_s = directory / "truth_sample.csv"
    truth_r = directory / "truth_reference.csv"
    if truth_s.is_file() and truth_r.is_file():
        _, cols_s = read_table(truth_s)
        _, cols_r = read_table(truth_r)
        order = np.argsort(-cols_s["wavelength_nm"])
        active = active_half_slice(result.grid)
        a_diff = (cols_s["absorbance"][order] - cols_r["absorbance"][order])[active]
        truth_ratio = np.exp(-a_diff)
        truth_phase = (cols_s["phase_rad"][order] - cols_r["phase_rad"][order])[active]

    fig, (ax_t, ax_p) = plt.subplots(2, 1, figsize=(7.0, 6.4), sharex=True)
    ok = result.transmission_valid
    ax_t.errorbar(
        wl[ok], result.transmission_ratio[ok], yerr=result.transmission_stderr[ok],
        fmt="k.", ms=4, lw=0.8, label="coincidence-to-singles estimate",
    )
    sk = result.singles_valid
    ax_t.plot(wl[sk], result.singles_transmission[sk], "r-", lw=1, alpha=0.7, label="singles-only estimate")
    if truth_ratio is not None:
        ax_t.plot(wl, truth_ratio, "b-", lw=1, label="ground truth")
    ax_t.set_ylabel("transmission ratio")
    ax_t.legend(fontsize=8)

    pk = result.phase_valid
    ax_p.errorbar(
        wl[pk], result.differential_phase[pk], yerr=result.phase_stderr[pk],
        fmt="k.", ms=4, lw=0.8, label="fringe-fit estimate",
    )
    if truth_phase is not None:
        ax_p.plot(wl, truth_phase, "b-", lw=1, label="ground truth")
    ax_p.set_xlabel("wavelength (nm)")
    ax_p.set_ylabel("differential phase (rad)")
    ax_p.legend(fontsize=8)
    fig.suptitle("Recovered sample response (short-wavelength half)", fontsize=10)
    return _save(fig, out_dir / "reconstruction.png", dpi)


def render_campaign_report(directory, out_dir=None, dpi: int = 150) -> list[Path]:
    """Render every available figure; returns the paths written."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"campaign directory not found: {directory}")
    out_dir = directory / "figures" if out_dir is None else Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        discover_repeats(directory)
    except FileNotFoundError:
        pass  # figures that need spectra will skip themselves
    figures = [
        plot_singles_spectra(directory, out_dir, dpi),
        plot_interferogram(directory, out_dir, "sample", dpi),
        plot_interferogram(directory, out_dir, "reference", dpi),
        plot_hom_dip(directory, out_dir, dpi),
        plot_reconstruction(directory, out_dir, dpi),
    ]
    written = [f for f in figures if f is not None]
    if not written:
        raise FileNotFoundError(f"no renderable campaign outputs in {directory}")
    return written
