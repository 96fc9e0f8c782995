"""File formats for corrected spectra and campaign result trees.

One spectra CSV holds a whole delay scan in long format (bin, wavelength_nm,
S, C_plus, C_minus, delay_fs) under the grid provenance header; masked bins
carry NaN in the corrected columns.  The raw partner-diagonal joint spectra
of a single delay step serialize separately as a dense per-bin matrix.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import SpectralGrid, grid_from_header
from .io import read_table, write_table
from .model import SpectraSet


def write_spectra_csv(path, sets: list[SpectraSet], extra_header: dict | None = None) -> None:
    if not sets:
        raise ValueError("no spectra to write")
    grid = sets[0].grid
    n = grid.n_bins
    write_table(
        path,
        {
            "bin": np.tile(np.arange(n), len(sets)),
            "wavelength_nm": np.tile(grid.bin_wavelengths_nm, len(sets)),
            "S": np.concatenate([s.singles for s in sets]),
            "C_plus": np.concatenate([s.coincidence_sum for s in sets]),
            "C_minus": np.concatenate([s.coincidence_diff for s in sets]),
            "delay_fs": np.repeat([s.stage_delay_s * 1e15 for s in sets], n),
        },
        header={**grid.header(), **(extra_header or {})},
    )


def read_spectra_csv(path, grid: SpectralGrid | None = None) -> list[SpectraSet]:
    """Rebuild the per-delay spectra of one scan.

    The raw joint spectra are not part of this format and come back zeroed;
    validity is encoded by NaN in the corrected columns.
    """
    header, cols = read_table(path)
    file_grid = grid_from_header(header)
    if grid is not None and not grid.same_lattice(file_grid):
        raise ValueError(f"{path}: grid does not match")
    use = grid if grid is not None else file_grid
    n = use.n_bins
    rows = cols["bin"].size
    if rows % n != 0:
        raise ValueError(f"{path}: row count {rows} is not a multiple of {n} bins")
    sets = []
    for k in range(rows // n):
        block = slice(k * n, (k + 1) * n)
        order = np.argsort(cols["bin"][block])
        singles = cols["S"][block][order]
        c_plus = cols["C_plus"][block][order]
        c_minus = cols["C_minus"][block][order]
        valid = np.isfinite(singles) & np.isfinite(c_plus) & np.isfinite(c_minus)
        sets.append(
            SpectraSet(
                grid=use,
                stage_delay_s=float(cols["delay_fs"][block][0]) * 1e-15,
                singles=singles,
                coincidence_sum=c_plus,
                coincidence_diff=c_minus,
                bunched_aa=np.zeros(n),
                bunched_bb=np.zeros(n),
                antibunched_a=np.zeros(n),
                antibunched_b=np.zeros(n),
                valid=valid,
            )
        )
    return sets


def write_joint_spectra_csv(path, spectra: SpectraSet) -> None:
    """Dense per-bin matrix of the raw partner-diagonal joint spectra."""
    grid = spectra.grid
    write_table(
        path,
        {
            "bin": np.arange(grid.n_bins),
            "wavelength_nm": grid.bin_wavelengths_nm,
            "bunched_aa": spectra.bunched_aa,
            "bunched_bb": spectra.bunched_bb,
            "antibunched_a": spectra.antibunched_a,
            "antibunched_b": spectra.antibunched_b,
        },
        header={**grid.header(), "delay_fs": repr(float(spectra.stage_delay_s) * 1e15)},
    )


def read_efficiency_ratio_csv(path, grid: SpectralGrid) -> tuple[np.ndarray, np.ndarray]:
    header, cols = read_table(path)
    if int(header["n_bins"]) != grid.n_bins:
        raise ValueError(f"{path}: bin count does not match the grid")
    order = np.argsort(cols["bin"])
    ratio = cols["ratio_b_over_a"][order]
    valid = cols["valid"][order] > 0
    return ratio, valid


def discover_repeats(directory) -> list[int]:
    """Repeat indices present in a campaign output directory."""
    directory = Path(directory)
    repeats = sorted(
        int(p.stem.rsplit("rep", 1)[1])
        for p in directory.glob("spectra_sample_rep*.csv")
    )
    if not repeats:
        raise FileNotFoundError(f"no spectra_sample_rep*.csv files in {directory}")
    return repeats
