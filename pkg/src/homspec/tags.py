"""Click-stream post-processing: pairing, energy filtering, accumulation.

A single forward pass over the time-sorted stream classifies every event.
The window rule is anchor based: starting at the earliest unconsumed event,
count the events inside [t, t + window].  Exactly two form a candidate pair,
one is a single, three or more are discarded outright (cheap, unbiased, and
rare at realistic rates).  Candidate pairs whose bins violate energy
conservation beyond the configured tolerance are rejected as accidentals;
their clicks do not return to the singles pool, which avoids double counting
at the price of a sub-percent loss of true singles.

Accumulation applies the same relative-efficiency corrections as the analytic
model, with the ratio estimated from the measured click spectra themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import SpectralGrid
from .io import write_key_values
from .model import SpectraSet, efficiency_ratio_from_singles
from .simulate import CHANNEL_A, CHANNEL_B, ExposureRecord


@dataclass(frozen=True)
class ProcessorSettings:
    """Pairing window [ns], energy tolerance [bins], pileup policy.

    crowded_window_policy names the handling of windows holding three or more
    clicks; only "discard" (drop all of them) is implemented, chosen because
    it is unbiased and pileup is rare at realistic rates.
    """

    coincidence_window_ns: float = 25.0
    energy_tolerance_bins: int = 2
    crowded_window_policy: str = "discard"

    def __post_init__(self):
        if self.coincidence_window_ns <= 0:
            raise ValueError("coincidence window must be positive")
        if self.energy_tolerance_bins < 0:
            raise ValueError("energy tolerance must be non-negative")
        if self.crowded_window_policy != "discard":
            raise ValueError(f"unsupported crowded-window policy {self.crowded_window_policy!r}")


@dataclass(eq=False)
class PairingResult:
    """Index-level outcome of the window scan over one stream."""

    first: np.ndarray  # indices of pair members, earlier click
    second: np.ndarray
    singles: np.ndarray  # indices of unpaired events
    discarded_events: int
    total_events: int

    def check_conservation(self) -> bool:
        return self.singles.size + 2 * self.first.size + self.discarded_events == self.total_events


def pair_events(record: ExposureRecord, settings: ProcessorSettings) -> PairingResult:
    """Greedy forward scan splitting a stream into pairs, singles, pileup."""
    t = record.timestamps_ns
    n = t.size
    if n and np.any(np.diff(t) < 0):
        raise ValueError("event stream is not time sorted")
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return PairingResult(empty, empty, empty, 0, 0)

    window = np.int64(round(settings.coincidence_window_ns))
    # occupancy[i]: number of events in [t_i, t_i + window], including i
    occupancy = np.searchsorted(t, t + window, side="right") - np.arange(n)

    firsts: list[int] = []
    seconds: list[int] = []
    single_mask = np.ones(n, dtype=bool)
    discarded = 0

    # Only anchors with occupancy > 1 need the sequential walk; everything
    # between them is isolated and stays a single.
    busy = np.flatnonzero(occupancy > 1)
    pos = 0
    for anchor in busy:
        if anchor < pos:
            continue  # consumed by an earlier window
        k = int(occupancy[anchor])
        if k == 2:
            firsts.append(anchor)
            seconds.append(anchor + 1)
            single_mask[anchor : anchor + 2] = False
        else:
            single_mask[anchor : anchor + k] = False
            discarded += k
        pos = anchor + k

    return PairingResult(
        first=np.asarray(firsts, dtype=np.int64),
        second=np.asarray(seconds, dtype=np.int64),
        singles=np.flatnonzero(single_mask),
        discarded_events=discarded,
        total_events=n,
    )


def energy_filter(
    pairing: PairingResult,
    record: ExposureRecord,
    grid: SpectralGrid,
    settings: ProcessorSettings,
) -> np.ndarray:
    """Boolean keep-mask over candidate pairs.

    A pair at bins (i, j) passes when |i + j - (N-1)| <= tolerance; everything
    else is an accidental (cross-pair pileup or a dark count) and is dropped
    together with its clicks.
    """
    b1 = record.bins[pairing.first].astype(np.int64)
    b2 = record.bins[pairing.second].astype(np.int64)
    deviation = np.abs(b1 + b2 - (grid.n_bins - 1))
    return deviation <= settings.energy_tolerance_bins


@dataclass(eq=False)
class ProcessingCounts:
    """Event bookkeeping for one processed stream."""

    total_events: int
    singles: int
    kept_pairs: int
    rejected_pairs: int
    discarded_events: int

    def conserved(self) -> bool:
        return (
            self.singles + 2 * self.kept_pairs + 2 * self.rejected_pairs + self.discarded_events
            == self.total_events
        )

    def as_dict(self) -> dict:
        return {
            "total_events": self.total_events,
            "singles": self.singles,
            "kept_pairs": self.kept_pairs,
            "rejected_pairs": self.rejected_pairs,
            "discarded_events": self.discarded_events,
        }


@dataclass(eq=False)
class ExposureProducts:
    """Compact per-exposure products, sufficient for accumulation.

    Click spectra count every event (paired or not) per channel, which is the
    unconditioned-singles input of the efficiency-ratio calibration; the pair
    arrays hold the kept pairs only.
    """

    grid: SpectralGrid
    stage_delay_s: float
    clicks_a: np.ndarray
    clicks_b: np.ndarray
    singles_a: np.ndarray
    singles_b: np.ndarray
    pair_bins_1: np.ndarray
    pair_bins_2: np.ndarray
    pair_chan_1: np.ndarray
    pair_chan_2: np.ndarray
    counts: ProcessingCounts


def pair_and_filter(
    record: ExposureRecord,
    settings: ProcessorSettings,
    stage_delay_s: float = 0.0,
) -> ExposureProducts:
    """Run the window scan and energy filter, histogram the survivors."""
    grid = record.grid
    n = grid.n_bins
    pairing = pair_events(record, settings)
    keep = energy_filter(pairing, record, grid, settings)

    first = pairing.first[keep]
    second = pairing.second[keep]
    counts = ProcessingCounts(
        total_events=pairing.total_events,
        singles=int(pairing.singles.size),
        kept_pairs=int(first.size),
        rejected_pairs=int(np.count_nonzero(~keep)),
        discarded_events=pairing.discarded_events,
    )

    is_a = record.channels == CHANNEL_A
    clicks_a = np.bincount(record.bins[is_a], minlength=n).astype(float)
    clicks_b = np.bincount(record.bins[~is_a], minlength=n).astype(float)

    singles_idx = pairing.singles
    sa = singles_idx[record.channels[singles_idx] == CHANNEL_A]
    sb = singles_idx[record.channels[singles_idx] == CHANNEL_B]
    singles_a = np.bincount(record.bins[sa], minlength=n).astype(float)
    singles_b = np.bincount(record.bins[sb], minlength=n).astype(float)

    return ExposureProducts(
        grid=grid,
        stage_delay_s=stage_delay_s,
        clicks_a=clicks_a,
        clicks_b=clicks_b,
        singles_a=singles_a,
        singles_b=singles_b,
        pair_bins_1=record.bins[first].astype(np.int64),
        pair_bins_2=record.bins[second].astype(np.int64),
        pair_chan_1=record.channels[first].copy(),
        pair_chan_2=record.channels[second].copy(),
        counts=counts,
    )


def accumulate(
    products: ExposureProducts,
    efficiency_ratio: np.ndarray,
    ratio_valid: np.ndarray | None = None,
) -> SpectraSet:
    """Corrected spectra from one exposure's pairing products.

    The unconditioned singles spectrum counts kept-pair constituents as well
    as unpaired clicks; clicks of rejected pairs and of discarded pileup
    windows stay excluded.  Bins flagged invalid by the efficiency ratio are
    masked (NaN) in every corrected output.
    """
    grid = products.grid
    n = grid.n_bins
    ratio = np.asarray(efficiency_ratio, dtype=float)
    if ratio.shape != (n,):
        raise ValueError("efficiency ratio must have one entry per bin")
    valid = np.ones(n, dtype=bool) if ratio_valid is None else np.asarray(ratio_valid, dtype=bool)
    valid = valid & (ratio > 0) & np.isfinite(ratio)
    valid = valid & valid[::-1]  # corrections mix each bin with its partner

    b1, b2 = products.pair_bins_1, products.pair_bins_2
    c1, c2 = products.pair_chan_1, products.pair_chan_2

    aa = (c1 == CHANNEL_A) & (c2 == CHANNEL_A)
    bb = (c1 == CHANNEL_B) & (c2 == CHANNEL_B)
    ab = ~aa & ~bb

    bunched_aa = (
        np.bincount(b1[aa], minlength=n) + np.bincount(b2[aa], minlength=n)
    ).astype(float)
    bunched_bb = (
        np.bincount(b1[bb], minlength=n) + np.bincount(b2[bb], minlength=n)
    ).astype(float)
    # Antibunched pairs keyed by the bin of their A-side and B-side clicks.
    a_side = np.where(c1[ab] == CHANNEL_A, b1[ab], b2[ab])
    b_side = np.where(c1[ab] == CHANNEL_A, b2[ab], b1[ab])
    anti_a = np.bincount(a_side, minlength=n).astype(float)
    anti_b = np.bincount(b_side, minlength=n).astype(float)

    # Unconditioned per-bin clicks: unpaired singles plus kept-pair members.
    pair_a_hist = np.bincount(np.concatenate([b1[c1 == CHANNEL_A], b2[c2 == CHANNEL_A]]), minlength=n)
    pair_b_hist = np.bincount(np.concatenate([b1[c1 == CHANNEL_B], b2[c2 == CHANNEL_B]]), minlength=n)
    uncond_a = products.singles_a + pair_a_hist
    uncond_b = products.singles_b + pair_b_hist

    inv = np.where(valid, 1.0 / np.where(valid, ratio, 1.0), np.nan)
    inv_p = inv[::-1]

    singles = uncond_a + inv * uncond_b
    bunched = bunched_aa + inv * inv_p * bunched_bb
    anti = inv_p * anti_a + inv * anti_b
    c_plus = bunched + anti
    c_minus = bunched - anti

    for arr in (singles, c_plus, c_minus):
        arr[~valid] = np.nan

    return SpectraSet(
        grid=grid,
        stage_delay_s=products.stage_delay_s,
        singles=singles,
        coincidence_sum=c_plus,
        coincidence_diff=c_minus,
        bunched_aa=bunched_aa,
        bunched_bb=bunched_bb,
        antibunched_a=anti_a,
        antibunched_b=anti_b,
        valid=valid,
    )


def estimate_efficiency_ratio(clicks_a, clicks_b) -> tuple[np.ndarray, np.ndarray]:
    """Measured-count front end of the relative efficiency calibration."""
    return efficiency_ratio_from_singles(clicks_a, clicks_b)


def process_exposure(
    record: ExposureRecord,
    settings: ProcessorSettings | None = None,
    stage_delay_s: float = 0.0,
    efficiency_ratio: np.ndarray | None = None,
    ratio_valid: np.ndarray | None = None,
) -> tuple[SpectraSet, ProcessingCounts]:
    """Full post-processing of one exposure.

    Without an externally supplied efficiency ratio the exposure calibrates
    itself from its own click spectra (adequate at high counts; campaigns
    pool clicks over a whole repeat instead).
    """
    settings = settings or ProcessorSettings()
    products = pair_and_filter(record, settings, stage_delay_s)
    if efficiency_ratio is None:
        if record.n_events == 0:
            # Nothing to correct: an empty stream yields all-zero spectra.
            efficiency_ratio = np.ones(record.grid.n_bins)
            ratio_valid = np.ones(record.grid.n_bins, dtype=bool)
        else:
            efficiency_ratio, ratio_valid = estimate_efficiency_ratio(products.clicks_a, products.clicks_b)
    spectra = accumulate(products, efficiency_ratio, ratio_valid)
    return spectra, products.counts


def write_processing_report(path, counts: ProcessingCounts, extra: dict | None = None) -> None:
    entries = dict(counts.as_dict())
    if extra:
        entries.update(extra)
    write_key_values(path, entries)
