"""Monte Carlo time-tagged click streams.

Pair emissions form a Poisson process, so the count of every exclusive
detection outcome over an exposure is an independent Poisson variable with
mean (attempts) * (per-attempt probability); the generator draws those counts
directly instead of looping over attempts, then assigns timestamps.  Clicks of
a surviving pair share one arrival time plus independent Gaussian jitter per
detector; dark counts arrive uniformly in time and bin on each channel.

Events are canonically ordered by (timestamp, channel, bin), and the whole
stream is a pure function of (config, duration, seed).  Ground-truth origin
labels ride along in memory for oracle tests but are never serialized.

Event file format (little endian):
    64-byte header: magic "HOMEVT01", u32 version, u32 n_bins,
                    u64 duration_ns, u64 seed, zero padding.
    11-byte records: u64 timestamp_ns, u8 channel (0=A, 1=B), u16 bin.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .grid import SpectralGrid
from .io import read_table, write_table
from .model import MeasurementConfig, outcome_probabilities

EVENT_MAGIC = b"HOMEVT01"
EVENT_VERSION = 1
_HEADER = struct.Struct("<8sIIQQ32x")
_RECORD = struct.Struct("<QBH")

CHANNEL_A = 0
CHANNEL_B = 1

# Truth codes for the origin of each click.
ORIGIN_DARK = 0
ORIGIN_SINGLE_A = 1
ORIGIN_SINGLE_B = 2
ORIGIN_PAIR_AA = 3
ORIGIN_PAIR_BB = 4
ORIGIN_PAIR_AB = 5


@dataclass(eq=False)
class ClickEvent:
    """One detector click."""

    timestamp_ns: int
    channel: str  # "A" or "B"
    bin: int


@dataclass(eq=False)
class ExposureRecord:
    """Time-ordered click stream of one exposure.

    truth_origin / truth_pair hold per-event origin codes and pair serial
    numbers (-1 for unpaired origins); they exist only in memory.
    """

    grid: SpectralGrid
    duration_s: float
    seed: int
    config_hash: str
    timestamps_ns: np.ndarray
    channels: np.ndarray
    bins: np.ndarray
    truth_origin: np.ndarray | None = field(default=None, repr=False)
    truth_pair: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.timestamps_ns = np.asarray(self.timestamps_ns, dtype=np.int64)
        self.channels = np.asarray(self.channels, dtype=np.uint8)
        self.bins = np.asarray(self.bins, dtype=np.uint16)
        n = self.timestamps_ns.size
        if self.channels.size != n or self.bins.size != n:
            raise ValueError("event arrays must have equal lengths")

    @property
    def n_events(self) -> int:
        return int(self.timestamps_ns.size)

    def events(self) -> list[ClickEvent]:
        labels = np.array(["A", "B"])
        return [
            ClickEvent(int(t), str(labels[c]), int(b))
            for t, c, b in zip(self.timestamps_ns, self.channels, self.bins)
        ]


def _canonical_order(timestamps, channels, bins):
    return np.lexsort((bins, channels, timestamps))


def seed_for_exposure(master_seed: int, configuration_index: int, repeat: int, delay_index: int) -> int:
    """Derived per-exposure seed: one master seed fans out over the campaign.

    Uses numpy's SeedSequence spawn-key mixing, so exposures are statistically
    independent and any exposure can be regenerated in isolation.
    """
    seq = np.random.SeedSequence(master_seed, spawn_key=(configuration_index, repeat, delay_index))
    return int(seq.generate_state(1, np.uint64)[0])


def simulate_exposure(config: MeasurementConfig, duration_s: float, seed: int) -> ExposureRecord:
    """Generate the click stream of one exposure.

    Draw order (fixed for reproducibility): category counts for A singles,
    B singles, bunched AA, bunched BB, antibunched AB, dark counts per
    channel; then timestamps and jitter in the same order.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    grid = config.grid
    n = grid.n_bins
    rng = np.random.default_rng(seed)
    duration_ns = int(round(duration_s * 1e9))

    probs = outcome_probabilities(config)
    attempts = config.attempts(duration_s)
    jitter_ns = config.detection.timing_jitter_sigma_s * 1e9

    low = np.arange(n // 2)  # unordered pairs keyed by their low bin

    n_single_a = rng.poisson(attempts * probs.single_a)
    n_single_b = rng.poisson(attempts * probs.single_b)
    n_pair_aa = rng.poisson(attempts * probs.pair_aa[low])
    n_pair_bb = rng.poisson(attempts * probs.pair_bb[low])
    n_pair_ab = rng.poisson(attempts * probs.pair_ab)
    n_dark_a = rng.poisson(config.detection.dark_rate_hz * duration_s)
    n_dark_b = rng.poisson(config.detection.dark_rate_hz * duration_s)

    times, chans, bins_out, origins, pair_ids = [], [], [], [], []
    next_pair_id = 0

    def add_singles(counts, channel, origin):
        total = int(np.sum(counts))
        if total == 0:
            return
        times.append(rng.integers(0, duration_ns, total, dtype=np.int64))
        chans.append(np.full(total, channel, dtype=np.uint8))
        bins_out.append(np.repeat(np.arange(n, dtype=np.uint16), counts))
        origins.append(np.full(total, origin, dtype=np.uint8))
        pair_ids.append(np.full(total, -1, dtype=np.int64))

    def add_pairs(counts, bins_first, bins_second, chan_first, chan_second, origin):
        nonlocal next_pair_id
        total = int(np.sum(counts))
        if total == 0:
            return
        base = rng.integers(0, duration_ns, total, dtype=np.int64)
        if jitter_ns > 0:
            offsets = np.rint(rng.normal(0.0, jitter_ns, (total, 2))).astype(np.int64)
        else:
            offsets = np.zeros((total, 2), dtype=np.int64)
        first_bins = np.repeat(bins_first, counts).astype(np.uint16)
        second_bins = np.repeat(bins_second, counts).astype(np.uint16)
        ids = np.arange(next_pair_id, next_pair_id + total, dtype=np.int64)
        next_pair_id += total
        times.append(np.concatenate([base + offsets[:, 0], base + offsets[:, 1]]))
        chans.append(
            np.concatenate(
                [np.full(total, chan_first, dtype=np.uint8), np.full(total, chan_second, dtype=np.uint8)]
            )
        )
        bins_out.append(np.concatenate([first_bins, second_bins]))
        origins.append(np.full(2 * total, origin, dtype=np.uint8))
        pair_ids.append(np.concatenate([ids, ids]))

    add_singles(n_single_a, CHANNEL_A, ORIGIN_SINGLE_A)
    add_singles(n_single_b, CHANNEL_B, ORIGIN_SINGLE_B)

    partner_low = grid.n_bins - 1 - low
    add_pairs(n_pair_aa, low, partner_low, CHANNEL_A, CHANNEL_A, ORIGIN_PAIR_AA)
    add_pairs(n_pair_bb, low, partner_low, CHANNEL_B, CHANNEL_B, ORIGIN_PAIR_BB)
    # Antibunched outcomes are keyed by the A-side bin over the full grid.
    add_pairs(n_pair_ab, np.arange(n), np.arange(n)[::-1], CHANNEL_A, CHANNEL_B, ORIGIN_PAIR_AB)

    for n_dark, channel in ((n_dark_a, CHANNEL_A), (n_dark_b, CHANNEL_B)):
        if n_dark > 0:
            times.append(rng.integers(0, duration_ns, n_dark, dtype=np.int64))
            chans.append(np.full(n_dark, channel, dtype=np.uint8))
            bins_out.append(rng.integers(0, n, n_dark, dtype=np.int64).astype(np.uint16))
            origins.append(np.full(n_dark, ORIGIN_DARK, dtype=np.uint8))
            pair_ids.append(np.full(n_dark, -1, dtype=np.int64))

    if times:
        t = np.concatenate(times)
        c = np.concatenate(chans)
        b = np.concatenate(bins_out)
        o = np.concatenate(origins)
        p = np.concatenate(pair_ids)
    else:
        t = np.empty(0, dtype=np.int64)
        c = np.empty(0, dtype=np.uint8)
        b = np.empty(0, dtype=np.uint16)
        o = np.empty(0, dtype=np.uint8)
        p = np.empty(0, dtype=np.int64)

    # Jitter can push a click outside the exposure window; such clicks are
    # lost, the sibling (if any) stays as an unpaired click.
    inside = (t >= 0) & (t < duration_ns)
    t, c, b, o, p = t[inside], c[inside], b[inside], o[inside], p[inside]

    order = _canonical_order(t, c, b)
    return ExposureRecord(
        grid=grid,
        duration_s=duration_s,
        seed=int(seed),
        config_hash=config.config_hash(),
        timestamps_ns=t[order],
        channels=c[order],
        bins=b[order],
        truth_origin=o[order],
        truth_pair=p[order],
    )


# ---------------------------------------------------------------------------
# coupling perturbation
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CouplingPerturbation:
    """Per-bin multiplicative detection-efficiency factor.

    Stands in for alignment-dependent fiber-coupling changes: inserting a
    slightly wedged cuvette deflects the beam and reshapes the coupled
    spectrum, so one measurement configuration can see different effective
    efficiencies than its calibration partners.
    """

    grid: SpectralGrid
    factors: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.factors, dtype=float)
        if arr.shape == ():
            arr = np.full(self.grid.n_bins, float(arr))
        if arr.shape != (self.grid.n_bins,):
            raise ValueError("factors must be a scalar or have one entry per bin")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("factors must be finite and non-negative")
        self.factors = arr


def linear_tilt(grid: SpectralGrid, factor_long_wavelength: float, factor_short_wavelength: float) -> CouplingPerturbation:
    """Coupling factor ramping linearly in wavelength across the band."""
    wl = grid.bin_wavelengths_nm
    frac = (wl - wl.min()) / (wl.max() - wl.min())
    factors = factor_short_wavelength + (factor_long_wavelength - factor_short_wavelength) * frac
    return CouplingPerturbation(grid, factors)


def apply_perturbation(config: MeasurementConfig, perturbation: CouplingPerturbation) -> MeasurementConfig:
    """Scale both channel efficiencies by the perturbation factors."""
    if not perturbation.grid.same_lattice(config.grid):
        raise ValueError("perturbation grid does not match the configuration")
    eta_a = config.detection.efficiency_a * perturbation.factors
    eta_b = config.detection.efficiency_b * perturbation.factors
    if np.any(eta_a > 1) or np.any(eta_b > 1):
        raise ValueError("perturbed efficiencies exceed 1")
    detection = replace(config.detection, efficiency_a=eta_a, efficiency_b=eta_b)
    return replace(config, detection=detection)


# ---------------------------------------------------------------------------
# event file I/O
# ---------------------------------------------------------------------------


def write_event_file(path, record: ExposureRecord) -> None:
    path = Path(path)
    duration_ns = int(round(record.duration_s * 1e9))
    header = _HEADER.pack(
        EVENT_MAGIC,
        EVENT_VERSION,
        record.grid.n_bins,
        duration_ns,
        record.seed % (1 << 64),
    )
    body = np.empty(
        record.n_events,
        dtype=np.dtype([("t", "<u8"), ("c", "u1"), ("b", "<u2")]),
    )
    body["t"] = record.timestamps_ns.astype(np.uint64)
    body["c"] = record.channels
    body["b"] = record.bins
    with path.open("wb") as f:
        f.write(header)
        f.write(body.tobytes())


def read_event_file(path, grid: SpectralGrid) -> ExposureRecord:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated header (offset 0)")
    magic, version, n_bins, duration_ns, seed = _HEADER.unpack_from(blob, 0)
    if magic != EVENT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r} (offset 0)")
    if version != EVENT_VERSION:
        raise ValueError(f"{path}: unsupported version {version} (offset 8)")
    if n_bins != grid.n_bins:
        raise ValueError(f"{path}: file has {n_bins} bins, grid has {grid.n_bins}")
    payload = blob[_HEADER.size :]
    if len(payload) % _RECORD.size != 0:
        raise ValueError(f"{path}: truncated record at offset {_HEADER.size + len(payload)}")
    body = np.frombuffer(payload, dtype=np.dtype([("t", "<u8"), ("c", "u1"), ("b", "<u2")]))
    return ExposureRecord(
        grid=grid,
        duration_s=duration_ns / 1e9,
        seed=int(seed),
        config_hash="",
        timestamps_ns=body["t"].astype(np.int64),
        channels=body["c"].copy(),
        bins=body["b"].copy(),
    )


def write_events_csv(path, record: ExposureRecord) -> None:
    labels = np.array(["A", "B"])
    write_table(
        path,
        {
            "timestamp_ns": record.timestamps_ns,
            "channel": labels[record.channels],
            "bin": record.bins,
        },
        header={
            **record.grid.header(),
            "duration_ns": int(round(record.duration_s * 1e9)),
            "seed": record.seed,
        },
    )


def read_events_csv(path, grid: SpectralGrid) -> ExposureRecord:
    header, cols = read_table(path)
    if int(header.get("n_bins", grid.n_bins)) != grid.n_bins:
        raise ValueError(f"{path}: bin count does not match the grid")
    if len(cols) == 0 or cols["timestamp_ns"].size == 0:
        t = np.empty(0, dtype=np.int64)
        c = np.empty(0, dtype=np.uint8)
        b = np.empty(0, dtype=np.uint16)
    else:
        t = cols["timestamp_ns"].astype(np.int64)
        c = np.where(np.asarray(cols["channel"]) == "B", CHANNEL_B, CHANNEL_A).astype(np.uint8)
        b = cols["bin"].astype(np.uint16)
    return ExposureRecord(
        grid=grid,
        duration_s=int(header["duration_ns"]) / 1e9,
        seed=int(header.get("seed", 0)),
        config_hash="",
        timestamps_ns=t,
        channels=c,
        bins=b,
    )
