"""Timestamp streams, delay calibration, and windowed coincidence counting.

Times are integer ticks (default 1 ps/tick) so comparisons are exact and
results are portable. The matching policy is greedy earliest-first and
one-to-one: walking both streams chronologically, each event pairs with the
earliest unused partner inside the window.

Delay convention: ``delay`` is the expected value of (t_b - t_a); a pair
matches when |(t_a + delay) - t_b| <= window/2.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

STREAM_MAGIC = b"ENTTAG01"


class TimetagError(ValueError):
    pass


@dataclass(frozen=True)
class TimestampStream:
    ticks: np.ndarray  # int64, nondecreasing
    resolution_ps: int = 1

    def __post_init__(self) -> None:
        arr = np.asarray(self.ticks, dtype=np.int64)
        object.__setattr__(self, "ticks", arr)
        if self.resolution_ps <= 0:
            raise TimetagError("resolution must be positive")
        if arr.ndim != 1:
            raise TimetagError("ticks must be one-dimensional")
        if arr.size > 1 and np.any(np.diff(arr) < 0):
            raise TimetagError("ticks must be sorted nondecreasing")

    def __len__(self) -> int:
        return int(self.ticks.size)


@dataclass(frozen=True)
class CoincidenceConfig:
    delay_ticks: int = 0
    window_ticks: int = 1000  # ~1 ns at 1 ps/tick

    def __post_init__(self) -> None:
        if self.window_ticks <= 0:
            raise TimetagError("window must be positive")


def count_coincidences(
    a: TimestampStream, b: TimestampStream, cfg: CoincidenceConfig
) -> int:
    """Greedy earliest-first one-to-one coincidence count, linear time."""
    if a.resolution_ps != b.resolution_ps:
        raise TimetagError("streams must share a resolution")
    ta, tb = a.ticks, b.ticks
    delay, window = cfg.delay_ticks, cfg.window_ticks
    i = j = count = 0
    na, nb = ta.size, tb.size
    while i < na and j < nb:
        diff = int(tb[j]) - (int(ta[i]) + delay)
        if 2 * diff < -window:
            j += 1
        elif 2 * diff > window:
            i += 1
        else:
            count += 1
            i += 1
            j += 1
    return count


@dataclass(frozen=True)
class DelayEstimate:
    found: bool
    delay_ticks: int
    peak_count: int
    significance: float


def calibrate_delay(
    a: TimestampStream,
    b: TimestampStream,
    search_range_ticks: int,
    bin_ticks: int,
    significance_threshold: float = 5.0,
) -> DelayEstimate:
    """Delay maximizing the cross-correlation histogram of (t_b - t_a).

    Ties break toward the smallest |delay|. A histogram whose maximum is not
    significantly above the background returns ``found=False``, which is
    distinguishable from a true delay of zero.
    """
    if len(a) == 0 or len(b) == 0:
        raise TimetagError("streams must be nonempty")
    if bin_ticks <= 0 or search_range_ticks < bin_ticks:
        raise TimetagError("need search_range >= bin > 0")

    ta, tb = a.ticks, b.ticks
    half_bins = search_range_ticks // bin_ticks
    nbins = 2 * half_bins + 1
    counts = np.zeros(nbins, dtype=np.int64)
    lo = np.searchsorted(tb, ta - search_range_ticks, side="left")
    hi = np.searchsorted(tb, ta + search_range_ticks, side="right")
    for k in range(ta.size):
        if lo[k] == hi[k]:
            continue
        diffs = tb[lo[k] : hi[k]] - ta[k]
        idx = np.rint(diffs / bin_ticks).astype(np.int64) + half_bins
        np.add.at(counts, np.clip(idx, 0, nbins - 1), 1)

    centers = (np.arange(nbins) - half_bins) * bin_ticks
    order = np.lexsort((centers, np.abs(centers), -counts))
    best = order[0]
    peak = int(counts[best])
    others = np.delete(counts, best)
    background = float(others.mean()) if others.size else 0.0
    significance = (peak - background) / np.sqrt(background + 1.0)
    if peak == 0 or significance < significance_threshold:
        return DelayEstimate(False, 0, peak, float(significance))
    return DelayEstimate(True, int(centers[best]), peak, float(significance))


def generate_pair_streams(
    pair_rate_hz: float,
    detect_prob_a: float,
    detect_prob_b: float,
    dark_rate_a_hz: float,
    dark_rate_b_hz: float,
    duration_s: float,
    jitter_ps: float = 0.0,
    offset_ps: float = 0.0,
    seed: int | np.random.Generator = 0,
    resolution_ps: int = 1,
) -> tuple[TimestampStream, TimestampStream]:
    """Synthetic correlated detector streams with known ground truth.

    Pair emissions form a Poisson process, thinned independently per arm;
    dark events are superposed; every detection gets Gaussian jitter; arm b
    is shifted by ``offset_ps``. Deterministic under a fixed seed.
    """
    for name, value in (
        ("pair_rate_hz", pair_rate_hz),
        ("dark_rate_a_hz", dark_rate_a_hz),
        ("dark_rate_b_hz", dark_rate_b_hz),
        ("jitter_ps", jitter_ps),
    ):
        if value < 0:
            raise TimetagError(f"{name} must be nonnegative")
    if not (0 <= detect_prob_a <= 1 and 0 <= detect_prob_b <= 1):
        raise TimetagError("detection probabilities must be in [0, 1]")
    if duration_s <= 0:
        raise TimetagError("duration must be positive")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ticks_per_s = 1.0e12 / resolution_ps
    span = duration_s * ticks_per_s
    offset_ticks = int(round(offset_ps / resolution_ps))
    jitter_ticks = jitter_ps / resolution_ps

    n_pairs = rng.poisson(pair_rate_hz * duration_s)
    emission = np.floor(rng.uniform(0.0, span, n_pairs)).astype(np.int64)
    keep_a = rng.random(n_pairs) < detect_prob_a
    keep_b = rng.random(n_pairs) < detect_prob_b

    def finish(base: np.ndarray, dark_rate: float, shift: int) -> np.ndarray:
        times = base + shift
        if jitter_ticks > 0:
            times = times + np.rint(rng.normal(0.0, jitter_ticks, times.size)).astype(
                np.int64
            )
        n_dark = rng.poisson(dark_rate * duration_s)
        dark = np.floor(rng.uniform(0.0, span, n_dark)).astype(np.int64)
        return np.sort(np.concatenate([times, dark]))

    ticks_a = finish(emission[keep_a], dark_rate_a_hz, 0)
    ticks_b = finish(emission[keep_b], dark_rate_b_hz, offset_ticks)
    return (
        TimestampStream(ticks_a, resolution_ps),
        TimestampStream(ticks_b, resolution_ps),
    )


def dump_stream(stream: TimestampStream, path: str | Path) -> None:
    """Binary dump: 16-byte header (magic, u64 resolution) then LE u64 ticks."""
    if stream.ticks.size and int(stream.ticks.min()) < 0:
        raise TimetagError("cannot dump negative ticks as u64")
    with open(path, "wb") as fh:
        fh.write(STREAM_MAGIC)
        fh.write(struct.pack("<Q", stream.resolution_ps))
        fh.write(stream.ticks.astype("<u8").tobytes())


def load_stream(path: str | Path) -> TimestampStream:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != STREAM_MAGIC:
        raise TimetagError(f"{path}: not a timestamp stream dump")
    (resolution,) = struct.unpack("<Q", raw[8:16])
    ticks = np.frombuffer(raw[16:], dtype="<u8").astype(np.int64)
    return TimestampStream(ticks, int(resolution))


def dump_stream_csv(stream: TimestampStream, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# resolution_ps: {stream.resolution_ps}\n")
        fh.write("tick\n")
        for t in stream.ticks:
            fh.write(f"{int(t)}\n")


def load_stream_csv(path: str | Path) -> TimestampStream:
    resolution = 1
    ticks = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line.startswith("#"):
            if "resolution_ps" in line:
                resolution = int(line.split(":")[1])
            continue
        if not line or line == "tick":
            continue
        ticks.append(int(line))
    return TimestampStream(np.asarray(ticks, dtype=np.int64), resolution)
