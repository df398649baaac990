"""Streaming correlation of time-tag streams.

Delays are d = t_b - t_a in integer picoseconds. A histogram with bin width w
and range r has 2r/w bins; a pair is counted iff -r <= d < r and lands in bin
floor(d / w) + r / w, i.e. bins are [kw, (k+1)w) and centred at (k + 1/2) w.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .source import PS_PER_S, TagStream


@dataclass
class DelayHistogram:
    bin_width: int  # ps
    range: int  # ps; bins cover [-range, range)
    counts: np.ndarray
    laser_period: int | None = None  # ps
    total_pairs_considered: int = 0
    duration: float = 0.0  # s, integration time of the underlying streams

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ValueError("bin_width must be > 0")
        if self.range <= 0 or self.range % self.bin_width:
            raise ValueError("range must be a positive integer multiple of bin_width")

    @property
    def n_bins(self) -> int:
        return 2 * self.range // self.bin_width

    @property
    def edges(self) -> np.ndarray:
        return -self.range + self.bin_width * np.arange(self.n_bins + 1, dtype=np.int64)

    @property
    def centers(self) -> np.ndarray:
        return self.edges[:-1] + self.bin_width / 2

    def to_csv(self) -> str:
        rows = "\n".join(f"{int(e)},{int(n)}" for e, n in zip(self.edges[:-1], self.counts))
        return "delay_ps,count\n" + rows + "\n"


@dataclass
class HistogramDecomposition:
    """Rates in counts/s. n_acc is the mean over side peaks; n_unco is per bin."""

    n_coinc: float
    n_acc: float
    n_unco: float
    uncertainties: dict
    coinc_peak_raw: float = 0.0  # zero-delay peak rate before baseline subtraction
    acc_peak_raw: float = 0.0  # mean side-peak rate before baseline subtraction
    side_peak_rates: list = field(default_factory=list)
    bins_in_coinc_peak: int = 0
    n_side_peaks: int = 0
    duration: float = 0.0
    notes: dict = field(default_factory=dict)


def _check_sorted(t: np.ndarray, name: str) -> None:
    if t.size and np.any(np.diff(t) < 0):
        raise ValueError(f"stream {name} is not sorted")


def _timestamps(x) -> np.ndarray:
    t = x.timestamps if isinstance(x, TagStream) else x
    return np.ascontiguousarray(t, dtype=np.int64)


@njit(cache=True, nogil=True)
def _histogram_kernel(a, b, width, rng, counts):
    j0 = 0
    nb = b.size
    total = 0
    for i in range(a.size):
        ta = a[i]
        lo = ta - rng
        while j0 < nb and b[j0] < lo:
            j0 += 1
        hi = ta + rng
        j = j0
        while j < nb and b[j] < hi:
            counts[(b[j] - lo) // width] += 1
            j += 1
        total += j - j0
    return total


def cross_histogram(a, b, bin_width: int, range_ps: int, laser_period: int | None = None,
                    duration: float | None = None) -> DelayHistogram:
    """Histogram of t_b - t_a over all pairs within [-range, range), in one sliding pass."""
    ta, tb = _timestamps(a), _timestamps(b)
    _check_sorted(ta, "a")
    _check_sorted(tb, "b")
    bin_width, range_ps = int(bin_width), int(range_ps)
    hist = DelayHistogram(bin_width, range_ps, np.zeros(2 * range_ps // bin_width, dtype=np.int64),
                          laser_period, 0, _duration(a, b, duration))
    hist.total_pairs_considered = int(_histogram_kernel(ta, tb, bin_width, range_ps, hist.counts))
    return hist


def _duration(a, b, duration):
    if duration is not None:
        return float(duration)
    ds = [x.duration for x in (a, b) if isinstance(x, TagStream)]
    return float(max(ds)) if ds else 0.0


MAX_BRUTE_FORCE_PAIRS = 10**8


def brute_force_histogram(a, b, bin_width: int, range_ps: int, laser_period: int | None = None,
                          duration: float | None = None) -> DelayHistogram:
    """Exhaustive all-pairs reference for ``cross_histogram`` (test oracle)."""
    ta, tb = _timestamps(a), _timestamps(b)
    if ta.size * tb.size > MAX_BRUTE_FORCE_PAIRS:
        raise ValueError("instance too large for brute force")
    n_bins = 2 * int(range_ps) // int(bin_width)
    counts = np.zeros(n_bins, dtype=np.int64)
    total = 0
    for start in range(0, ta.size, 1024):
        d = tb[None, :] - ta[start:start + 1024, None]
        d = d[(d >= -range_ps) & (d < range_ps)]
        k = np.floor_divide(d, bin_width) + n_bins // 2
        counts += np.bincount(k, minlength=n_bins)
        total += d.size
    return DelayHistogram(int(bin_width), int(range_ps), counts, laser_period, total,
                          _duration(a, b, duration))


def _peak_masks(hist: DelayHistogram, peak_half_width: int, n_side_peaks: int):
    T = hist.laser_period
    centers = hist.centers
    w = hist.bin_width
    k_max = n_side_peaks // 2
    peaks = {}
    for k in range(-k_max, k_max + 1):
        peaks[k] = np.abs(centers - k * T) <= peak_half_width
    # Baseline: bins not overlapping any peak window at any multiple of the period.
    nearest = np.rint(centers / T) * T
    baseline = np.abs(centers - nearest) >= peak_half_width + w / 2
    return peaks, baseline


def decompose(hist: DelayHistogram, peak_half_width: int = 2100,
              n_side_peaks: int = 20) -> HistogramDecomposition:
    """Split a delay histogram into coincidences, accidentals and an uncorrelated baseline.

    A bin belongs to the peak at kT if its centre is within ``peak_half_width`` of
    kT. The baseline is the mean count of bins that do not overlap any peak
    window. ``n_side_peaks`` (even) peaks nearest to zero, half on each side, are
    averaged for the accidentals. Negative net rates are clipped to zero.
    """
    T = hist.laser_period
    if T is None or T <= 0:
        raise ValueError("histogram has no laser period")
    if n_side_peaks < 4 or n_side_peaks % 2:
        raise ValueError("n_side_peaks must be even and >= 4")
    if peak_half_width <= 0 or 2 * peak_half_width > T:
        raise ValueError("peak windows overlap (peak_half_width > period / 2)")
    if (n_side_peaks // 2) * T + peak_half_width > hist.range:
        raise ValueError("side peaks do not fit inside the histogram range")
    if hist.duration <= 0:
        raise ValueError("histogram duration must be > 0")

    peaks, base_mask = _peak_masks(hist, peak_half_width, n_side_peaks)
    counts = hist.counts.astype(float)
    D = hist.duration
    n_base = int(base_mask.sum())
    beta = counts[base_mask].mean()
    var_beta = beta / n_base

    zero = peaks[0]
    s0, m0 = counts[zero].sum(), int(zero.sum())
    side_sums = np.array([counts[m].sum() for k, m in peaks.items() if k != 0])
    side_bins = np.array([int(m.sum()) for k, m in peaks.items() if k != 0])
    K = side_sums.size

    coinc = (s0 - beta * m0) / D
    side_net = (side_sums - beta * side_bins) / D
    acc = side_net.mean()
    sig_coinc = np.sqrt(s0 + m0**2 * var_beta) / D
    sig_acc = np.sqrt(side_sums.sum() + side_bins.sum() ** 2 * var_beta) / (K * D)
    sig_unco = np.sqrt(var_beta) / D

    return HistogramDecomposition(
        n_coinc=max(coinc, 0.0),
        n_acc=max(acc, 0.0),
        n_unco=beta / D,
        uncertainties={"n_coinc": float(sig_coinc), "n_acc": float(sig_acc), "n_unco": float(sig_unco)},
        coinc_peak_raw=s0 / D,
        acc_peak_raw=float(side_sums.mean() / D),
        side_peak_rates=[float(x) for x in side_net],
        bins_in_coinc_peak=m0,
        n_side_peaks=K,
        duration=D,
        notes={"accidentals": f"baseline-subtracted mean of {K} side peaks ({K // 2} per side)",
               "baseline_bins": n_base, "peak_half_width_ps": int(peak_half_width)},
    )


@njit(cache=True, nogil=True)
def _greedy_match(a, b, window):
    """Index into b matched to each tag of a (-1 if none); earliest unused b within window."""
    match = np.full(a.size, -1, dtype=np.int64)
    p = 0
    for i in range(a.size):
        while p < b.size and b[p] < a[i] - window:
            p += 1
        if p < b.size and b[p] <= a[i] + window:
            match[i] = p
            p += 1
    return match


def twofold(a, b, window: int) -> int:
    """Number of a-b coincidences within +-window, each tag used at most once."""
    ta, tb = _timestamps(a), _timestamps(b)
    _check_sorted(ta, "a")
    _check_sorted(tb, "b")
    return int(np.count_nonzero(_greedy_match(ta, tb, np.int64(window)) >= 0))


def threefold(s, i1, i2, window: int) -> tuple[int, int, int, int]:
    """(N_s, N_s,i1, N_s,i2, N_s,i1,i2) with greedy chronological matching within +-window."""
    if window <= 0:
        raise ValueError("window must be > 0")
    ts, t1, t2 = _timestamps(s), _timestamps(i1), _timestamps(i2)
    for t, name in ((ts, "s"), (t1, "i1"), (t2, "i2")):
        _check_sorted(t, name)
    m1 = _greedy_match(ts, t1, np.int64(window)) >= 0
    m2 = _greedy_match(ts, t2, np.int64(window)) >= 0
    return (int(ts.size), int(m1.sum()), int(m2.sum()), int(np.count_nonzero(m1 & m2)))


def brute_force_threefold(s, i1, i2, window: int) -> tuple[int, int, int, int]:
    """Reference for ``threefold``: explicit scan of every candidate for every herald."""
    ts, t1, t2 = (list(map(int, _timestamps(x))) for x in (s, i1, i2))
    used1 = [False] * len(t1)
    used2 = [False] * len(t2)
    n1 = n2 = n3 = 0
    for t in ts:
        hit1 = hit2 = False
        for j, u in enumerate(t1):
            if not used1[j] and abs(u - t) <= window:
                used1[j] = hit1 = True
                break
        for j, u in enumerate(t2):
            if not used2[j] and abs(u - t) <= window:
                used2[j] = hit2 = True
                break
        n1 += hit1
        n2 += hit2
        n3 += hit1 and hit2
    return len(ts), n1, n2, n3


__all__ = [
    "DelayHistogram", "HistogramDecomposition", "cross_histogram", "brute_force_histogram",
    "decompose", "threefold", "twofold", "brute_force_threefold", "PS_PER_S",
]
