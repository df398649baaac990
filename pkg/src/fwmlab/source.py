"""Monte-Carlo time tags from a pulsed photon-pair source with noise and detector imperfections.

Per pulse, each Schmidt mode k emits a Bose-Einstein distributed number of
pairs with mean lambda_k * mu, mu = eta * P^2. Raman photons (if configured) are
Poisson with means b_s P and b_i P, tied to the pulse but independent between
arms. Detection applies transmission x QE, Gaussian jitter, a homogeneous dark
count process and chronological dead-time pruning, in that order.

Empty pulses are skipped by drawing geometric gaps between non-empty pulses of
each independent emission process, so the cost scales with the number of
emitted photons rather than the number of pulses.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, NamedTuple, Optional

import numpy as np
from numba import njit

from .dispersion import PumpSpec

PS_PER_S = 10**12
BLOCK_PULSES = 1 << 24

SIGNAL, IDLER, IDLER1, IDLER2 = "s", "i", "i1", "i2"
CHANNEL_IDS = {SIGNAL: 0, IDLER: 1, IDLER1: 1, IDLER2: 2}


@dataclass(frozen=True)
class SourceModel:
    eta_gen: float  # pairs per pulse per mW^2
    pump: PumpSpec
    schmidt_coefficients: tuple = (1.0,)
    raman_signal_rate: float = 0.0  # photons per pulse per mW
    raman_idler_rate: float = 0.0
    thermal: bool = True  # False: Poisson pair statistics

    def __post_init__(self):
        if self.eta_gen < 0:
            raise ValueError("eta_gen must be >= 0")
        if self.raman_signal_rate < 0 or self.raman_idler_rate < 0:
            raise ValueError("Raman rates must be >= 0")
        lam = np.asarray(self.schmidt_coefficients, dtype=float)
        if lam.ndim != 1 or lam.size == 0 or np.any(lam < 0) or abs(lam.sum() - 1) > 1e-9:
            raise ValueError("schmidt_coefficients must be non-negative and sum to 1")
        object.__setattr__(self, "schmidt_coefficients", tuple(float(x) for x in lam))

    @property
    def purity(self) -> float:
        lam = np.asarray(self.schmidt_coefficients)
        return float(np.sum(lam**2))


@dataclass(frozen=True)
class DetectorSpec:
    quantum_efficiency: float
    path_transmission: float
    dark_count_rate: float  # Hz
    dead_time: float = 50e-9  # s
    jitter_fwhm: float = 350e-12  # s

    def __post_init__(self):
        for name in ("quantum_efficiency", "path_transmission"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        for name in ("dark_count_rate", "dead_time", "jitter_fwhm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def efficiency(self) -> float:
        return self.quantum_efficiency * self.path_transmission


@dataclass
class TagStream:
    channel_id: int
    timestamps: np.ndarray  # int64 picoseconds, non-decreasing
    duration: float  # s
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        t = self.timestamps
        if t.size:
            if np.any(np.diff(t) < 0):
                raise ValueError("timestamps must be non-decreasing")
            if t[0] < 0 or t[-1] > round(self.duration * PS_PER_S):
                raise ValueError("timestamps outside [0, duration]")

    def __len__(self):
        return self.timestamps.size

    @property
    def rate(self) -> float:
        return len(self) / self.duration if self.duration > 0 else 0.0


class PulseContent(NamedTuple):
    pairs: int
    signal: int  # photons in the signal arm (pairs + Raman)
    idler: int
    raman_signal: int
    raman_idler: int


def pair_mean(model: SourceModel, power: float) -> float:
    """Mean number of pairs per pulse, eta * P^2 (P in mW)."""
    if power < 0:
        raise ValueError("power must be >= 0")
    return model.eta_gen * power**2


def mode_means(model: SourceModel, power: float) -> np.ndarray:
    mu = pair_mean(model, power)
    if model.thermal:
        return mu * np.asarray(model.schmidt_coefficients)
    return np.array([mu])


def draw_pulses(model: SourceModel, power: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Photon content of n pulses drawn directly (no skipping); rows are PulseContent fields."""
    pairs = np.zeros(n, dtype=np.int64)
    for m in mode_means(model, power):
        if m <= 0:
            continue
        if model.thermal:
            pairs += rng.geometric(1 / (1 + m), size=n) - 1
        else:
            pairs += rng.poisson(m, size=n)
    rs = rng.poisson(model.raman_signal_rate * power, size=n)
    ri = rng.poisson(model.raman_idler_rate * power, size=n)
    return np.column_stack([pairs, pairs + rs, pairs + ri, rs, ri])


def draw_pulse(model: SourceModel, power: float, rng: np.random.Generator) -> PulseContent:
    return PulseContent(*(int(x) for x in draw_pulses(model, power, 1, rng)[0]))


# --- skip sampling -------------------------------------------------------------------

def nonempty_pulses(rng: np.random.Generator, n_pulses: int, p: float) -> np.ndarray:
    """Indices in [0, n_pulses) of pulses where an event of probability p occurs."""
    if p <= 0 or n_pulses <= 0:
        return np.empty(0, dtype=np.int64)
    expected = n_pulses * p
    chunks = []
    pos = -1
    while True:
        size = int(expected + 6 * np.sqrt(expected) + 16)
        steps = np.cumsum(rng.geometric(p, size=size)) + pos
        chunks.append(steps)
        pos = int(steps[-1])
        if pos >= n_pulses:
            break
    idx = np.concatenate(chunks)
    return idx[idx < n_pulses]


def zero_truncated_poisson(rng: np.random.Generator, mean: float, size: int) -> np.ndarray:
    """Poisson(mean) conditioned on >= 1: first arrival time, then the remainder."""
    u = rng.random(size)
    t = -np.log1p(u * np.expm1(-mean)) / mean
    return 1 + rng.poisson(mean * (1 - t))


def _process_events(rng, n_pulses, mean, thermal):
    """(pulse index, count) of the non-empty pulses of one emission process."""
    if mean <= 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    if thermal:
        q = mean / (1 + mean)
        idx = nonempty_pulses(rng, n_pulses, q)
        counts = rng.geometric(1 - q, size=idx.size)
    else:
        idx = nonempty_pulses(rng, n_pulses, -np.expm1(-mean))
        counts = zero_truncated_poisson(rng, mean, idx.size)
    return idx, counts.astype(np.int64)


@njit(cache=True, nogil=True)
def _dead_time_mask(t, dead):
    keep = np.zeros(t.size, dtype=np.bool_)
    last = np.int64(-(2**62))
    for k in range(t.size):
        if t[k] - last >= dead:
            keep[k] = True
            last = t[k]
    return keep


def apply_dead_time(timestamps: np.ndarray, dead_time_ps: int) -> np.ndarray:
    """Drop tags that arrive less than ``dead_time_ps`` after the last kept tag."""
    if dead_time_ps <= 0 or timestamps.size == 0:
        return timestamps
    return timestamps[_dead_time_mask(timestamps, np.int64(dead_time_ps))]


def detect(photon_pulses: np.ndarray, detector: DetectorSpec, period_ps: int,
           rng: np.random.Generator) -> np.ndarray:
    """Surviving photon arrival times (ps, unsorted) for photons tagged by pulse index."""
    keep = rng.random(photon_pulses.size) < detector.efficiency
    pulses = photon_pulses[keep]
    t = pulses * period_ps + period_ps // 2
    sigma = detector.jitter_fwhm * PS_PER_S / (2 * np.sqrt(2 * np.log(2)))
    if sigma > 0:
        t = t + np.rint(rng.normal(0.0, sigma, size=t.size)).astype(np.int64)
    return t


def dark_counts(detector: DetectorSpec, duration_ps: int, rng: np.random.Generator) -> np.ndarray:
    n = rng.poisson(detector.dark_count_rate * duration_ps / PS_PER_S)
    return rng.integers(0, duration_ps, size=n, dtype=np.int64)


def finalize_channel(parts, detector: DetectorSpec, duration_ps: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Merge photon tags with dark counts, sort, clip to the record and apply dead time."""
    t = np.concatenate(list(parts) + [dark_counts(detector, duration_ps, rng)])
    t.sort(kind="stable")
    t = t[np.searchsorted(t, 0, side="left"):np.searchsorted(t, duration_ps, side="right")]
    return apply_dead_time(t, int(round(detector.dead_time * PS_PER_S)))


# --- full runs ------------------------------------------------------------------------

def _block_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream, index))
    return np.random.Generator(np.random.Philox(ss))


def _simulate_block(model, detectors, power, start, stop, beamsplitter, period_ps, rng):
    n = stop - start
    sig, idl = [], []
    for m in mode_means(model, power):
        idx, counts = _process_events(rng, n, m, model.thermal)
        pulses = np.repeat(idx, counts)
        sig.append(pulses)
        idl.append(pulses)
    for rate, arm in ((model.raman_signal_rate, sig), (model.raman_idler_rate, idl)):
        idx, counts = _process_events(rng, n, rate * power, False)
        arm.append(np.repeat(idx, counts))
    sig = np.concatenate(sig) + start
    idl = np.concatenate(idl) + start

    out = {SIGNAL: detect(sig, detectors[SIGNAL], period_ps, rng)}
    if beamsplitter:
        route = rng.random(idl.size) < 0.5
        out[IDLER1] = detect(idl[route], detectors[IDLER1], period_ps, rng)
        out[IDLER2] = detect(idl[~route], detectors[IDLER2], period_ps, rng)
    else:
        out[IDLER] = detect(idl, detectors[IDLER], period_ps, rng)
    return out


def run_fingerprint(model: SourceModel, detectors: Mapping[str, DetectorSpec], power: float,
                    n_pulses: int, beamsplitter: bool, seed: int) -> str:
    payload = {
        "model": asdict(model),
        "detectors": {k: asdict(v) for k, v in sorted(detectors.items())},
        "power_mW": power,
        "n_pulses": n_pulses,
        "beamsplitter": beamsplitter,
        "seed": seed,
    }
    blob = json.dumps(payload, sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def simulate_run(model: SourceModel, detectors: Mapping[str, DetectorSpec], power: float,
                 n_pulses: int, idler_beamsplitter: bool = False, seed: int = 0,
                 threads: int = 1, block_pulses: int = BLOCK_PULSES,
                 config_hash: Optional[str] = None) -> list[TagStream]:
    """Simulate ``n_pulses`` pump pulses at average power ``power`` (mW).

    Returns [s, i] or, with the idler beamsplitter, [s, i1, i2]. Each block of
    ``block_pulses`` pulses draws from its own counter-based RNG substream, so the
    output depends only on (inputs, seed), never on ``threads``.
    """
    if n_pulses < 0:
        raise ValueError("n_pulses must be >= 0")
    names = [SIGNAL, IDLER1, IDLER2] if idler_beamsplitter else [SIGNAL, IDLER]
    missing = [k for k in names if k not in detectors]
    if missing:
        raise KeyError(f"missing detector specs for channels {missing}")
    period_ps = int(round(model.pump.period * PS_PER_S))
    duration_ps = n_pulses * period_ps
    duration = duration_ps / PS_PER_S

    starts = list(range(0, n_pulses, block_pulses))

    def work(b):
        start = starts[b]
        stop = min(start + block_pulses, n_pulses)
        return _simulate_block(model, detectors, power, start, stop, idler_beamsplitter,
                               period_ps, _block_rng(seed, 0, b))

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(work, range(len(starts))))
    else:
        blocks = [work(b) for b in range(len(starts))]

    fingerprint = config_hash or run_fingerprint(model, detectors, power, n_pulses,
                                                 idler_beamsplitter, seed)
    streams = []
    for name in names:
        cid = CHANNEL_IDS[name]
        parts = [blk[name] for blk in blocks]
        t = finalize_channel(parts, detectors[name], duration_ps, _block_rng(seed, 1, cid))
        meta = {"channel": name, "seed": seed, "config_hash": fingerprint, "power_mW": power,
                "n_pulses": n_pulses, "repetition_rate_Hz": model.pump.repetition_rate}
        streams.append(TagStream(cid, t, duration, meta))
    return streams
