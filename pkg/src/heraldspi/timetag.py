"""Event-level photon time tags, g2 cross-correlation and coincidence windows.

Timestamps are integer picoseconds. The signal channel carries detections
from pair photons and from background noise; the idler channel carries the
partner photons only.
"""

from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from ._validation import check_fraction, check_positive, check_random_state
from .patterns import TargetProfile
from .photon_model import OpticalConfig

SIGNAL = 0
IDLER = 1

PS = 1e12  # picoseconds per second

#: per-detector Gaussian sigma (ps) giving a 300 ps FWHM signal-idler delay spread
DEFAULT_JITTER_PS = 300.0 / (2.0 * math.sqrt(2.0 * math.log(2.0))) / math.sqrt(2.0)
DEFAULT_BIN_WIDTH_PS = 100.0
DEFAULT_MAX_DELAY_PS = 50_000.0

TAG_MAGIC = b"SPIT"
TAG_VERSION = 1
_TAG_HEADER = struct.Struct("<4sIQ")
TAG_RECORD = np.dtype([("t", "<u8"), ("ch", "u1")])  # packed: 9 bytes

_PAIR_CHUNK = 1 << 20


class NoCorrelationError(ValueError):
    """The histogram has no peak to centre a coincidence window on."""


@dataclass(frozen=True, eq=False)
class TagStream:
    duration: float  # seconds
    timestamps: np.ndarray = field(repr=False)  # int64 ps, ascending
    channels: np.ndarray = field(repr=False)  # uint8, SIGNAL or IDLER

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.int64)
        ch = np.asarray(self.channels, dtype=np.uint8)
        if t.shape != ch.shape or t.ndim != 1:
            raise ValueError("timestamps and channels must be 1D arrays of equal length")
        if t.size:
            if np.any(np.diff(t) < 0):
                raise ValueError("timestamps must be sorted ascending")
            if t[0] < 0 or t[-1] > round(self.duration * PS):
                raise ValueError("timestamps outside [0, duration]")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "channels", ch)

    def __len__(self) -> int:
        return self.timestamps.size

    def channel(self, ch: int) -> np.ndarray:
        return self.timestamps[self.channels == ch]

    def count(self, ch: int) -> int:
        return int(np.count_nonzero(self.channels == ch))


@dataclass(frozen=True, eq=False)
class CorrelationHistogram:
    """Histogram of signal-minus-idler delays.

    ``delays`` are the bin centres in ps; bin ``j`` covers
    ``[delays[j] - bin_width/2, delays[j] + bin_width/2)``. ``peak_delay`` is
    ``None`` when the histogram is empty.
    """

    bin_width: float
    delays: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    peak_delay: float | None
    peak_counts: int

    @property
    def peak_defined(self) -> bool:
        return self.peak_delay is not None

    @property
    def edges(self) -> np.ndarray:
        return np.append(self.delays - self.bin_width / 2, self.delays[-1] + self.bin_width / 2)


def _poisson_times(rate: float, duration_ps: int, rng) -> np.ndarray:
    n = rng.poisson(rate * duration_ps / PS)
    return np.sort(rng.integers(0, duration_ps, size=n, endpoint=True))


def generate_stream(
    pair_rate: float,
    signal_loss_prob: float,
    idler_loss_prob: float,
    noise_rate: float,
    jitter_sigma: float = DEFAULT_JITTER_PS,
    path_delay: float = 0.0,
    duration: float = 1.0,
    rng=None,
) -> TagStream:
    """Simulate a two-channel tag stream.

    Pairs arrive as a Poisson process at ``pair_rate``. Each pair gives an
    idler tag and a signal tag ``path_delay`` ps later; each survives its
    loss independently and gets independent Gaussian timing jitter. Noise
    tags form a separate Poisson process on the signal channel. Tags pushed
    outside ``[0, duration]`` by delay or jitter are dropped.
    """
    check_positive(pair_rate, "pair_rate", strict=False)
    check_positive(noise_rate, "noise_rate", strict=False)
    check_positive(duration, "duration")
    check_positive(jitter_sigma, "jitter_sigma", strict=False)
    check_fraction(signal_loss_prob, "signal_loss_prob")
    check_fraction(idler_loss_prob, "idler_loss_prob")
    rng = check_random_state(rng)
    duration_ps = int(round(duration * PS))

    pairs = _poisson_times(pair_rate, duration_ps, rng)
    keep_i = rng.random(pairs.size) >= idler_loss_prob
    keep_s = rng.random(pairs.size) >= signal_loss_prob
    idler = pairs[keep_i] + np.rint(rng.normal(0.0, jitter_sigma, keep_i.sum())).astype(np.int64)
    signal = (
        pairs[keep_s]
        + int(round(path_delay))
        + np.rint(rng.normal(0.0, jitter_sigma, keep_s.sum())).astype(np.int64)
    )
    noise = _poisson_times(noise_rate, duration_ps, rng)

    t = np.concatenate([signal, noise, idler])
    ch = np.concatenate(
        [
            np.full(signal.size + noise.size, SIGNAL, np.uint8),
            np.full(idler.size, IDLER, np.uint8),
        ]
    )
    inside = (t >= 0) & (t <= duration_ps)
    t, ch = t[inside], ch[inside]
    order = np.argsort(t, kind="stable")
    return TagStream(duration, t[order], ch[order])


def _delay_pairs(signal: np.ndarray, idler: np.ndarray, reach: float):
    """Yield arrays of signal-idler delays with ``|delay| <= reach``, chunked."""
    lo = np.searchsorted(idler, signal - reach, side="left")
    hi = np.searchsorted(idler, signal + reach, side="right")
    n = hi - lo
    for start in range(0, signal.size, _PAIR_CHUNK):
        stop = min(start + _PAIR_CHUNK, signal.size)
        cnt = n[start:stop]
        total = int(cnt.sum())
        if total == 0:
            continue
        owner = np.repeat(np.arange(start, stop), cnt)
        offset = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        yield signal[owner] - idler[lo[owner] + offset]


def _locate_peak(delays, counts, bin_width, peak_window):
    if counts.sum() == 0:
        return None, 0
    score = counts.astype(float)
    if peak_window:
        width = max(1, int(round(peak_window / bin_width)))
        width += width % 2 == 0  # odd, so the sum stays centred on its bin
        score = np.convolve(score, np.ones(width), mode="same")
    best = np.flatnonzero(score == score.max())
    j = best[np.argmin(np.abs(delays[best]))]  # ties: smallest |delay|
    return float(delays[j]), int(counts[j])


def correlate(
    ts: TagStream,
    bin_width: float = DEFAULT_BIN_WIDTH_PS,
    max_delay: float = DEFAULT_MAX_DELAY_PS,
    peak_window: float | None = None,
) -> CorrelationHistogram:
    """Histogram signal-minus-idler delays over ``[-max_delay, +max_delay]``.

    Bins are centred on multiples of ``bin_width`` so that zero delay sits at
    a bin centre. If ``peak_window`` (ps) is given, the peak is located on the
    moving sum over that width rather than on single bins. This is more
    robust when the correlated excess is only a few counts per bin.
    """
    check_positive(bin_width, "bin_width")
    if max_delay < bin_width:
        raise ValueError("max_delay must be >= bin_width")
    half = int(math.ceil(max_delay / bin_width))
    delays = np.arange(-half, half + 1) * float(bin_width)
    reach = (half + 0.5) * bin_width
    counts = np.zeros(delays.size, dtype=np.int64)

    signal, idler = ts.channel(SIGNAL), ts.channel(IDLER)
    for d in _delay_pairs(signal, idler, reach):
        j = np.floor((d + reach) / bin_width).astype(np.int64)
        j = j[(j >= 0) & (j < delays.size)]
        counts += np.bincount(j, minlength=delays.size)

    peak_delay, peak_counts = _locate_peak(delays, counts, bin_width, peak_window)
    return CorrelationHistogram(float(bin_width), delays, counts, peak_delay, peak_counts)


def coincidences_in_window(h: CorrelationHistogram, T_c: float, center: float | None = None) -> float:
    """Sum histogram counts in a window of total width ``T_c`` (ps).

    The window is centred on the peak unless ``center`` is given. Bins cut
    by the window edge contribute in proportion to their overlap, so the
    result is exact in expectation for a flat background.
    """
    if T_c < h.bin_width:
        raise ValueError("T_c must be at least one bin wide")
    if center is None:
        if not h.peak_defined:
            raise NoCorrelationError("histogram is empty; no coincidence peak")
        center = h.peak_delay
    lo_edge = h.delays - h.bin_width / 2
    overlap = np.clip(
        np.minimum(lo_edge + h.bin_width, center + T_c / 2) - np.maximum(lo_edge, center - T_c / 2),
        0.0,
        h.bin_width,
    )
    return float(np.dot(h.counts, overlap / h.bin_width))


def captured_pair_fraction(T_c: float, jitter_sigma: float, offset: float = 0.0) -> float:
    """Probability that a true pair's delay falls inside the window.

    Both detectors have independent Gaussian jitter ``jitter_sigma``, so the
    delay spread is Gaussian with ``sqrt(2) * jitter_sigma``. ``offset`` is
    the window centre relative to the true delay.
    """
    s = math.sqrt(2.0) * jitter_sigma
    if s == 0:
        return 1.0 if abs(offset) <= T_c / 2 else 0.0
    a, b = (-T_c / 2 - offset) / s, (T_c / 2 - offset) / s
    return float(0.5 * (erf(b / math.sqrt(2)) - erf(a / math.sqrt(2))))


def check_window(T_c: float, resolution: float) -> bool:
    """Warn if ``T_c`` is not above twice the timing resolution (both in ps)."""
    ok = T_c > 2 * resolution
    if not ok:
        warnings.warn(
            f"coincidence window {T_c:g} ps is not above twice the timing resolution "
            f"{resolution:g} ps; true pairs will be lost",
            stacklevel=2,
        )
    return ok


def stream_for_pattern(
    cfg: OpticalConfig,
    t: TargetProfile,
    chi_tilde: float,
    rng=None,
    jitter_sigma: float = DEFAULT_JITTER_PS,
    path_delay: float = 0.0,
) -> TagStream:
    """Time tags for one pattern acquisition, with rates matched to the photon model.

    Pairs are emitted at ``n_s_bar / tau_s`` per second. The idler is detected
    with probability ``eta_i`` and the signal with probability
    ``eta_s eta_h eta_e eta_o chi_tilde``, so the true coincidence rate and the
    idler rate equal the photon model's means. Noise arrives at the detected
    noise rate.
    """
    p_signal = cfg.eta_s * cfg.eta_h * t.eta_e * cfg.eta_o * chi_tilde
    return generate_stream(
        pair_rate=cfg.n_s_bar / cfg.tau_s,
        signal_loss_prob=1.0 - p_signal,
        idler_loss_prob=1.0 - cfg.eta_i,
        noise_rate=cfg.rate_b,
        jitter_sigma=jitter_sigma,
        path_delay=path_delay,
        duration=cfg.tau,
        rng=rng,
    )


def heralded_event_count(
    cfg: OpticalConfig,
    t: TargetProfile,
    chi_tilde: float,
    rng=None,
    jitter_sigma: float = DEFAULT_JITTER_PS,
    path_delay: float = 0.0,
    bin_width: float = DEFAULT_BIN_WIDTH_PS,
    max_delay: float = DEFAULT_MAX_DELAY_PS,
    return_histogram: bool = False,
):
    """Coincidence count for one pattern from an explicit time-tag simulation.

    The window ``T_c`` is centred on the g2 peak, so the result does not
    depend on knowing ``path_delay``. With ``return_histogram`` the g2
    histogram is returned alongside the count.
    """
    T_c = cfg.T_c * PS
    check_window(T_c, 2 * math.sqrt(2 * math.log(2)) * math.sqrt(2) * jitter_sigma)
    ts = stream_for_pattern(cfg, t, chi_tilde, rng, jitter_sigma, path_delay)
    h = correlate(ts, bin_width, max(max_delay, abs(path_delay) + T_c), peak_window=T_c)
    n = coincidences_in_window(h, T_c) if h.peak_defined else 0.0
    return (n, h) if return_histogram else n


def classical_event_count(cfg: OpticalConfig, t: TargetProfile, chi_tilde: float, rng=None) -> int:
    """Signal-channel singles for one pattern, counting every photon detected during ``tau``."""
    rng = check_random_state(rng)
    duration_ps = int(round(cfg.tau * PS))
    rate = cfg.rate_s * t.eta_e * chi_tilde + cfg.rate_b
    return int(_poisson_times(rate, duration_ps, rng).size)


# -- files -----------------------------------------------------------------------


def write_tags(path, ts: TagStream) -> None:
    """Binary tag file: 16-byte header then 9-byte (u64 ps, u8 channel) records."""
    rec = np.empty(len(ts), dtype=TAG_RECORD)
    rec["t"] = ts.timestamps
    rec["ch"] = ts.channels
    with open(path, "wb") as fh:
        fh.write(_TAG_HEADER.pack(TAG_MAGIC, TAG_VERSION, int(round(ts.duration * PS))))
        fh.write(rec.tobytes())


def read_tags(path) -> TagStream:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _TAG_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, duration_ps = _TAG_HEADER.unpack_from(data)
    if magic != TAG_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != TAG_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = len(data) - _TAG_HEADER.size
    if body % TAG_RECORD.itemsize:
        raise ValueError(f"{path}: payload is not a whole number of records")
    rec = np.frombuffer(data, dtype=TAG_RECORD, offset=_TAG_HEADER.size)
    return TagStream(duration_ps / PS, rec["t"].astype(np.int64), rec["ch"].copy())


def write_histogram_csv(path, h: CorrelationHistogram) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delay_ps", "counts"])
        for d, c in zip(h.delays, h.counts):
            writer.writerow([f"{d:g}", int(c)])
