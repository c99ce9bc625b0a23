"""Signal conditioning: resampling, segmentation, and log-mel features.

The feature path mirrors the usual audio-tagging front end: a centered
STFT with a Hann window, a power spectrum, a triangular mel filterbank
with peak-normalized filters, and decibel compression with a fixed
floor. Resampling uses a windowed-sinc polyphase filter with a Kaiser
window so downsampling stays alias-free.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import SonarprepError
from .wavio import Waveform

LOG_FLOOR = 1e-10            # power floor before dB conversion (-100 dB)
KAISER_BETA = 8.555          # shape of the window on the resampling sinc
FILTER_ZERO_CROSSINGS = 64   # sinc half-width, in zero crossings


class InvalidRateError(SonarprepError):
    """A sampling rate is zero or negative."""


class NonPositiveResultError(SonarprepError):
    """Config scaling produced a window or hop below one sample."""


class ConfigMismatchError(SonarprepError):
    """A feature config cannot be applied to the given segment."""


class DegenerateBandError(SonarprepError):
    """The mel band is too narrow to carve out distinct filters."""


class DimensionMismatchError(SonarprepError):
    """Spectrogram and filterbank shapes do not line up."""


class ArchiveFormatError(SonarprepError):
    """A feature archive file is malformed."""


@dataclass(frozen=True)
class FeatureConfig:
    """STFT/mel parameters tied to the sampling rate they were designed for."""

    model_rate: int
    win_length: int = 1024
    hop_length: int = 320
    n_mels: int = 64
    f_min: float = 50.0
    f_max: float = 14000.0

    def __post_init__(self):
        if self.model_rate <= 0:
            raise InvalidRateError("model_rate must be positive")
        if not (self.win_length >= self.hop_length > 0):
            raise ValueError("need win_length >= hop_length > 0")
        if self.n_mels < 1:
            raise ValueError("n_mels must be at least 1")
        if not (0 <= self.f_min < self.f_max <= self.model_rate / 2):
            raise ValueError(
                f"need 0 <= f_min < f_max <= model_rate/2, got "
                f"[{self.f_min}, {self.f_max}] at rate {self.model_rate}"
            )


#: Production default: 32 kHz front end, 1024/320 STFT, 64 mels, 50 Hz-14 kHz.
DEFAULT_FEATURE_CONFIG = FeatureConfig(model_rate=32000)


@dataclass(eq=False)
class Segment:
    """A fixed-length slice of a recording."""

    samples: np.ndarray
    rate: int
    recording_id: str
    index: int


@dataclass(eq=False)
class LogMelSpectrogram:
    """Log-mel feature matrix, frames along the first axis."""

    values: np.ndarray
    config: FeatureConfig | None = None
    rate: int | None = None

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _phase_filter(phase: int, up: int, scale: float, half: int, half_t: float) -> np.ndarray:
    offsets = np.arange(-half, half + 1)
    t = phase / up - offsets
    u = t / half_t
    window = np.zeros_like(u)
    inside = np.abs(u) <= 1.0
    window[inside] = np.i0(KAISER_BETA * np.sqrt(1.0 - u[inside] ** 2)) / np.i0(KAISER_BETA)
    h = scale * np.sinc(scale * t) * window
    return h / h.sum()  # unit DC gain per phase


def resample_signal(x: np.ndarray, source_rate: int, target_rate: int) -> np.ndarray:
    """Rate-convert a 1-d signal; output length is round(n * target/source)."""
    x = np.asarray(x, dtype=np.float64)
    ratio = Fraction(int(target_rate), int(source_rate))
    up, down = ratio.numerator, ratio.denominator
    n_out = (2 * x.size * up + down) // (2 * down)
    scale = min(1.0, up / down)  # cutoff relative to the input Nyquist
    half_t = FILTER_ZERO_CROSSINGS / scale
    half = int(np.ceil(half_t))
    taps = 2 * half + 1
    filters = np.stack([_phase_filter(p, up, scale, half, half_t) for p in range(up)])
    xp = np.concatenate([np.zeros(half), x, np.zeros(half + 2)])
    out_idx = np.arange(n_out)
    anchor = (out_idx * down) // up
    phase = (out_idx * down) % up
    out = np.empty(n_out)
    offsets = np.arange(taps)
    chunk = 4096  # bound the gathered window matrix
    for start in range(0, n_out, chunk):
        sl = slice(start, min(start + chunk, n_out))
        windows = xp[anchor[sl, None] + offsets[None, :]]
        out[sl] = np.einsum("ct,ct->c", windows, filters[phase[sl]])
    return out


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Resample a waveform, returning the input untouched when rates match."""
    if int(target_rate) <= 0:
        raise InvalidRateError(f"target rate {target_rate} must be positive")
    target_rate = int(target_rate)
    if target_rate == w.rate:
        return w
    y = resample_signal(w.samples, w.rate, target_rate)
    return Waveform(y, target_rate, w.source_id)


# ---------------------------------------------------------------------------
# segmentation and config scaling
# ---------------------------------------------------------------------------

def segment(w: Waveform, seconds: float) -> list[Segment]:
    """Chop a waveform into consecutive fixed-length segments.

    The trailing remainder shorter than one segment is dropped.
    seconds * rate must land on a whole number of samples.
    """
    exact = seconds * w.rate
    length = int(round(exact))
    if length <= 0 or abs(exact - length) > 1e-9 * max(1.0, exact):
        raise ValueError(f"seconds * rate must be a positive integer, got {exact}")
    count = w.samples.size // length
    return [
        Segment(w.samples[i * length:(i + 1) * length], w.rate, w.source_id, i)
        for i in range(count)
    ]


def scale_config(base: FeatureConfig, model_rate: int) -> FeatureConfig:
    """Rescale window, hop, and upper cutoff to a new model sampling rate."""
    if int(model_rate) <= 0:
        raise InvalidRateError(f"model rate {model_rate} must be positive")
    rho = Fraction(int(model_rate), base.model_rate)
    win = int(round(base.win_length * rho))
    hop = int(round(base.hop_length * rho))
    if hop < 1 or win < 1:
        raise NonPositiveResultError(
            f"scaling {base.win_length}/{base.hop_length} by {rho} collapses the frame grid"
        )
    return replace(base, model_rate=int(model_rate), win_length=win, hop_length=hop,
                   f_max=float(base.f_max * rho))


def frame_count(n_samples: int, hop_length: int) -> int:
    """Number of STFT frames for a centered transform: 1 + floor(n/hop)."""
    if hop_length <= 0:
        raise ValueError("hop_length must be positive")
    if n_samples < 0:
        raise ValueError("n_samples must be non-negative")
    return 1 + n_samples // hop_length


# ---------------------------------------------------------------------------
# STFT and mel filterbank
# ---------------------------------------------------------------------------

def stft_power(seg: Segment, cfg: FeatureConfig) -> np.ndarray:
    """Power spectrogram of a segment, [n_frames x (win/2 + 1)].

    The signal is reflect-padded by win/2 on each side so frames are
    centered on multiples of the hop; window is a symmetric Hann.
    """
    x = np.asarray(seg.samples, dtype=np.float64)
    win, hop = cfg.win_length, cfg.hop_length
    if win % 2:
        raise ValueError("win_length must be even")
    pad = win // 2
    if pad > x.size - 1:
        raise ConfigMismatchError(
            f"window {win} too long to reflect-pad a {x.size}-sample segment"
        )
    xp = np.pad(x, pad, mode="reflect")
    n_frames = frame_count(x.size, hop)
    frames = sliding_window_view(xp, win)[::hop][:n_frames]
    spectrum = np.fft.rfft(frames * np.hanning(win), axis=1)
    return spectrum.real ** 2 + spectrum.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _mel_edges(cfg: FeatureConfig) -> np.ndarray:
    mel_points = np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2)
    return mel_to_hz(mel_points)


def mel_center_frequencies(cfg: FeatureConfig) -> np.ndarray:
    """Peak frequency of each triangular filter, in Hz."""
    return _mel_edges(cfg)[1:-1]


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular mel filterbank, [(win/2 + 1) x n_mels], each filter peaking at 1."""
    edges = _mel_edges(cfg)
    if np.any(np.diff(edges) <= 0):
        raise DegenerateBandError("mel band too narrow: filter edges collapse")
    freqs = (np.arange(cfg.win_length // 2 + 1) * cfg.model_rate / cfg.win_length)[:, None]
    lower, center, upper = edges[:-2], edges[1:-1], edges[2:]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    fb = np.clip(np.minimum(rising, falling), 0.0, None)
    peaks = fb.max(axis=0)
    if np.any(peaks <= 0):
        raise DegenerateBandError("a mel filter has no support on the FFT bin grid")
    return fb / peaks


def log_mel(power: np.ndarray, fb: np.ndarray,
            config: FeatureConfig | None = None,
            rate: int | None = None) -> LogMelSpectrogram:
    """Apply a filterbank to a power spectrogram and compress to dB."""
    power = np.asarray(power)
    if power.ndim != 2 or fb.ndim != 2 or power.shape[1] != fb.shape[0]:
        raise DimensionMismatchError(
            f"power {power.shape} incompatible with filterbank {fb.shape}"
        )
    values = 10.0 * np.log10(np.maximum(power @ fb, LOG_FLOOR))
    return LogMelSpectrogram(values, config=config, rate=rate)


def effective_config(cfg: FeatureConfig, data_rate: int) -> FeatureConfig:
    """Config actually applied to data at ``data_rate``.

    Window and hop stay in samples as designed for the model; the mel
    band is re-read against the data's bin frequencies with f_max
    clamped to the data Nyquist.
    """
    if int(data_rate) <= 0:
        raise InvalidRateError(f"data rate {data_rate} must be positive")
    f_max = min(cfg.f_max, data_rate / 2)
    try:
        return replace(cfg, model_rate=int(data_rate), f_max=f_max)
    except ValueError as exc:
        raise DegenerateBandError(
            f"data rate {data_rate} leaves no usable band above f_min={cfg.f_min}"
        ) from exc


def features_for_segment(seg: Segment, cfg: FeatureConfig,
                         fb: np.ndarray | None = None) -> LogMelSpectrogram:
    """Full segment -> log-mel path using the model's window and hop.

    ``fb`` may carry a precomputed filterbank for the segment's rate
    (build it once per run with ``mel_filterbank(effective_config(...))``).
    """
    if fb is None:
        fb = mel_filterbank(effective_config(cfg, seg.rate))
    power = stft_power(seg, cfg)
    return log_mel(power, fb, config=cfg, rate=seg.rate)


# ---------------------------------------------------------------------------
# feature archives
# ---------------------------------------------------------------------------

ARCHIVE_MAGIC = b"SPRF1"


def write_feature_archive(path, items) -> None:
    """Write (matrix, label) pairs to the little-endian binary archive format."""
    items = list(items)
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        f.write(struct.pack("<I", len(items)))
        for values, label in items:
            values = np.asarray(values)
            if values.ndim != 2:
                raise ArchiveFormatError(f"archive items must be 2-d, got {values.shape}")
            n_frames, n_mels = values.shape
            f.write(struct.pack("<III", n_frames, n_mels, int(label)))
            f.write(values.astype("<f4").tobytes())


def read_feature_archive(path) -> list[tuple[np.ndarray, int]]:
    """Read back (float32 matrix, label) pairs written by :func:`write_feature_archive`."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:5] != ARCHIVE_MAGIC:
        raise ArchiveFormatError("bad magic: not a feature archive")
    pos = 5
    try:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        items = []
        for _ in range(count):
            n_frames, n_mels, label = struct.unpack_from("<III", data, pos)
            pos += 12
            n_bytes = n_frames * n_mels * 4
            if pos + n_bytes > len(data):
                raise ArchiveFormatError("archive truncated inside an item")
            values = np.frombuffer(data, dtype="<f4", count=n_frames * n_mels,
                                   offset=pos).reshape(n_frames, n_mels)
            pos += n_bytes
            items.append((values.copy(), int(label)))
    except struct.error as exc:
        raise ArchiveFormatError("archive truncated in a header") from exc
    if pos != len(data):
        raise ArchiveFormatError(f"{len(data) - pos} trailing bytes after last item")
    return items
