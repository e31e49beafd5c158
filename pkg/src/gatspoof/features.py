"""Log linear-filterbank features and frequency-mask augmentation."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .audio_io import PIPELINE_RATE

LOG_FLOOR = 1e-30


class FeatureSizeError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    n_bands: int = 60
    win_ms: float = 30.0
    hop_ms: float = 10.0
    n_fft: int = 512
    window: str = "hann"
    log_floor: float = LOG_FLOOR


@dataclass
class FeatureMap:
    values: np.ndarray  # [n_bands, n_frames]

    @property
    def n_bands(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class FreqMask:
    start_band: int
    width: int

    def validate(self, n_bands):
        if self.width < 0 or self.start_band < 0 or self.start_band + self.width > n_bands:
            raise ValueError(f"mask {self} does not fit {n_bands} bands")


def window_fn(name, length):
    if name == "hann":
        # periodic Hann
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(length) / length)
    if name == "hamming":
        return 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(length) / length)
    if name in ("rect", "none"):
        return np.ones(length)
    raise ValueError(f"unknown window {name!r}")


def frame_params(sample_rate, win_ms, hop_ms):
    return int(round(sample_rate * win_ms / 1000)), int(round(sample_rate * hop_ms / 1000))


def n_frames_for(n_samples, sample_rate=PIPELINE_RATE, win_ms=30.0, hop_ms=10.0):
    win, hop = frame_params(sample_rate, win_ms, hop_ms)
    return (n_samples - win) // hop + 1


def stft_power(samples, sample_rate=PIPELINE_RATE, win_ms=30.0, hop_ms=10.0, n_fft=512, window="hann"):
    """|STFT|^2 as [n_fft/2 + 1, n_frames]; frames start at sample 0, no padding."""
    x = np.asarray(samples, dtype=np.float64)
    win, hop = frame_params(sample_rate, win_ms, hop_ms)
    if win > n_fft:
        raise FeatureSizeError(f"window of {win} samples exceeds n_fft={n_fft}")
    if x.size < win:
        raise FeatureSizeError(f"waveform of {x.size} samples is shorter than one {win}-sample window")
    frames = sliding_window_view(x, win)[::hop] * window_fn(window, win)
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def linear_filterbank(n_bands=60, n_bins=257, sample_rate=PIPELINE_RATE, f_max=None):
    """Triangular filters, centres linearly spaced, each spanning its neighbours' centres."""
    if n_bands < 1:
        raise ValueError("n_bands must be >= 1")
    f_max = sample_rate / 2 if f_max is None else f_max
    n_fft = 2 * (n_bins - 1)
    edges = np.linspace(0.0, f_max, n_bands + 2)
    freqs = np.arange(n_bins) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def filter_centres(n_bands=60, sample_rate=PIPELINE_RATE, f_max=None):
    f_max = sample_rate / 2 if f_max is None else f_max
    return np.linspace(0.0, f_max, n_bands + 2)[1:-1]


def lfb(w, cfg=FeatureConfig()):
    """Log filterbank energies [n_bands, n_frames] for a 16 kHz waveform."""
    if w.sample_rate != PIPELINE_RATE:
        raise ValueError(f"features require {PIPELINE_RATE} Hz audio, got {w.sample_rate}")
    power = stft_power(w.samples, w.sample_rate, cfg.win_ms, cfg.hop_ms, cfg.n_fft, cfg.window)
    bank = linear_filterbank(cfg.n_bands, power.shape[0], w.sample_rate)
    return FeatureMap(np.log(np.maximum(bank @ power, cfg.log_floor)))


def sample_freq_mask(rng, n_bands=60, max_width=12):
    if not 0 <= max_width <= n_bands:
        raise ValueError("max_width must lie in [0, n_bands]")
    width = int(rng.integers(0, max_width + 1))
    start = int(rng.integers(0, n_bands - width + 1))
    return FreqMask(start, width)


def mask_fill(values, mode="mean"):
    if mode == "mean":
        return float(np.mean(values))
    if mode == "zero":
        return 0.0
    raise ValueError(f"unknown mask fill {mode!r}")


def apply_freq_mask(f, m, fill):
    m.validate(f.n_bands)
    out = f.values.copy()
    out[m.start_band:m.start_band + m.width, :] = fill
    return FeatureMap(out)


def mask_batch(x, m, fill_mode="mean"):
    """Apply one mask to every item of a [B, 1, F, T] tensor, each filled with its own value."""
    m.validate(x.shape[-2])
    fills = np.array([mask_fill(item, fill_mode) for item in x.data], dtype=x.dtype)
    return ad.mask_rows(x, m.start_band, m.width, fills.reshape(-1, 1, 1, 1))


# ---------------------------------------------------------------------------
# feature cache: a concatenation of records
#   magic b"LFB1" | n_bands u32 | n_frames u32 | id_len u16 | utt_id utf-8 | f32 LE row-major

CACHE_MAGIC = b"LFB1"


def dump_record(utt_id, values):
    raw = utt_id.encode("utf-8")
    values = np.asarray(values)
    head = CACHE_MAGIC + struct.pack("<IIH", values.shape[0], values.shape[1], len(raw)) + raw
    return head + np.ascontiguousarray(values, dtype="<f4").tobytes()


def write_cache(path, items):
    with open(path, "wb") as fh:
        for utt_id, values in items:
            fh.write(dump_record(utt_id, values))


def read_cache(path):
    blob = Path(path).read_bytes()
    pos = 0
    out = []
    while pos < len(blob):
        if blob[pos:pos + 4] != CACHE_MAGIC:
            raise ValueError(f"{path}: bad record magic at byte {pos}")
        n_bands, n_frames, n = struct.unpack_from("<IIH", blob, pos + 4)
        pos += 14
        utt_id = blob[pos:pos + n].decode("utf-8")
        pos += n
        count = n_bands * n_frames
        if pos + 4 * count > len(blob):
            raise ValueError(f"{path}: truncated record {utt_id!r}")
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(n_bands, n_frames)
        pos += 4 * count
        out.append((utt_id, values.astype(np.float32)))
    return out
