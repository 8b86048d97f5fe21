"""STFT power spectrogram, HTK mel filterbank, log compression, LMEL cache."""

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .ingest import PIPELINE_RATE

N_FFT = 1024
HOP = 500
N_MELS = 64
F_MIN = 50.0
F_MAX = 14000.0
LOG_EPS = 1e-10


class FeatureCacheError(ValueError):
    pass


@dataclass
class Spectrogram:
    values: np.ndarray  # (frames, bins) power
    frame_hop_seconds: float
    bin_hz: float
    duration: float = 0.0  # source audio length in seconds


@dataclass
class MelFilterbank:
    weights: np.ndarray  # (n_mels, n_fft // 2 + 1)
    band_edges: np.ndarray  # (n_mels + 2,) Hz


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (frames, n_mels)
    frame_hop_seconds: float
    duration: float = 0.0

    @property
    def n_frames(self):
        return self.values.shape[0]


@dataclass
class LogMelSpectrogram:
    values: np.ndarray
    frame_hop_seconds: float
    duration: float = 0.0


def hann_periodic(n):
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def n_frames(n_samples, n_fft=N_FFT, hop=HOP):
    return 1 + (n_samples - n_fft) // hop


def stft(clip, n_fft=N_FFT, hop=HOP, expected_rate=PIPELINE_RATE):
    """Power spectrogram; frame t covers samples [hop*t, hop*t + n_fft), no padding."""
    if expected_rate is not None and clip.sample_rate != expected_rate:
        raise ValueError(f"expected {expected_rate} Hz audio, got {clip.sample_rate} Hz")
    x = np.asarray(clip.samples, dtype=np.float64)
    if len(x) < n_fft:
        raise ValueError(f"clip has {len(x)} samples, shorter than one {n_fft}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop]
    spec = np.fft.rfft(frames * hann_periodic(n_fft), axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    rate = clip.sample_rate
    return Spectrogram(power, hop / rate, rate / n_fft, len(x) / rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(n_mels=N_MELS, f_min=F_MIN, f_max=F_MAX, n_fft=N_FFT, rate=PIPELINE_RATE):
    """Triangular filters between HTK-mel-spaced edges, peak value 1."""
    if n_mels < 1 or n_fft < 2 or rate <= 0:
        raise ValueError("invalid filterbank size parameters")
    if not (0 <= f_min < f_max <= rate / 2):
        raise ValueError(f"need 0 <= f_min < f_max <= {rate / 2}")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterbank(weights, edges)


def apply_mel(spec, fb):
    if spec.values.shape[1] != fb.weights.shape[1]:
        raise ValueError(f"spectrogram has {spec.values.shape[1]} bins, "
                         f"filterbank expects {fb.weights.shape[1]}")
    return MelSpectrogram(spec.values @ fb.weights.T, spec.frame_hop_seconds, spec.duration)


def log_compress(mel, eps=LOG_EPS):
    return LogMelSpectrogram(np.log(mel.values + eps), mel.frame_hop_seconds, mel.duration)


_DEFAULT_FB = None


def default_filterbank():
    global _DEFAULT_FB
    if _DEFAULT_FB is None:
        _DEFAULT_FB = build_mel_filterbank()
    return _DEFAULT_FB


def mel_spectrogram(clip):
    """Clip (already at the pipeline rate) -> MelSpectrogram with the default settings."""
    return apply_mel(stft(clip), default_filterbank())


# ------------------------------------------------------------------ cache

CACHE_MAGIC = b"LMEL"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sBII")


def encode_matrix(matrix):
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ValueError("cache holds 2-D matrices only")
    if not np.all(np.isfinite(m)):
        raise ValueError("cache values must be finite")
    return _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, *m.shape) + m.astype("<f4").tobytes()


def decode_matrix(data):
    if len(data) < _HEADER.size:
        raise FeatureCacheError("file shorter than LMEL header")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise FeatureCacheError(f"bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise FeatureCacheError(f"unsupported LMEL version {version}")
    if len(data) != _HEADER.size + 4 * rows * cols:
        raise FeatureCacheError(f"size mismatch for {rows}x{cols} matrix")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float32)


def atomic_write_bytes(path, payload):
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cache_write(matrix, path):
    atomic_write_bytes(path, encode_matrix(matrix))


def cache_read(path):
    with open(path, "rb") as fh:
        return decode_matrix(fh.read())
