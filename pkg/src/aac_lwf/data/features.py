"""Log mel-band energy extraction and the AFB1 feature-file format.

AFB1 layout: the 4 magic bytes ``AFB1``, little-endian u32 frame count,
u32 band count, then frames*bands little-endian float32 values, row-major.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError, FormatError

SAMPLE_RATE = 44100
WINDOW = 1024
HOP = 512
N_MELS = 64
LOG_FLOOR = 1e-10

_MAGIC = b"AFB1"
_HEADER = struct.Struct("<4sII")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = WINDOW, sample_rate: int = SAMPLE_RATE,
                   f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    """Triangular filters on the mel scale, shape (n_mels, n_fft // 2 + 1)."""
    f_max = sample_rate / 2 if f_max is None else f_max
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None] - lower) / (centre - lower)
    falling = (upper - bins[None]) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def n_frames(n_samples: int, hop: int = HOP) -> int:
    return math.ceil(n_samples / hop)


def extract_logmel(waveform, sample_rate: int = SAMPLE_RATE, window: int = WINDOW, hop: int = HOP,
                   n_mels: int = N_MELS) -> np.ndarray:
    """(T_a, n_mels) natural-log mel energies of a Hamming-windowed magnitude STFT.

    Frame i starts at sample i*hop; the tail is zero padded so that
    T_a = ceil(n_samples / hop).
    """
    if sample_rate != SAMPLE_RATE:
        raise DataError(f"expected {SAMPLE_RATE} Hz audio, got {sample_rate} Hz")
    x = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise DataError("empty waveform")
    T = n_frames(x.size, hop)
    padded = np.zeros((T - 1) * hop + window)
    padded[: x.size] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, window)[::hop][:T]
    win = np.hamming(window + 1)[:-1]
    mag = np.abs(np.fft.rfft(frames * win, axis=-1))
    energies = mag @ mel_filterbank(n_mels, window, sample_rate).T
    return np.log(np.maximum(energies, LOG_FLOOR))


def save_features(features, path) -> None:
    arr = np.asarray(features, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DataError(f"features must be a non-empty (T_a, F) matrix, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_features(path) -> np.ndarray:
    """Read an AFB1 file as float64 (values are exactly the stored float32s)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("truncated header", offset=len(raw), path=path)
    magic, T, F = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0, path=path)
    if T < 1 or F < 1:
        raise FormatError(f"invalid shape {T}x{F}", offset=4, path=path)
    expected = _HEADER.size + 4 * T * F
    if len(raw) != expected:
        raise FormatError(f"payload size mismatch: {len(raw)} bytes, expected {expected}",
                          offset=min(len(raw), expected), path=path)
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(T, F)
    return data.astype(np.float64)
