"""STFT, mel filterbank, log-mel, MFCC, resampling and phase-vocoder stretch.

All spectrogram matrices are time-major: ``frames[t, k]``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.fft import dct
from scipy.signal import resample_poly

from .corpus import AudioSignal
from .errors import CorruptHeader, InvalidParams, IoError

N_FFT = 1024
HOP = 256
N_MELS = 64
WORK_RATE = 16000
POWER_FLOOR = 1e-10


@dataclass
class ComplexSpectrogram:
    frames: np.ndarray
    n_fft: int
    hop: int
    window: str = "hann"

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class MelSpectrogram:
    frames: np.ndarray
    sample_rate: int
    fmin: float = 0.0
    fmax: float | None = None
    hop: int = HOP
    n_fft: int = N_FFT
    floor: float = POWER_FLOOR

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] < 2:
            raise InvalidParams(f"mel frames must be (n_frames, n_mels>=2), got {self.frames.shape}")
        if self.fmax is None:
            self.fmax = self.sample_rate / 2

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]

    @property
    def fill_value(self) -> float:
        return math.log(self.floor)

    def replace(self, frames) -> "MelSpectrogram":
        return MelSpectrogram(frames, self.sample_rate, self.fmin, self.fmax, self.hop, self.n_fft, self.floor)


def _samples(x) -> np.ndarray:
    if isinstance(x, AudioSignal):
        return x.samples
    return np.asarray(x, dtype=np.float64).reshape(-1)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _check_fft_params(n_fft, hop):
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise InvalidParams(f"n_fft must be a power of two, got {n_fft}")
    if not 1 <= hop <= n_fft:
        raise InvalidParams(f"hop must be in [1, n_fft], got {hop}")


def stft(signal, n_fft: int = N_FFT, hop: int = HOP) -> ComplexSpectrogram:
    """Centered Hann-windowed STFT with reflect padding.

    Frame ``k`` covers samples ``[k*hop - n_fft/2, k*hop + n_fft/2)``.
    """
    _check_fft_params(n_fft, hop)
    x = _samples(signal)
    if x.size < 1:
        raise InvalidParams("signal must contain at least one sample")
    n_frames = x.size // hop + 1
    padded = np.pad(x, n_fft // 2, mode="reflect")
    idx = np.arange(n_frames)[:, None] * hop + np.arange(n_fft)[None, :]
    frames = padded[idx] * hann(n_fft)[None, :]
    return ComplexSpectrogram(np.fft.rfft(frames, axis=1), n_fft, hop)


def istft(spec: ComplexSpectrogram, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`."""
    n_fft, hop = spec.n_fft, spec.hop
    n_frames = spec.n_frames
    win = hann(n_fft)
    frames = np.fft.irfft(spec.frames, n=n_fft, axis=1) * win[None, :]
    total = n_fft + hop * (n_frames - 1)
    y = np.zeros(total)
    norm = np.zeros(total)
    wsq = win ** 2
    for k in range(n_frames):
        y[k * hop:k * hop + n_fft] += frames[k]
        norm[k * hop:k * hop + n_fft] += wsq
    nonzero = norm > 1e-8
    y[nonzero] /= norm[nonzero]
    y = y[n_fft // 2:]
    if length is None:
        length = hop * (n_frames - 1)
    if y.size < length:
        y = np.pad(y, (0, length - y.size))
    return y[:length]


def overlap_gain(n_fft: int, hop: int) -> float:
    """Sum of squared Hann windows at one sample, constant when hop divides n_fft/3 or finer."""
    return float(np.sum(hann(n_fft) ** 2)) / hop


def spectrogram_energy(spec: ComplexSpectrogram) -> float:
    """Time-domain energy implied by a one-sided STFT.

    Equals the signal energy for every sample covered by full window overlap.
    """
    weights = np.full(spec.frames.shape[1], 2.0)
    weights[0] = 1.0
    if spec.n_fft % 2 == 0:
        weights[-1] = 1.0
    power = np.abs(spec.frames) ** 2
    return float(np.sum(power * weights[None, :]) / spec.n_fft / overlap_gain(spec.n_fft, spec.hop))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = WORK_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters with break points equally spaced in mel."""
    if fmax is None:
        fmax = sample_rate / 2
    if n_mels < 2:
        raise InvalidParams(f"n_mels must be >= 2, got {n_mels}")
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise InvalidParams(f"need 0 <= fmin < fmax <= {sample_rate / 2}, got fmin={fmin}, fmax={fmax}")
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lower) / (center - lower)
    falling = (upper - bins[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_center_frequencies(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Channel positions in Hz, spread on the mel scale from fmin to fmax inclusive."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels))


def log_mel(signal: AudioSignal, n_fft: int = N_FFT, hop: int = HOP, n_mels: int = N_MELS,
            fmin: float = 0.0, fmax: float | None = None, floor: float = POWER_FLOOR) -> MelSpectrogram:
    spec = stft(signal, n_fft, hop)
    fb = mel_filterbank(n_mels, n_fft, signal.sample_rate, fmin, fmax)
    power = np.abs(spec.frames) ** 2
    mel = np.log(np.maximum(power @ fb.T, floor))
    return MelSpectrogram(mel, signal.sample_rate, fmin, fmax, hop, n_fft, floor)


def mfcc(mel: MelSpectrogram, n_coeffs: int = 13) -> np.ndarray:
    if not 1 <= n_coeffs <= mel.n_mels:
        raise InvalidParams(f"n_coeffs must be in [1, {mel.n_mels}], got {n_coeffs}")
    return dct(mel.frames, type=2, norm="ortho", axis=1)[:, :n_coeffs]


def _fix_length(y: np.ndarray, length: int) -> np.ndarray:
    if y.size >= length:
        return y[:length]
    return np.pad(y, (0, length - y.size))


def resample_array(x: np.ndarray, ratio: float) -> np.ndarray:
    """Polyphase windowed-sinc resampling by ``ratio``; output length round(len*ratio)."""
    if ratio <= 0:
        raise InvalidParams(f"resampling ratio must be positive, got {ratio}")
    frac = Fraction(ratio).limit_denominator(1000)
    length = int(round(x.size * ratio))
    if frac == 1:
        return _fix_length(x.copy(), length)
    y = resample_poly(x, frac.numerator, frac.denominator)
    return _fix_length(y, length)


def resample(signal: AudioSignal, target_rate: int) -> AudioSignal:
    if target_rate <= 0 or int(target_rate) != target_rate:
        raise InvalidParams(f"target_rate must be a positive integer, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == signal.sample_rate:
        return AudioSignal(signal.samples.copy(), target_rate)
    g = math.gcd(target_rate, signal.sample_rate)
    up, down = target_rate // g, signal.sample_rate // g
    y = resample_poly(signal.samples, up, down)
    return AudioSignal(_fix_length(y, int(round(len(signal) * target_rate / signal.sample_rate))), target_rate)


def phase_vocoder(spec: ComplexSpectrogram, rate: float) -> ComplexSpectrogram:
    """Re-time an STFT by ``rate`` (>1 faster) keeping per-bin frequencies."""
    if not rate > 0:
        raise InvalidParams(f"rate must be positive, got {rate}")
    D = spec.frames
    n_bins = D.shape[1]
    steps = np.arange(0, spec.n_frames, rate, dtype=np.float64)
    advance = 2.0 * np.pi * spec.hop * np.arange(n_bins) / spec.n_fft
    D = np.concatenate([D, np.zeros((2, n_bins), dtype=D.dtype)], axis=0)
    out = np.empty((steps.size, n_bins), dtype=np.complex128)
    phase = np.angle(D[0])
    for t, step in enumerate(steps):
        i = int(step)
        frac = step - i
        a, b = D[i], D[i + 1]
        mag = (1.0 - frac) * np.abs(a) + frac * np.abs(b)
        out[t] = mag * np.exp(1j * phase)
        dphase = np.angle(b) - np.angle(a) - advance
        dphase -= 2.0 * np.pi * np.round(dphase / (2.0 * np.pi))
        phase = phase + advance + dphase
    return ComplexSpectrogram(out, spec.n_fft, spec.hop)


def stretch_array(x: np.ndarray, rate: float, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    if not rate > 0:
        raise InvalidParams(f"rate must be positive, got {rate}")
    if rate == 1.0:
        return x.copy()
    spec = phase_vocoder(stft(x, n_fft, hop), rate)
    return istft(spec, length=int(round(x.size / rate)))


def phase_vocoder_stretch(signal: AudioSignal, rate: float, n_fft: int = N_FFT, hop: int = HOP) -> AudioSignal:
    """Change duration by 1/rate without changing pitch."""
    return AudioSignal(stretch_array(signal.samples, rate, n_fft, hop), signal.sample_rate)


# ---- binary log-mel files --------------------------------------------------

MEL_MAGIC = b"LMEL"
MEL_VERSION = 1
# magic, version, n_frames, n_mels, sample_rate, hop, n_fft, floor
_MEL_HEADER = struct.Struct("<4sIIIIIId")


def write_mel(mel: MelSpectrogram, path) -> None:
    header = _MEL_HEADER.pack(MEL_MAGIC, MEL_VERSION, mel.n_frames, mel.n_mels, mel.sample_rate,
                              mel.hop, mel.n_fft, mel.floor)
    body = np.ascontiguousarray(mel.frames, dtype="<f4").tobytes()
    try:
        Path(path).write_bytes(header + body)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_mel(path) -> MelSpectrogram:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(raw) < _MEL_HEADER.size:
        raise CorruptHeader(f"{path}: too short for a mel header")
    magic, version, n_frames, n_mels, sr, hop, n_fft, floor = _MEL_HEADER.unpack_from(raw)
    if magic != MEL_MAGIC or version != MEL_VERSION:
        raise CorruptHeader(f"{path}: bad magic/version {magic!r}/{version}")
    expected = _MEL_HEADER.size + 4 * n_frames * n_mels
    if len(raw) != expected:
        raise CorruptHeader(f"{path}: expected {expected} bytes, found {len(raw)}")
    frames = np.frombuffer(raw, dtype="<f4", offset=_MEL_HEADER.size).reshape(n_frames, n_mels)
    return MelSpectrogram(frames.astype(np.float64), sr, 0.0, sr / 2, hop, n_fft, floor)
