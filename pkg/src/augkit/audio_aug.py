"""Waveform and log-mel augmentations.

Every function is a pure function of (input, params, seed). Signal-domain
transforms return a new :class:`AudioSignal`; spectrogram-domain ones return
a new :class:`MelSpectrogram`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .corpus import AudioSignal
from .dsp import MelSpectrogram
from .errors import DegenerateSignal, EmptySet, InvalidParams, reject_unknown_params
from .seeding import derive_seed, make_rng


def _check_range(name, rng_range, positive=False):
    lo, hi = rng_range
    if lo > hi:
        raise InvalidParams(f"{name}: lower bound {lo} exceeds upper bound {hi}")
    if positive and lo <= 0:
        raise InvalidParams(f"{name}: bounds must be positive, got ({lo}, {hi})")
    return float(lo), float(hi)


def add_noise(signal: AudioSignal, sigma_scale: float = 0.002, seed: int = 0) -> AudioSignal:
    if sigma_scale < 0:
        raise InvalidParams(f"sigma_scale must be >= 0, got {sigma_scale}")
    if sigma_scale == 0:
        return AudioSignal(signal.samples.copy(), signal.sample_rate)
    eps = make_rng(seed).standard_normal(len(signal)) * sigma_scale
    return AudioSignal(signal.samples + eps, signal.sample_rate)


def time_stretch(signal: AudioSignal, rate_range=(0.8, 1.2), seed: int = 0) -> AudioSignal:
    lo, hi = _check_range("rate_range", rate_range, positive=True)
    rate = make_rng(seed).uniform(lo, hi)
    return dsp.phase_vocoder_stretch(signal, rate)


def pitch_shift(signal: AudioSignal, semitone_range=(-10, 10), seed: int = 0) -> AudioSignal:
    """Shift pitch by n ~ U(semitone_range) semitones keeping the duration.

    The signal is lengthened by 2**(n/12) with the phase vocoder and then
    resampled back to the original length.
    """
    lo, hi = _check_range("semitone_range", semitone_range)
    n = make_rng(seed).uniform(lo, hi)
    return shift_semitones(signal, n)


def shift_semitones(signal: AudioSignal, n: float) -> AudioSignal:
    if n == 0:
        return AudioSignal(signal.samples.copy(), signal.sample_rate)
    ratio = 2.0 ** (n / 12.0)
    stretched = dsp.stretch_array(signal.samples, 1.0 / ratio)
    y = dsp.resample_array(stretched, 1.0 / ratio)
    return AudioSignal(dsp._fix_length(y, len(signal)), signal.sample_rate)


def time_shift(signal: AudioSignal, shift_s: float = 0.5, direction: str | None = None,
               seed: int = 0) -> AudioSignal:
    """Pad ``shift_s`` of silence on one side and trim the other; length is kept."""
    if shift_s < 0:
        raise InvalidParams(f"shift_s must be >= 0, got {shift_s}")
    if shift_s >= signal.duration:
        raise InvalidParams(f"shift of {shift_s}s is not shorter than the {signal.duration:.3f}s clip")
    if direction is None:
        direction = ("head", "tail")[int(make_rng(seed).integers(0, 2))]
    if direction not in ("head", "tail"):
        raise InvalidParams(f"direction must be 'head' or 'tail', got {direction!r}")
    n = int(round(shift_s * signal.sample_rate))
    x = signal.samples
    out = np.zeros_like(x)
    if n == 0:
        out[:] = x
    elif direction == "head":
        out[n:] = x[:-n]
    else:
        out[:-n] = x[n:]
    return AudioSignal(out, signal.sample_rate)


def loudness(signal: AudioSignal, factor_range=(0.3, 3.0), seed: int = 0) -> AudioSignal:
    lo, hi = _check_range("factor_range", factor_range, positive=True)
    alpha = make_rng(seed).uniform(lo, hi)
    return AudioSignal(signal.samples * alpha, signal.sample_rate)


def normalize(signal: AudioSignal, seed: int = 0) -> AudioSignal:
    peak = np.max(np.abs(signal.samples)) if len(signal) else 0.0
    if peak == 0:
        raise DegenerateSignal("cannot normalise an all-zero signal")
    return AudioSignal(signal.samples / peak, signal.sample_rate)


# ---- spectrogram domain -----------------------------------------------------

def draw_band(size: int, coverage: float, rng: np.random.Generator) -> tuple[int, int]:
    """Sample (start, width) of a mask band: width ~ U{0..round(coverage*size)}."""
    if not 0.0 <= coverage <= 1.0:
        raise InvalidParams(f"coverage must be in [0, 1], got {coverage}")
    limit = int(round(coverage * size))
    width = int(rng.integers(0, limit + 1))
    start = int(rng.integers(0, size - width + 1))
    return start, width


def _apply_mask(frames: np.ndarray, axis: str, start: int, width: int, fill: float) -> np.ndarray:
    out = frames.copy()
    if axis == "time":
        out[start:start + width, :] = fill
    else:
        out[:, start:start + width] = fill
    return out


def mask(mel: MelSpectrogram, axis: str = "time", coverage: float = 0.3, seed: int = 0) -> MelSpectrogram:
    """Fill one band of consecutive frames (or mel channels) with the log floor."""
    if axis not in ("time", "frequency"):
        raise InvalidParams(f"axis must be 'time' or 'frequency', got {axis!r}")
    size = mel.n_frames if axis == "time" else mel.n_mels
    start, width = draw_band(size, coverage, make_rng(seed))
    return mel.replace(_apply_mask(mel.frames, axis, start, width, mel.fill_value))


def time_mask(mel, coverage=0.3, seed=0):
    return mask(mel, "time", coverage, seed)


def freq_mask(mel, coverage=0.3, seed=0):
    return mask(mel, "frequency", coverage, seed)


def warp_frequency(f, w: float, f_hi: float, nyquist: float):
    """Piecewise-linear VTLP map; DC and Nyquist are fixed points."""
    if w <= 0:
        raise InvalidParams(f"warp factor must be positive, got {w}")
    f = np.asarray(f, dtype=np.float64)
    m = min(w, 1.0)
    knee = f_hi * m / w
    upper = nyquist - (nyquist - f_hi * m) / (nyquist - knee) * (nyquist - f)
    return np.where(f <= knee, f * w, upper)


def _interp_columns(frames: np.ndarray, pos: np.ndarray) -> np.ndarray:
    n = frames.shape[1]
    pos = np.clip(pos, 0, n - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    out = frames[:, lo] * (1.0 - frac)[None, :]
    moved = frac > 0
    out[:, moved] += frames[:, hi[moved]] * frac[None, moved]
    return out


def warp_channels(frames: np.ndarray, freqs: np.ndarray, w: float, f_hi: float, nyquist: float) -> np.ndarray:
    """Move content at frequency f to warp(f), interpolating linearly between channels."""
    if w == 1.0:
        return frames.copy()
    warped = warp_frequency(freqs, w, f_hi, nyquist)
    # fractional source channel feeding each output channel
    src = np.interp(freqs, warped, np.arange(freqs.size))
    return _interp_columns(frames, src)


def vtlp(spec, warp_range=(0.9, 1.1), f_hi_fraction: float = 0.8, seed: int = 0, sample_rate: int | None = None):
    """Vocal tract length perturbation on a log-mel or linear-frequency spectrogram.

    ``spec`` is either a :class:`MelSpectrogram` or a (frames, bins) array
    whose bins run linearly from DC to Nyquist of ``sample_rate``.
    """
    lo, hi = _check_range("warp_range", warp_range, positive=True)
    if not 0 < f_hi_fraction <= 1:
        raise InvalidParams(f"f_hi_fraction must be in (0, 1], got {f_hi_fraction}")
    w = make_rng(seed).uniform(lo, hi)
    if isinstance(spec, MelSpectrogram):
        nyquist = spec.sample_rate / 2
        freqs = dsp.mel_center_frequencies(spec.n_mels, spec.fmin, spec.fmax)
        return spec.replace(warp_channels(spec.frames, freqs, w, f_hi_fraction * nyquist, nyquist))
    if sample_rate is None:
        raise InvalidParams("sample_rate is required for a linear spectrum")
    frames = np.asarray(spec, dtype=np.float64)
    nyquist = sample_rate / 2
    freqs = np.linspace(0.0, nyquist, frames.shape[1])
    return warp_channels(frames, freqs, w, f_hi_fraction * nyquist, nyquist)


def time_warp(frames: np.ndarray, anchor: int, dest: int) -> np.ndarray:
    """Move frame ``anchor`` to position ``dest``, stretching both sides linearly."""
    n = frames.shape[0]
    if anchor == dest:
        return frames.copy()
    j = np.arange(n, dtype=np.float64)
    src = np.where(
        j <= dest,
        j * anchor / dest,
        anchor + (j - dest) * (n - 1 - anchor) / (n - 1 - dest),
    )
    return _interp_columns(frames.T, src).T


def spec_augment(mel: MelSpectrogram, warp_w: int = 5, coverage: float = 0.3, seed: int = 0) -> MelSpectrogram:
    """Time warp, then one frequency mask, then one time mask."""
    warp_w = int(warp_w)
    if warp_w < 0:
        raise InvalidParams(f"warp_w must be >= 0, got {warp_w}")
    if warp_w > 0 and mel.n_frames <= 2 * warp_w:
        raise InvalidParams(f"need more than {2 * warp_w} frames for warp_w={warp_w}, got {mel.n_frames}")
    rng = make_rng(seed)
    frames = mel.frames
    if warp_w > 0:
        anchor = int(rng.integers(warp_w, mel.n_frames - warp_w))
        shift = int(rng.integers(-warp_w, warp_w + 1))
        dest = min(max(anchor + shift, 1), mel.n_frames - 2)
        frames = time_warp(frames, anchor, dest)
    start, width = draw_band(mel.n_mels, coverage, rng)
    frames = _apply_mask(frames, "frequency", start, width, mel.fill_value)
    start, width = draw_band(mel.n_frames, coverage, rng)
    frames = _apply_mask(frames, "time", start, width, mel.fill_value)
    return mel.replace(frames)


# ---- registry and composite strategy ---------------------------------------

SIGNAL_METHODS = {
    "noise": add_noise,
    "stretch": time_stretch,
    "pitch": pitch_shift,
    "shift": time_shift,
    "loudness": loudness,
    "normalize": normalize,
}
MEL_METHODS = {
    "time_mask": time_mask,
    "freq_mask": freq_mask,
    "vtlp": vtlp,
    "spec_augment": spec_augment,
}
METHODS = {**SIGNAL_METHODS, **MEL_METHODS}
DEFAULT_RANDOM_SET = tuple(METHODS)

# params given as scalars "lo,hi" pairs on the command line map onto these
RANGE_PARAMS = {"rate_range", "semitone_range", "factor_range", "warp_range"}


@dataclass
class AudioAugSpec:
    method: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS and self.method not in ("random", "none"):
            raise InvalidParams(f"unknown audio method {self.method!r}")

    @property
    def domain(self) -> str:
        if self.method in MEL_METHODS:
            return "mel"
        return "signal"

    def to_dict(self):
        return {"method": self.method, "params": self.params, "seed": self.seed}


def apply_method(method: str, data, seed: int, **params):
    """Run one named transform; signal input is converted to log-mel for mel methods."""
    if method == "none":
        return data
    if method not in METHODS:
        raise InvalidParams(f"unknown audio method {method!r}")
    mel_keys = {"n_fft", "hop", "n_mels", "fmin", "fmax"}
    reject_unknown_params(METHODS[method], params, method, mel_keys if method in MEL_METHODS else ())
    if method in MEL_METHODS and isinstance(data, AudioSignal):
        mel_kwargs = {k: params.pop(k) for k in list(params) if k in mel_keys}
        data = dsp.log_mel(data, **mel_kwargs)
    params = {k: tuple(v) if k in RANGE_PARAMS else v for k, v in params.items()}
    return METHODS[method](data, seed=seed, **params)


def random_strategy(signal: AudioSignal, sample_id: str, transform_set=DEFAULT_RANDOM_SET,
                    seed: int = 0, params: dict | None = None):
    """Pick one transform uniformly for this sample and apply it.

    Returns ``(method_name, result)``; both the choice and the transform's
    own randomness derive from (seed, sample_id).
    """
    transform_set = list(transform_set)
    if not transform_set:
        raise EmptySet("transform set is empty", sample_id)
    choice = choose_transform(transform_set, sample_id, seed)
    sub_params = dict((params or {}).get(choice, {}))
    return choice, apply_method(choice, signal, derive_seed(seed, sample_id, choice), **sub_params)


def choose_transform(transform_set, sample_id: str, seed: int) -> str:
    rng = make_rng(derive_seed(seed, sample_id, "random"))
    return list(transform_set)[int(rng.integers(0, len(transform_set)))]
