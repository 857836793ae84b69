import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from augkit import audio_aug as aa
from augkit import dsp
from augkit.corpus import AudioSignal
from augkit.errors import DegenerateSignal, EmptySet, InvalidParams

SR = 16000
FILL = math.log(1e-10)


def tone(freq, dur=1.0, amp=0.5):
    t = np.arange(int(dur * SR)) / SR
    return AudioSignal(amp * np.sin(2 * np.pi * freq * t), SR)


def peak_hz(x):
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size), n=1024 * (x.size // 1024)))
    return np.argmax(spec) * SR / (1024 * (x.size // 1024))


def rand_mel(n_frames=100, n_mels=64, seed=0):
    return dsp.MelSpectrogram(np.random.default_rng(seed).normal(0, 3, (n_frames, n_mels)), SR)


# ---- signal domain ---------------------------------------------------------------

def test_noise_statistics_and_determinism():
    z = AudioSignal(np.zeros(100_000), SR)
    y = aa.add_noise(z, 0.002, seed=5)
    assert abs(np.sqrt(np.mean(y.samples ** 2)) - 0.002) < 0.002 * 0.05
    assert np.array_equal(y.samples, aa.add_noise(z, 0.002, seed=5).samples)
    assert not np.array_equal(y.samples, aa.add_noise(z, 0.002, seed=6).samples)
    x = tone(200)
    assert np.array_equal(aa.add_noise(x, 0.0, seed=1).samples, x.samples)
    with pytest.raises(InvalidParams):
        aa.add_noise(x, -0.1)


def test_time_stretch_contract():
    x = tone(440, 2.0)
    y = aa.time_stretch(x, (0.5, 0.5), seed=3)
    assert abs(len(y) - 2 * len(x)) <= dsp.HOP and y.sample_rate == SR
    same = aa.time_stretch(x, (1, 1), seed=3)
    assert np.array_equal(same.samples, x.samples)
    with pytest.raises(InvalidParams):
        aa.time_stretch(x, (-0.5, 1.2))


def test_stretch_rate_draws_within_range():
    draws = [np.random.default_rng(s).uniform(0.8, 1.2) for s in range(10_000)]
    assert 0.8 <= min(draws) and max(draws) <= 1.2


@pytest.mark.parametrize("n, expected", [(12, 880), (-12, 220)])
def test_pitch_octave(n, expected):
    x = tone(440, 2.0)
    y = aa.pitch_shift(x, (n, n), seed=0)
    assert len(y) == len(x)
    assert abs(peak_hz(y.samples) - expected) <= SR / 1024


def test_pitch_zero_is_identity():
    x = tone(440)
    y = aa.pitch_shift(x, (0, 0))
    assert np.corrcoef(x.samples, y.samples)[0, 1] > 0.99


def test_time_shift():
    x = AudioSignal(np.ones(10 * SR), SR)
    head = aa.time_shift(x, 0.5, "head")
    assert len(head) == len(x) and not head.samples[:8000].any() and head.samples[8000:].all()
    tail = aa.time_shift(x, 0.5, "tail")
    assert not tail.samples[-8000:].any() and tail.samples[:-8000].all()
    with pytest.raises(InvalidParams):
        aa.time_shift(x, 11.0)
    drawn = {len(np.flatnonzero(aa.time_shift(x, 0.5, seed=s).samples[:8000] == 0)) for s in range(20)}
    assert drawn == {0, 8000}


def test_loudness_and_normalize():
    x = tone(300)
    assert np.array_equal(aa.loudness(x, (2, 2)).samples, x.samples * 2)
    assert np.array_equal(aa.loudness(x, (1, 1)).samples, x.samples)
    half = aa.loudness(x, (0.5, 0.5)).samples
    assert math.isclose(np.sqrt(np.mean(half ** 2)), 0.5 * np.sqrt(np.mean(x.samples ** 2)))
    with pytest.raises(InvalidParams):
        aa.loudness(x, (0, 2))
    q = AudioSignal(x.samples * 0.5, SR)  # peak 0.25
    n = aa.normalize(q)
    assert np.max(np.abs(n.samples)) == 1.0
    assert np.allclose(n.samples, q.samples * 4)
    assert np.array_equal(aa.normalize(n).samples, n.samples)
    with pytest.raises(DegenerateSignal):
        aa.normalize(AudioSignal(np.zeros(10), SR))


@pytest.mark.parametrize("method", ["noise", "loudness", "shift", "normalize"])
def test_length_preserving_methods(method):
    x = tone(250)
    y = aa.apply_method(method, x, seed=9)
    assert len(y) == len(x) and y.sample_rate == SR


# ---- masking ------------------------------------------------------------------------

def _band(out, axis):
    full = np.all(out == FILL, axis=1 if axis == "time" else 0)
    idx = np.flatnonzero(full)
    return idx


def test_mask_bounds_and_untouched_cells():
    mel = rand_mel()
    for seed in range(300):
        out = aa.time_mask(mel, 0.3, seed)
        idx = _band(out.frames, "time")
        assert idx.size <= 30
        if idx.size:
            assert np.all(np.diff(idx) == 1)
        keep = np.ones(100, bool)
        keep[idx] = False
        assert np.array_equal(out.frames[keep], mel.frames[keep])


def test_freq_mask_band():
    mel = rand_mel()
    out = aa.freq_mask(mel, 0.5, seed=3)
    idx = _band(out.frames, "frequency")
    assert idx.size <= 32
    keep = np.setdiff1d(np.arange(64), idx)
    assert np.array_equal(out.frames[:, keep], mel.frames[:, keep])


def test_mask_zero_coverage_is_identity():
    mel = rand_mel()
    assert np.array_equal(aa.time_mask(mel, 0.0, 4).frames, mel.frames)
    with pytest.raises(InvalidParams):
        aa.time_mask(mel, 1.5)
    with pytest.raises(InvalidParams):
        aa.mask(mel, "diagonal")


def test_mask_mean_width():
    widths = [aa.draw_band(100, 0.3, np.random.default_rng(s))[1] for s in range(10_000)]
    assert abs(np.mean(widths) - 15) <= 1


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 200), st.floats(0, 1), st.integers(0, 2**32))
def test_draw_band_in_bounds(size, coverage, seed):
    start, width = aa.draw_band(size, coverage, np.random.default_rng(seed))
    assert 0 <= width <= round(coverage * size)
    assert 0 <= start and start + width <= size


# ---- VTLP -------------------------------------------------------------------------------

def test_warp_map_fixed_points():
    for w in (0.8, 0.95, 1.0, 1.1, 1.3):
        f = aa.warp_frequency(np.array([0.0, 8000.0]), w, 6400, 8000)
        assert np.allclose(f, [0, 8000])
    f = np.linspace(0, 8000, 100)
    assert np.all(np.diff(aa.warp_frequency(f, 1.2, 6400, 8000)) > 0)


def test_vtlp_identity_and_endpoints():
    mel = rand_mel()
    assert np.array_equal(aa.vtlp(mel, (1, 1)).frames, mel.frames)
    lin = np.random.default_rng(1).random((10, 513))
    for w in (0.9, 1.1):
        out = aa.vtlp(lin, (w, w), sample_rate=SR)
        assert np.allclose(out[:, 0], lin[:, 0]) and np.allclose(out[:, -1], lin[:, -1])
    with pytest.raises(InvalidParams):
        aa.vtlp(mel, (0, 1))
    with pytest.raises(InvalidParams):
        aa.vtlp(lin, (1, 1))


def test_vtlp_moves_peak():
    bins = np.fft.rfftfreq(1024, 1 / SR)
    frame = np.exp(-0.5 * ((bins - 1000) / 40) ** 2)
    out = aa.vtlp(frame[None, :], (1.1, 1.1), sample_rate=SR)[0]
    assert abs(bins[np.argmax(out)] - 1100) <= SR / 1024


def test_vtlp_on_mel_keeps_shape():
    mel = dsp.log_mel(tone(500))
    out = aa.vtlp(mel, seed=2)
    assert out.frames.shape == mel.frames.shape


# ---- SpecAugment ------------------------------------------------------------------------

def test_spec_augment_identity_and_shape():
    mel = rand_mel()
    assert np.array_equal(aa.spec_augment(mel, 0, 0.0).frames, mel.frames)
    for s in range(20):
        assert aa.spec_augment(mel, 5, 0.3, s).frames.shape == mel.frames.shape
    with pytest.raises(InvalidParams):
        aa.spec_augment(rand_mel(10), 5)


def test_spec_augment_masks_both_axes():
    mel = rand_mel()
    both = 0
    for s in range(100):
        out = aa.spec_augment(mel, 5, 0.3, s).frames
        if _band(out, "time").size and _band(out, "frequency").size:
            both += 1
    # each band is empty with probability 1/20
    assert both >= 80


def test_time_warp_moves_anchor():
    frames = np.arange(50, dtype=float)[:, None] * np.ones((1, 4))
    out = aa.time_warp(frames, 20, 25)
    assert np.allclose(out[25], frames[20]) and np.allclose(out[0], frames[0]) and np.allclose(out[-1], frames[-1])
    assert np.all(np.diff(out[:, 0]) > 0)


# ---- registry and random strategy ---------------------------------------------------------

def test_apply_method_routes_by_domain():
    x = tone(300)
    assert isinstance(aa.apply_method("vtlp", x, 1), dsp.MelSpectrogram)
    assert isinstance(aa.apply_method("pitch", x, 1, semitone_range=[2, 2]), AudioSignal)
    assert aa.apply_method("none", x, 1) is x
    with pytest.raises(InvalidParams):
        aa.apply_method("bogus", x, 1)
    assert aa.AudioAugSpec("vtlp").domain == "mel" and aa.AudioAugSpec("noise").domain == "signal"


def test_random_strategy():
    x = tone(300, 0.5)
    method, out = aa.random_strategy(x, "s1", ["loudness"], seed=3)
    assert method == "loudness" and isinstance(out, AudioSignal)
    again = aa.random_strategy(x, "s1", ["loudness"], seed=3)[1]
    assert np.array_equal(out.samples, again.samples)
    with pytest.raises(EmptySet):
        aa.random_strategy(x, "s1", [], seed=3)


def test_random_choice_uniform():
    methods = list(aa.METHODS)
    assert len(methods) == 10
    counts = dict.fromkeys(methods, 0)
    for i in range(10_000):
        counts[aa.choose_transform(methods, f"s{i}", 11)] += 1
    assert chisquare(list(counts.values())).pvalue > 0.01
