import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from conftest import tone
from crowdscene import dsp

CFG = dsp.DspConfig()
FLOOR = np.float32(np.log(CFG.log_eps))


@pytest.fixture(scope="module")
def noise():
    rng = np.random.default_rng(1234)
    return dsp.PcmBuffer(0.1 * rng.standard_normal(320000), 32000)


@pytest.mark.parametrize("kind", dsp.KINDS)
def test_ten_seconds_gives_640_by_128(kind, noise):
    spec = dsp.spectrogram(kind, noise)
    assert spec.values.shape == (640, 128)
    assert spec.values.dtype == np.float32
    assert np.all(np.isfinite(spec.values))


@pytest.mark.parametrize("kind", dsp.KINDS)
def test_silence_is_the_log_floor(kind):
    spec = dsp.spectrogram(kind, dsp.PcmBuffer(np.zeros(320000), 32000))
    assert np.all(spec.values == FLOOR)


def test_mel_tone_matches_filterbank_response():
    fb = dsp.mel_filterbank(CFG)
    # 1 kHz falls exactly on FFT bin 128 at 32 kHz / 4096 points
    assert 1000.0 * CFG.n_fft / CFG.sample_rate == 128
    expected = int(np.argmax(fb[:, 128]))
    spec = dsp.mel_spectrogram(tone(1000.0))
    argmax = spec.values[5:-5].argmax(axis=1)
    assert np.all(argmax == expected)


def test_mel_filterbank_shape_and_support():
    fb = dsp.mel_filterbank(CFG)
    assert fb.shape == (128, CFG.n_fft // 2 + 1)
    assert np.all(fb >= 0)
    assert np.all((fb > 0).sum(axis=1) >= 1)
    centres = np.argmax(fb, axis=1)
    assert np.all(np.diff(centres) >= 0)


def test_cqt_tone_lands_on_nearest_bin():
    freqs = dsp.cqt_frequencies(CFG)
    nearest = int(np.argmin(np.abs(np.log2(freqs / 440.0))))
    assert nearest == round(16 * np.log2(440.0 / 32.7))
    argmax = dsp.cqt_spectrogram(tone(440.0)).values[10:-10].argmax(axis=1)
    assert np.all(np.abs(argmax - nearest) <= 1)


def test_gammatone_energy_follows_bandwidth(noise):
    energy = np.exp(dsp.gam_spectrogram(noise).values[20:].astype(np.float64)).mean(axis=0)
    erb = dsp.erb_bandwidth(dsp.gammatone_center_frequencies(CFG))
    assert spearmanr(energy, erb).correlation > 0.98
    per_hz = energy / erb
    assert per_hz.min() / per_hz.max() > 0.5


@pytest.mark.parametrize("hop", [500, 448])
def test_gammatone_block_energy_matches_per_channel_filter(hop):
    x = 0.1 * np.random.default_rng(3).standard_normal(9000)
    cfs = dsp.gammatone_center_frequencies(CFG)[::9]
    got = dsp.gammatone_block_energy(x, cfs, 32000, hop)
    n = len(x) // hop * hop
    pcm = dsp.PcmBuffer(x, 32000)
    want = np.stack([(np.abs(dsp.gammatone_response(pcm, cf, 32000)[:n]) ** 2).reshape(-1, hop).mean(axis=1)
                     for cf in cfs], axis=1)
    np.testing.assert_allclose(got, want, rtol=1e-5)


def test_gammatone_tone_peaks_near_its_frequency():
    cf = dsp.gammatone_center_frequencies(CFG)
    argmax = dsp.gam_spectrogram(tone(2000.0, seconds=2.0)).values[20:].argmax(axis=1)
    assert np.all(np.abs(cf[argmax] - 2000.0) < dsp.erb_bandwidth(2000.0))


def test_wrong_rate_and_short_input():
    with pytest.raises(dsp.WrongRate):
        dsp.mel_spectrogram(tone(440.0, 1.0, rate=16000))
    with pytest.raises(dsp.TooShort):
        dsp.mel_spectrogram(dsp.PcmBuffer(np.zeros(100), 32000))
    with pytest.raises(ValueError):
        dsp.spectrogram("chroma", tone(440.0, 1.0))


def test_spectrogram_resamples_other_rates():
    spec = dsp.spectrogram("mel", tone(440.0, 10.0, rate=16000))
    assert spec.values.shape == (640, 128)


# -- resampling --------------------------------------------------------------

def test_resample_length():
    out = dsp.resample(tone(100.0, 1.0, rate=16000), 32000)
    assert out.sample_rate == 32000
    assert len(out.samples) == 32000


def test_resample_same_rate_is_identity():
    pcm = tone(100.0, 1.0)
    assert dsp.resample(pcm, 32000).samples is pcm.samples


@pytest.mark.parametrize("src", [8000, 16000, 22050, 44100, 48000])
def test_resample_preserves_dc(src):
    out = dsp.resample(dsp.PcmBuffer(np.full(src, 0.5), src), 32000)
    np.testing.assert_allclose(out.samples, 0.5, atol=1e-6)


def test_resample_empty():
    with pytest.raises(dsp.EmptyInput):
        dsp.resample(dsp.PcmBuffer(np.zeros(0), 16000), 32000)


# -- tiling ------------------------------------------------------------------

def test_patchify_640_gives_five():
    values = np.arange(640 * 128, dtype=np.float32).reshape(640, 128)
    patches = dsp.patchify(values, "seg")
    assert len(patches) == 5
    assert [p.source for p in patches] == [("seg", i) for i in range(5)]
    np.testing.assert_array_equal(np.concatenate([p.values for p in patches]), values)


def test_patchify_single_patch_is_identity():
    values = np.random.default_rng(0).standard_normal((128, 128))
    (patch,) = dsp.patchify(values)
    np.testing.assert_array_equal(patch.values, values)


def test_patchify_drops_remainder():
    values = np.random.default_rng(0).standard_normal((700, 128))
    patches = dsp.patchify(values)
    assert len(patches) == 5
    np.testing.assert_array_equal(np.concatenate([p.values for p in patches]), values[:640])
    np.testing.assert_array_equal(dsp.patch_array(values).reshape(640, 128), values[:640])


def test_patchify_bad_bins():
    with pytest.raises(dsp.BadBins):
        dsp.patchify(np.zeros((640, 64)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_patch_count_is_floor(frames):
    assert len(dsp.patch_array(np.zeros((frames, 128)))) == frames // 128


# -- misc --------------------------------------------------------------------

def test_frontends_are_deterministic(noise):
    short = dsp.PcmBuffer(noise.samples[:64000], 32000)
    for kind in dsp.KINDS:
        np.testing.assert_array_equal(dsp.spectrogram(kind, short).values,
                                      dsp.spectrogram(kind, short).values)


def test_wav_round_trip_and_downmix(tmp_path):
    x = np.sin(np.linspace(0, 100, 32000)) * 0.5
    dsp.write_wav(tmp_path / "a.wav", x, 32000)
    pcm = dsp.read_wav(tmp_path / "a.wav")
    assert pcm.sample_rate == 32000
    np.testing.assert_allclose(pcm.samples, x, atol=1 / 32767)

    import wave
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(np.array([[1000, 3000]] * 10, dtype="<i2").tobytes())
    buf.seek(0)
    pcm = dsp.read_wav(buf)
    np.testing.assert_allclose(pcm.samples, 2000 / 32768, atol=1e-4)


def test_standardizer():
    rng = np.random.default_rng(0)
    arrays = [rng.normal(3.0, 2.0, (640, 128)) for _ in range(4)]
    std = dsp.Standardizer.fit(arrays)
    z = np.concatenate([std(a) for a in arrays])
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-5)
    np.testing.assert_allclose(z.std(axis=0), 1, atol=1e-4)
    # constant bins are left unscaled
    const = dsp.Standardizer.fit([np.ones((10, 128))])
    assert np.all(const(np.ones((3, 128))) == 0)


def test_load_frames(tmp_path):
    from PIL import Image

    for i, colour in enumerate([(255, 0, 0), (0, 0, 255)]):
        Image.new("RGB", (64, 48), colour).save(tmp_path / f"{i:04d}.png")
    frames = dsp.load_frames(tmp_path)
    assert frames.shape == (2, 128, 128, 3)
    np.testing.assert_allclose(frames[0, :, :, 0], 1.0)
    np.testing.assert_allclose(frames[1, :, :, 2], 1.0)
