import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hgsep.dsp import (
    AudioClip,
    DSPConfig,
    WavError,
    istft,
    num_frames,
    read_wav,
    resample,
    save_spectrogram_png,
    stft,
    to_complex,
    to_magspec,
    write_wav,
)


def sine(freq, rate, seconds, amp=0.5):
    t = np.arange(int(rate * seconds)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def rel_err_db(x, y):
    err = np.sum((x - y) ** 2)
    return -np.inf if err == 0 else 10 * np.log10(err / np.sum(y ** 2))


# ---------------------------------------------------------------- WAV


def test_wav_pcm16_round_trip(tmp_path):
    x = sine(440, 16000, 1.0)
    write_wav(tmp_path / "a.wav", AudioClip(x, 16000))
    clip = read_wav(tmp_path / "a.wav")
    assert clip.sample_rate == 16000
    assert np.max(np.abs(clip.samples - x)) <= 1 / 32768


def test_wav_float32_round_trip(tmp_path):
    x = sine(440, 8000, 0.5)
    write_wav(tmp_path / "f.wav", AudioClip(x, 8000), float32=True)
    np.testing.assert_allclose(read_wav(tmp_path / "f.wav").samples, x, atol=1e-7)


def test_wav_stereo_returns_two_channels(tmp_path):
    x = np.stack([sine(440, 8000, 0.25), sine(660, 8000, 0.25)])
    write_wav(tmp_path / "s.wav", AudioClip(x, 8000))
    clip = read_wav(tmp_path / "s.wav")
    assert clip.num_channels == 2
    assert len(clip.channel(0).samples) == len(clip.channel(1).samples) == 2000


def test_wav_empty_data_chunk_rejected(tmp_path):
    from scipy.io import wavfile

    wavfile.write(tmp_path / "e.wav", 8000, np.zeros(0, dtype=np.int16))
    with pytest.raises(WavError, match="empty"):
        read_wav(tmp_path / "e.wav")


def test_wav_malformed_rejected(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"not a riff file at all")
    with pytest.raises(WavError):
        read_wav(tmp_path / "bad.wav")


def test_wav_unsupported_codec_rejected(tmp_path):
    from scipy.io import wavfile

    wavfile.write(tmp_path / "u8.wav", 8000, np.full(100, 128, dtype=np.uint8))
    with pytest.raises(WavError, match="unsupported"):
        read_wav(tmp_path / "u8.wav")


# ---------------------------------------------------------------- resampling


def test_resample_identity_rate():
    x = np.random.default_rng(0).standard_normal(1000)
    np.testing.assert_array_equal(resample(AudioClip(x, 16000), 16000).samples, x)


@pytest.mark.parametrize("src,dst,n", [(16000, 8000, 16001), (44100, 8000, 44100), (8000, 16000, 777), (8000, 44100, 1000)])
def test_resample_length(src, dst, n):
    y = resample(AudioClip(np.zeros(n), src), dst)
    assert len(y) == round(n * dst / src)
    assert y.sample_rate == dst


def test_resample_keeps_sine_frequency():
    y = resample(AudioClip(sine(1000, 16000, 1.0), 16000), 8000).samples
    spec = np.abs(np.fft.rfft(y * np.hanning(len(y))))
    freqs = np.fft.rfftfreq(len(y), 1 / 8000)
    bin_width = freqs[1]
    assert abs(freqs[np.argmax(spec)] - 1000) <= bin_width


def test_resample_preserves_in_band_amplitude():
    x = sine(3900, 16000, 1.0)
    y = resample(AudioClip(x, 16000), 8000).samples
    core = slice(400, -400)  # away from the filter's edge transients
    rms_in = np.sqrt(np.mean(x ** 2))
    rms_out = np.sqrt(np.mean(y[core] ** 2))
    assert abs(20 * np.log10(rms_out / rms_in)) < 1.0


def test_resample_rejects_bad_rate():
    with pytest.raises(ValueError):
        resample(AudioClip(np.zeros(10), 8000), 0)


# ---------------------------------------------------------------- STFT


def test_stft_shape_and_frame_rule():
    x = np.random.default_rng(0).standard_normal(8000)
    spec = stft(AudioClip(x, 8000))
    assert spec.values.shape == (513, 1 + (8000 + 1024 - 1024) // 256)
    assert spec.n_frames == num_frames(8000, 1024, 256)


def test_stft_short_clip_padded_to_one_window():
    spec = stft(AudioClip(np.ones(100), 8000))
    assert spec.n_frames == num_frames(100, 1024, 256) == 5
    assert len(istft(spec)) == 100


def test_stft_sine_peaks_at_bin_128():
    spec = stft(AudioClip(sine(1000, 8000, 1.0), 8000))
    # FFT oracle for the closed-form bin 1000 / 8000 * 1024
    assert round(1000 / 8000 * 1024) == 128
    peaks = np.argmax(np.abs(spec.values), axis=0)
    assert np.all(peaks[2:-2] == 128)


def test_stft_zero_and_dc():
    assert not np.any(stft(AudioClip(np.zeros(4000), 8000)).values)
    mag = np.abs(stft(AudioClip(np.ones(4000), 8000)).values)
    interior = mag[:, 3:-3]
    assert np.all(np.argmax(interior, axis=0) == 0)
    # Hann leakage: bin 0 carries N/2, bin 1 carries N/4, the rest ~0
    energy = interior ** 2
    assert np.all(energy[0] / energy.sum(axis=0) > 0.79)
    assert np.all(energy[2:].sum(axis=0) < 1e-20 * energy[0])


def test_istft_round_trip_white_noise():
    x = np.random.default_rng(1).standard_normal(16000)
    y = istft(stft(AudioClip(x, 8000))).samples
    core = slice(512, -512)
    rel = np.linalg.norm(x[core] - y[core]) / np.linalg.norm(x[core])
    assert rel < 1e-6


def test_istft_round_trip_chirp():
    from scipy.signal import chirp

    t = np.arange(16000) / 8000
    x = chirp(t, 100, 2.0, 3000) * (0.5 + 0.4 * np.sin(2 * np.pi * 3 * t))
    y = istft(stft(AudioClip(x, 8000))).samples
    assert rel_err_db(y, x) < -60


def test_istft_zero_spectrogram():
    spec = stft(AudioClip(np.zeros(3000), 8000))
    assert not np.any(istft(spec).samples)


@given(n=st.integers(1, 5000), seed=st.integers(0, 2**31 - 1), window=st.sampled_from([128, 256, 1024]))
@settings(max_examples=25, deadline=None)
def test_istft_stft_identity_property(n, seed, window):
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    y = istft(stft(AudioClip(x, 8000), window, window // 4)).samples
    assert len(y) == n
    assert rel_err_db(y, x) < -60


# ---------------------------------------------------------------- normalisation


def _specs(seed=0, gain=1.0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(8000) * 0.3
    b = sine(440, 8000, 1.0)
    mix = (a + b) * gain
    return stft(AudioClip(mix, 8000)), [stft(AudioClip(a * gain, 8000)), stft(AudioClip(b * gain, 8000))]


def test_magspec_normalises_mixture_peak_to_one():
    mix_spec, srcs = _specs()
    mix, sources = to_magspec(mix_spec, srcs)
    assert mix.magnitude.shape == (512, mix_spec.n_frames)
    assert mix.phase.shape == (513, mix_spec.n_frames)
    assert mix.nyquist.shape == (mix_spec.n_frames,)
    assert mix.norm_factor == np.abs(mix_spec.values[:-1]).max()
    assert mix.magnitude.max() == 1.0
    assert all(s.norm_factor == mix.norm_factor for s in sources)


def test_magspec_silent_source_is_zero():
    mix_spec, _ = _specs()
    silent = stft(AudioClip(np.zeros(8000), 8000))
    _, (src,) = to_magspec(mix_spec, [silent])
    assert not src.magnitude.any()


def test_magspec_silent_mixture_uses_unit_norm():
    mix, _ = to_magspec(stft(AudioClip(np.zeros(2000), 8000)))
    assert mix.norm_factor == 1.0


def test_magspec_unnormalize_round_trip():
    mix_spec, _ = _specs()
    mix, _ = to_magspec(mix_spec)
    np.testing.assert_allclose(mix.denormalized(), np.abs(mix_spec.values[:-1]), rtol=1e-12)
    rebuilt = to_complex(mix.denormalized(), mix)
    np.testing.assert_allclose(rebuilt.values, mix_spec.values, rtol=1e-10, atol=1e-12)


def test_magspec_shape_mismatch_rejected():
    mix_spec, _ = _specs()
    with pytest.raises(ValueError):
        to_magspec(mix_spec, [stft(AudioClip(np.zeros(100), 8000))])


def test_normalised_magnitudes_are_gain_invariant():
    a, _ = to_magspec(_specs(gain=1.0)[0])
    b, _ = to_magspec(_specs(gain=4.0)[0])
    np.testing.assert_array_equal(a.magnitude, b.magnitude)
    assert b.norm_factor == 4 * a.norm_factor


def test_dsp_config_bins():
    assert DSPConfig().n_bins == 512
    assert DSPConfig(window_size=128, hop=32).n_bins == 64
    with pytest.raises(ValueError):
        DSPConfig(window_size=1024, hop=300)


def test_spectrogram_png_orientation(tmp_path):
    from PIL import Image

    mag = np.zeros((64, 10))
    mag[0] = 1.0  # lowest frequency loud
    save_spectrogram_png(tmp_path / "s.png", mag)
    img = np.asarray(Image.open(tmp_path / "s.png"))
    assert img.shape == (64, 10)
    assert img[0].min() == 255 and img[-1].max() == 0
