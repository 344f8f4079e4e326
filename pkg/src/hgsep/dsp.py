"""Audio I/O, resampling, STFT/iSTFT and spectrogram normalisation.

Analysis uses a periodic Hann window; hop = window / 4 keeps the window
constant-overlap-add, and the inverse divides by the summed squared window so
``istft(stft(x))`` reconstructs ``x``. Signals are centre-padded by half a
window on each side.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import signal
from scipy.io import wavfile


class WavError(ValueError):
    """A WAV file could not be read or written."""


@dataclass(frozen=True)
class DSPConfig:
    sample_rate: int = 8000
    window_size: int = 1024
    hop: int = 256

    @property
    def n_bins(self) -> int:
        """Frequency rows fed to the network (the Nyquist row is split off)."""
        return self.window_size // 2

    def __post_init__(self):
        if self.window_size % 4 or self.hop <= 0 or self.window_size % self.hop:
            raise ValueError(f"window {self.window_size} / hop {self.hop} is not an overlap-add pair")


@dataclass
class AudioClip:
    """``samples`` is 1-D for mono or (channels, n) for multichannel audio."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if self.samples.shape[-1] < 1:
            raise ValueError("audio clip has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio clip contains non-finite samples")

    @property
    def num_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[-1]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def channel(self, i: int) -> "AudioClip":
        if self.samples.ndim == 1:
            if i != 0:
                raise IndexError(i)
            return self
        return AudioClip(self.samples[i], self.sample_rate)

    def to_mono(self) -> "AudioClip":
        """Channel average."""
        if self.samples.ndim == 1:
            return self
        return AudioClip(self.samples.mean(axis=0), self.sample_rate)


def _require_mono(clip: AudioClip, op: str) -> np.ndarray:
    if clip.samples.ndim != 1:
        raise ValueError(f"{op} expects mono audio, got {clip.num_channels} channels")
    return clip.samples


# ---------------------------------------------------------------------------
# WAV


def read_wav(path) -> AudioClip:
    """Read PCM16 or float32 RIFF/WAVE; samples are scaled to [-1, 1]."""
    try:
        rate, data = wavfile.read(os.fspath(path))
    except (ValueError, EOFError) as err:
        raise WavError(f"{path}: malformed WAV ({err})") from err
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        data = data.astype(np.float64)
    else:
        raise WavError(f"{path}: unsupported sample format {data.dtype}; expected PCM16 or float32")
    if data.shape[0] == 0:
        raise WavError(f"{path}: empty data chunk")
    if data.ndim == 2:
        if data.shape[1] > 2:
            raise WavError(f"{path}: {data.shape[1]} channels; only mono or stereo is supported")
        data = data.T.copy()
    return AudioClip(data, int(rate))


def write_wav(path, clip: AudioClip, float32: bool = False) -> None:
    """Write PCM16 (default, clipped to [-1, 1)) or float32."""
    data = clip.samples if clip.samples.ndim == 1 else clip.samples.T
    if float32:
        out = data.astype(np.float32)
    else:
        out = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        wavfile.write(fh, clip.sample_rate, out)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# resampling


def _lowpass_prototype(up: int, down: int, half_taps: int = 64) -> np.ndarray:
    """Kaiser-windowed sinc spanning +-``half_taps`` samples of the slower rate.

    The cutoff sits at the lower Nyquist; gain is ``up`` to undo zero-stuffing.
    """
    factor = max(up, down)
    h = signal.firwin(2 * half_taps * factor + 1, 1.0 / factor, window=("kaiser", 8.0))
    return h * up


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase windowed-sinc rate conversion.

    Output length is ``round(len * target / source)``.
    """
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    x = _require_mono(clip, "resample")
    if target_rate == clip.sample_rate:
        return AudioClip(x.copy(), clip.sample_rate)
    ratio = Fraction(target_rate, clip.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    y = signal.resample_poly(x, up, down, window=_lowpass_prototype(up, down))
    n_out = max(1, int(round(len(x) * target_rate / clip.sample_rate)))
    y = fit_length(y, n_out)
    return AudioClip(y, target_rate)


def fit_length(x: np.ndarray, n: int) -> np.ndarray:
    """Trim or zero-pad the last axis to ``n`` samples."""
    if x.shape[-1] >= n:
        return x[..., :n]
    pad = [(0, 0)] * (x.ndim - 1) + [(0, n - x.shape[-1])]
    return np.pad(x, pad)


# ---------------------------------------------------------------------------
# STFT


@dataclass
class ComplexSpectrogram:
    """Complex STFT frames, shape (window_size // 2 + 1, T)."""

    values: np.ndarray
    window_size: int
    hop: int
    sample_rate: int
    length: int  # samples in the analysed signal; iSTFT trims to this

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


def hann(n: int) -> np.ndarray:
    return signal.get_window("hann", n, fftbins=True)


def num_frames(length: int, window_size: int, hop: int) -> int:
    padded = max(length, window_size) + window_size
    return 1 + (padded - window_size) // hop


def stft(clip: AudioClip, window_size: int = 1024, hop: int = 256) -> ComplexSpectrogram:
    x = _require_mono(clip, "stft")
    n = len(x)
    if n < window_size:
        x = np.pad(x, (0, window_size - n))
    half = window_size // 2
    xp = np.pad(x, (half, half))
    t = 1 + (len(xp) - window_size) // hop
    frames = np.lib.stride_tricks.sliding_window_view(xp, window_size)[::hop][:t]
    spec = np.fft.rfft(frames * hann(window_size), axis=1).T
    return ComplexSpectrogram(np.ascontiguousarray(spec), window_size, hop, clip.sample_rate, n)


def istft(spec: ComplexSpectrogram) -> AudioClip:
    """Weighted overlap-add inverse with the same periodic Hann window."""
    win = hann(spec.window_size)
    frames = np.fft.irfft(spec.values.T, n=spec.window_size, axis=1) * win
    t = spec.n_frames
    total = (t - 1) * spec.hop + spec.window_size
    out = np.zeros(total)
    wsum = np.zeros(total)
    sq = win * win
    for k in range(t):
        s = k * spec.hop
        out[s:s + spec.window_size] += frames[k]
        wsum[s:s + spec.window_size] += sq
    nz = wsum > 1e-10
    out[nz] /= wsum[nz]
    half = spec.window_size // 2
    y = fit_length(out[half:], spec.length)
    return AudioClip(y, spec.sample_rate)


# ---------------------------------------------------------------------------
# magnitude / phase


@dataclass
class MagSpec:
    """Normalised magnitude rows 0..F-2, full phase, and the pass-through Nyquist row."""

    magnitude: np.ndarray  # (n_bins, T), already divided by norm_factor
    phase: np.ndarray  # (n_bins + 1, T)
    norm_factor: float
    nyquist: np.ndarray  # (T,) complex, unnormalised
    window_size: int
    hop: int
    sample_rate: int
    length: int

    @property
    def n_frames(self) -> int:
        return self.magnitude.shape[1]

    def denormalized(self) -> np.ndarray:
        return self.magnitude * self.norm_factor


def _split(spec: ComplexSpectrogram, norm_factor: float) -> MagSpec:
    mag = np.abs(spec.values)
    return MagSpec(
        magnitude=mag[:-1] / norm_factor,
        phase=np.angle(spec.values),
        norm_factor=norm_factor,
        nyquist=spec.values[-1].copy(),
        window_size=spec.window_size,
        hop=spec.hop,
        sample_rate=spec.sample_rate,
        length=spec.length,
    )


def to_magspec(mix_spec: ComplexSpectrogram, source_specs: Sequence[ComplexSpectrogram] = ()):
    """Normalise the mixture and every source by the mixture's peak magnitude.

    The peak is taken over the network-visible rows, so the normalised
    mixture magnitude peaks at exactly 1. Returns ``(mix, [sources...])``.
    A silent mixture gets norm factor 1.
    """
    for s in source_specs:
        if s.values.shape != mix_spec.values.shape:
            raise ValueError(f"source spectrogram {s.values.shape} does not match mixture {mix_spec.values.shape}")
    peak = float(np.abs(mix_spec.values[:-1]).max())
    norm = peak if peak > 0 else 1.0
    return _split(mix_spec, norm), [_split(s, norm) for s in source_specs]


def to_complex(magnitude: np.ndarray, like: MagSpec, nyquist: np.ndarray | None = None) -> ComplexSpectrogram:
    """Reattach ``like``'s phase and Nyquist row to an unnormalised magnitude."""
    values = np.empty(like.phase.shape, dtype=np.complex128)
    values[:-1] = magnitude * np.exp(1j * like.phase[:-1])
    values[-1] = like.nyquist if nyquist is None else nyquist
    return ComplexSpectrogram(values, like.window_size, like.hop, like.sample_rate, like.length)


def analyse(clip: AudioClip, config: DSPConfig) -> ComplexSpectrogram:
    """Resample to the working rate and take the STFT."""
    return stft(resample(clip, config.sample_rate), config.window_size, config.hop)


# ---------------------------------------------------------------------------
# debug images


def save_spectrogram_png(path, magnitude: np.ndarray, floor_db: float = -80.0) -> None:
    """Grayscale log-magnitude image; image row 0 is the lowest frequency."""
    from PIL import Image

    mag = np.asarray(magnitude, dtype=np.float64)
    peak = mag.max()
    db = 20 * np.log10(np.maximum(mag, 1e-12) / (peak if peak > 0 else 1.0))
    img = np.clip((db - floor_db) / -floor_db, 0.0, 1.0)
    Image.fromarray(np.round(img * 255).astype(np.uint8), mode="L").save(path)
