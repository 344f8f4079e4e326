"""Synthetic two-source material and on-disk fixtures in the MIR-1K / DSD100 layouts.

The "voice" is a harmonic tone with note changes and vibrato; the
"accompaniment" is amplitude-modulated band-limited noise. Both stay below
3.6 kHz so nothing is lost at the 8 kHz working rate.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import signal

from .dsp import AudioClip, write_wav


def tonal_source(n: int, rate: int, rng: np.random.Generator, amp: float = 0.3) -> np.ndarray:
    t = np.arange(n) / rate
    note_len = int(0.25 * rate)
    f0 = np.repeat(rng.uniform(180.0, 420.0, size=n // note_len + 1), note_len)[:n]
    f0 = f0 * (1 + 0.01 * np.sin(2 * np.pi * 5.5 * t))
    phase = 2 * np.pi * np.cumsum(f0) / rate
    out = np.zeros(n)
    for k in range(1, 9):
        partial = np.where(k * f0 < 3600.0, np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k, 0.0)
        out += partial
    env = 0.6 + 0.4 * np.sin(2 * np.pi * 1.3 * t + rng.uniform(0, 2 * np.pi)) ** 2
    return amp * out * env / np.max(np.abs(out) + 1e-12)


def noise_source(n: int, rate: int, rng: np.random.Generator, amp: float = 0.2) -> np.ndarray:
    sos = signal.butter(6, [150.0, 3000.0], btype="bandpass", fs=rate, output="sos")
    x = signal.sosfilt(sos, rng.standard_normal(n + 2048))[2048:]
    t = np.arange(n) / rate
    env = 0.5 + 0.5 * np.abs(np.sin(2 * np.pi * 2.0 * t + rng.uniform(0, np.pi)))
    x = x * env
    return amp * x / np.max(np.abs(x) + 1e-12)


def two_source_clip(seed: int, n: int, rate: int) -> tuple[np.ndarray, np.ndarray]:
    """(voice, accompaniment) sample arrays of length ``n``."""
    rng = np.random.default_rng(seed)
    return tonal_source(n, rate, rng), noise_source(n, rate, rng)


def write_mir1k_fixture(root, clip_ids, seconds: float = 2.0, rate: int = 16000, seed: int = 0) -> Path:
    """Stereo WAVs, accompaniment on the left channel and voice on the right."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for k, cid in enumerate(clip_ids):
        voice, acc = two_source_clip(seed + k, int(seconds * rate), rate)
        write_wav(root / f"{cid}.wav", AudioClip(np.stack([acc, voice]), rate))
    return root


def write_dsd100_fixture(root, songs: dict, seconds: float = 1.0, rate: int = 16000, seed: int = 0) -> Path:
    """``songs`` maps split folder ("Dev"/"Test") to song names; writes stereo stems plus mixtures."""
    root = Path(root)
    k = 0
    for split, names in songs.items():
        for name in names:
            rng = np.random.default_rng(seed + k)
            k += 1
            n = int(seconds * rate)
            stems = {
                "bass": tonal_source(n, rate, rng, 0.2),
                "drums": noise_source(n, rate, rng, 0.2),
                "other": noise_source(n, rate, rng, 0.1),
                "vocals": tonal_source(n, rate, rng, 0.2),
            }
            sdir = root / "Sources" / split / name
            mdir = root / "Mixtures" / split / name
            sdir.mkdir(parents=True, exist_ok=True)
            mdir.mkdir(parents=True, exist_ok=True)
            for stem, x in stems.items():
                write_wav(sdir / f"{stem}.wav", AudioClip(np.stack([x, x]), rate))
            mix = sum(stems.values())
            write_wav(mdir / "mixture.wav", AudioClip(np.stack([mix, mix]), rate))
    return root
