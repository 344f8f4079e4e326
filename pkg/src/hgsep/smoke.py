"""Desk-scale experiments shared by the acceptance suite and ``scripts/``.

The overfit task trains a small network on one synthetic two-source clip
whose spectrogram is exactly one network input (64 bins x 64 frames at
window 128 / hop 32); the oracle task runs ideal ratio masks through the full
inference pipeline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bsseval import DecompositionConfig, nsdr
from .datasets import ClipRecord, PreparedClip, prepare_clip
from .dsp import AudioClip, DSPConfig, analyse, to_magspec
from .inference import ideal_ratio_masks, oracle_predictor, separate
from .model import NetworkConfig
from .training import TrainConfig, TrainResult, train
from .synthetic import two_source_clip

MINI_DSP = DSPConfig(sample_rate=8000, window_size=128, hop=32)
# 63 hops + the centre padding give exactly 64 frames
MINI_CLIP_SAMPLES = 63 * MINI_DSP.hop
SOURCE_NAMES = ("voice", "accompaniment")


def synthetic_record(seed: int, n: int, rate: int, clip_id: str = "synthetic") -> ClipRecord:
    voice, acc = two_source_clip(seed, n, rate)
    return ClipRecord(clip_id, {"voice": AudioClip(voice, rate), "accompaniment": AudioClip(acc, rate)},
                      AudioClip(voice + acc, rate))


def miniature_clip(seed: int = 0) -> PreparedClip:
    return prepare_clip(synthetic_record(seed, MINI_CLIP_SAMPLES, MINI_DSP.sample_rate), MINI_DSP)


@dataclass
class OverfitSettings:
    channels: int = 32
    stacks: int = 2
    lr0: float = 2e-3
    lr_late: float = 1e-4
    iterations: int = 2000
    seed: int = 0
    clip_seed: int = 0

    def network(self) -> NetworkConfig:
        return NetworkConfig.scaled(self.channels, num_stacks=self.stacks, num_sources=2, input_shape=(64, 64))

    def training(self) -> TrainConfig:
        return TrainConfig(lr0=self.lr0, lr_late=self.lr_late, iterations=self.iterations, batch_size=1,
                           seed=self.seed, checkpoint_every=0)


@dataclass
class OverfitReport:
    first_loss: float
    last_loss: float
    last_modules: list
    seconds: float
    result: TrainResult

    @property
    def reduction(self) -> float:
        return self.first_loss / self.last_loss


def run_overfit(settings: OverfitSettings = OverfitSettings(), out_dir=None, progress=None) -> OverfitReport:
    clip = miniature_clip(settings.clip_seed)
    t0 = time.perf_counter()
    res = train([clip], settings.network(), settings.training(), out_dir=out_dir, progress=progress)
    first, last = res.history[0], res.history[-1]
    return OverfitReport(first[2], last[2], last[3], time.perf_counter() - t0, res)


def oracle_nsdr(seconds: float = 3.0, rate: int = 16000, seed: int = 0, dsp: Optional[DSPConfig] = None,
                filter_len: int = 512) -> dict:
    """NSDR per source when ideal ratio masks replace the network."""
    dsp = dsp or DSPConfig()
    rec = synthetic_record(seed, int(seconds * rate), rate)
    mix, sources = to_magspec(analyse(rec.mixture, dsp), [analyse(c, dsp) for c in rec.sources.values()])
    res = separate(rec.mixture, oracle_predictor(ideal_ratio_masks(mix, sources)), dsp, rec.source_names)
    refs = np.stack([c.samples for c in rec.sources.values()])
    cfg = DecompositionConfig(filter_len=filter_len)
    return {name: nsdr(res.sources[name].samples, refs, i, rec.mixture.samples, cfg)
            for i, name in enumerate(rec.source_names)}
