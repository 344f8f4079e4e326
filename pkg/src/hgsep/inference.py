"""Chunked full-track separation with mixture-phase reconstruction.

Pipeline: resample to the working rate -> STFT -> normalise by the mixture
peak -> consecutive ``width``-frame chunks through the predictor (last chunk
zero-padded, output cropped) -> clamp masks at 0 -> multiply with the
mixture magnitude -> undo normalisation -> reattach mixture phase and Nyquist
row -> iSTFT -> resample back to the input rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dsp import AudioClip, DSPConfig, MagSpec, analyse, fit_length, istft, resample, to_complex, to_magspec
from .model import NetworkConfig, Params, forward
from .tensor import Tensor

# (chunk of shape (1, 1, F, width), first frame index) -> masks (C, F, width)
Predictor = Callable[[np.ndarray, int], np.ndarray]


def network_predictor(params: Params, config: NetworkConfig) -> Predictor:
    """Masks of the last hourglass module."""
    dtype = next(iter(params.values())).dtype

    def predict(chunk: np.ndarray, start: int) -> np.ndarray:
        return forward(params, Tensor(chunk.astype(dtype)), config)[-1].data[0]

    return predict


def oracle_predictor(masks: np.ndarray) -> Predictor:
    """Serve precomputed (C, F, T) masks chunk by chunk."""

    def predict(chunk: np.ndarray, start: int) -> np.ndarray:
        width = chunk.shape[-1]
        piece = masks[:, :, start:start + width]
        return np.pad(piece, ((0, 0), (0, 0), (0, width - piece.shape[2])))

    return predict


def ideal_ratio_masks(mixture: MagSpec, sources: Sequence[MagSpec]) -> np.ndarray:
    """|Y_i| / |X| per bin, 0 where the mixture is silent."""
    x = mixture.magnitude
    safe = np.where(x > 0, x, 1.0)
    return np.stack([np.where(x > 0, s.magnitude / safe, 0.0) for s in sources])


def estimate_masks(norm_mag: np.ndarray, predict: Predictor, width: int = 64) -> np.ndarray:
    """Run ``predict`` on consecutive non-overlapping chunks and stitch the (C, F, T) result."""
    f, t = norm_mag.shape
    pieces = []
    for start in range(0, t, width):
        chunk = norm_mag[:, start:start + width]
        valid = chunk.shape[1]
        if valid < width:
            chunk = np.pad(chunk, ((0, 0), (0, width - valid)))
        pieces.append(np.asarray(predict(chunk[None, None], start))[:, :, :valid])
    return np.concatenate(pieces, axis=2)


def apply_mask(masks: np.ndarray, magspec: MagSpec) -> list[np.ndarray]:
    """max(mask_i, 0) * normalised mixture * norm_factor, per source."""
    return [np.maximum(m, 0.0) * magspec.magnitude * magspec.norm_factor for m in np.asarray(masks, dtype=np.float64)]


@dataclass
class SeparationResult:
    sources: dict  # name -> AudioClip at the input sample rate
    magnitudes: list  # estimated (F, T) magnitudes at the working rate
    masks: np.ndarray  # (C, F, T) before clamping
    mixture: MagSpec


def separate(clip: AudioClip, predict: Predictor, dsp: DSPConfig, source_names: Sequence[str],
             width: int = 64) -> SeparationResult:
    mono = clip.to_mono()
    work = resample(mono, dsp.sample_rate)
    if len(work) < dsp.window_size:
        raise ValueError(
            f"clip too short: {len(work)} samples at {dsp.sample_rate} Hz, need at least one {dsp.window_size}-sample window"
        )
    mix, _ = to_magspec(analyse(mono, dsp))
    masks = estimate_masks(mix.magnitude, predict, width)
    if masks.shape[0] != len(source_names):
        raise ValueError(f"predictor produced {masks.shape[0]} masks for {len(source_names)} source names")
    estimates = apply_mask(masks, mix)
    out = {}
    for name, mag in zip(source_names, estimates):
        y = istft(to_complex(mag, mix))
        y = resample(y, clip.sample_rate)
        out[name] = AudioClip(fit_length(y.samples, len(mono)), clip.sample_rate)
    return SeparationResult(out, estimates, masks, mix)


def separate_with_params(clip: AudioClip, params: Params, config: NetworkConfig, dsp: DSPConfig,
                         source_names: Sequence[str]) -> SeparationResult:
    if config.input_shape[0] != dsp.n_bins:
        raise ValueError(f"network expects {config.input_shape[0]} bins, DSP settings give {dsp.n_bins}")
    return separate(clip, network_predictor(params, config), dsp, source_names, config.input_shape[1])
