"""MIR-1K and DSD100 ingestion, splits, and cached spectrogram preparation."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .container import ContainerError, read_container, write_container
from .dsp import AudioClip, DSPConfig, MagSpec, WavError, analyse, read_wav, to_magspec

logger = logging.getLogger(__name__)

MIR1K_TRAIN_SINGERS = ("abjones", "amy")
DSD100_STEMS = ("bass", "drums", "other", "vocals")
DSD100_SPLITS = {"train": "Dev", "test": "Test"}
CACHE_ENV = "HGSEP_CACHE_DIR"


class DatasetError(ValueError):
    """A dataset root or record is missing or malformed."""


@dataclass
class ClipRecord:
    clip_id: str
    sources: dict  # name -> mono AudioClip, in network channel order
    mixture: AudioClip
    paths: list = field(default_factory=list)

    def __post_init__(self):
        for name, clip in self.sources.items():
            if len(clip) != len(self.mixture) or clip.sample_rate != self.mixture.sample_rate:
                raise DatasetError(
                    f"clip {self.clip_id!r}: source {name!r} has {len(clip)} samples at {clip.sample_rate} Hz, "
                    f"mixture has {len(self.mixture)} at {self.mixture.sample_rate} Hz"
                )

    @property
    def source_names(self) -> list[str]:
        return list(self.sources)


def _check_root(root) -> Path:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    return root


# ---------------------------------------------------------------------------
# MIR-1K


def load_mir1k(root, split: str = "train", voice_channel: str = "right") -> list[ClipRecord]:
    """Stereo clips with accompaniment and voice on separate channels.

    Training clips are those sung by abjones or amy; everything else is test.
    Sources and mixture are scaled by 0.5 so mixture == voice + accompaniment.
    """
    root = _check_root(root)
    if (root / "Wavfile").is_dir():
        root = root / "Wavfile"
    files = sorted(root.glob("*.wav"))
    if not files:
        raise DatasetError(f"no WAV files under {root}")
    if split not in ("train", "test", "all"):
        raise ValueError(f"unknown split {split!r}")
    if voice_channel not in ("left", "right"):
        raise ValueError(f"voice channel must be left or right, got {voice_channel!r}")
    v_idx = 1 if voice_channel == "right" else 0
    records = []
    for path in files:
        cid = path.stem
        is_train = cid.split("_")[0] in MIR1K_TRAIN_SINGERS
        if split == "train" and not is_train or split == "test" and is_train:
            continue
        clip = read_wav(path)
        if clip.num_channels != 2:
            logger.warning("skipping %s: expected stereo, found %d channel(s)", path, clip.num_channels)
            continue
        voice = 0.5 * clip.samples[v_idx]
        acc = 0.5 * clip.samples[1 - v_idx]
        mix = voice + acc
        sources = {"voice": AudioClip(voice, clip.sample_rate), "accompaniment": AudioClip(acc, clip.sample_rate)}
        records.append(ClipRecord(cid, sources, AudioClip(mix, clip.sample_rate), [str(path)]))
    return records


# ---------------------------------------------------------------------------
# DSD100


def load_dsd100(root, split: str = "train", task: str = "4source") -> list[ClipRecord]:
    """Sources/{Dev,Test}/<song>/<stem>.wav plus Mixtures/{Dev,Test}/<song>/mixture.wav.

    All audio is averaged to mono. ``task="voice"`` folds bass, drums and
    other into one accompaniment source. When a mixture file is absent the
    mixture is the sample-wise stem sum.
    """
    root = _check_root(root)
    if task not in ("4source", "voice"):
        raise ValueError(f"unknown DSD100 task {task!r}")
    try:
        folder = DSD100_SPLITS[split]
    except KeyError:
        raise ValueError(f"unknown split {split!r}") from None
    src_dir = root / "Sources" / folder
    if not src_dir.is_dir():
        raise DatasetError(f"missing {src_dir}")
    songs = sorted(p for p in src_dir.iterdir() if p.is_dir())
    if not songs:
        raise DatasetError(f"no songs under {src_dir}")
    records = []
    for song in songs:
        stems = {}
        for stem in DSD100_STEMS:
            path = song / f"{stem}.wav"
            if not path.exists():
                raise DatasetError(f"song {song.name!r}: missing stem file {path.name}")
            stems[stem] = read_wav(path).to_mono()
        rate = stems["vocals"].sample_rate
        n = len(stems["vocals"])
        if any(len(c) != n or c.sample_rate != rate for c in stems.values()):
            raise DatasetError(f"song {song.name!r}: stems differ in length or sample rate")
        if task == "voice":
            acc = stems["bass"].samples + stems["drums"].samples + stems["other"].samples
            sources = {"vocals": stems["vocals"], "accompaniment": AudioClip(acc, rate)}
        else:
            sources = stems
        mix_path = root / "Mixtures" / folder / song.name / "mixture.wav"
        if mix_path.exists():
            mixture = read_wav(mix_path).to_mono()
        else:
            total = stems["bass"].samples + stems["drums"].samples + stems["other"].samples + stems["vocals"].samples
            mixture = AudioClip(total, rate)
        records.append(ClipRecord(song.name, sources, mixture, [str(song)]))
    return records


# ---------------------------------------------------------------------------
# preparation / cache


@dataclass
class PreparedClip:
    clip_id: str
    mixture: MagSpec
    sources: list  # MagSpec per source
    source_names: list


CACHE_VERSION = 1


def cache_key(record: ClipRecord, dsp: DSPConfig) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"v": CACHE_VERSION, "rate": dsp.sample_rate, "win": dsp.window_size, "hop": dsp.hop,
                         "names": record.source_names}).encode())
    for clip in (record.mixture, *record.sources.values()):
        h.update(str(clip.sample_rate).encode())
        h.update(np.ascontiguousarray(clip.samples, dtype="<f8").tobytes())
    return h.hexdigest()


def _magspec_tensors(prefix: str, m: MagSpec) -> dict:
    return {f"{prefix}.magnitude": m.magnitude, f"{prefix}.phase": m.phase, f"{prefix}.nyquist": m.nyquist}


def _magspec_from(tensors: dict, prefix: str, meta: dict) -> MagSpec:
    return MagSpec(
        magnitude=tensors[f"{prefix}.magnitude"],
        phase=tensors[f"{prefix}.phase"],
        norm_factor=meta["norm_factor"],
        nyquist=tensors[f"{prefix}.nyquist"],
        window_size=meta["window_size"],
        hop=meta["hop"],
        sample_rate=meta["sample_rate"],
        length=meta["length"],
    )


def _compute(record: ClipRecord, dsp: DSPConfig) -> PreparedClip:
    mix_spec = analyse(record.mixture, dsp)
    src_specs = [analyse(c, dsp) for c in record.sources.values()]
    mix, sources = to_magspec(mix_spec, src_specs)
    return PreparedClip(record.clip_id, mix, sources, record.source_names)


def prepare_clip(record: ClipRecord, dsp: DSPConfig = DSPConfig(), cache_dir: Optional[os.PathLike] = None) -> PreparedClip:
    """Resample, STFT and normalise a record, caching the result when ``cache_dir`` (or $HGSEP_CACHE_DIR) is set."""
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    if not cache_dir:
        return _compute(record, dsp)
    cache_dir = Path(cache_dir)
    path = cache_dir / f"{cache_key(record, dsp)}.tensors"
    if path.exists():
        try:
            meta, tensors = read_container(path)
            return PreparedClip(
                record.clip_id,
                _magspec_from(tensors, "mixture", meta),
                [_magspec_from(tensors, f"source{i}", meta) for i in range(len(meta["source_names"]))],
                meta["source_names"],
            )
        except (ContainerError, KeyError, ValueError, OSError) as err:
            logger.warning("recomputing corrupt cache entry %s (%s)", path, err)
    prepared = _compute(record, dsp)
    cache_dir.mkdir(parents=True, exist_ok=True)
    tensors = _magspec_tensors("mixture", prepared.mixture)
    for i, s in enumerate(prepared.sources):
        tensors.update(_magspec_tensors(f"source{i}", s))
    m = prepared.mixture
    meta = {"kind": "magspec", "clip_id": record.clip_id, "source_names": prepared.source_names,
            "norm_factor": m.norm_factor, "window_size": m.window_size, "hop": m.hop,
            "sample_rate": m.sample_rate, "length": m.length}
    write_container(path, tensors, meta)
    return prepared


def prepare_all(records, dsp: DSPConfig = DSPConfig(), cache_dir=None) -> list[PreparedClip]:
    out = []
    for r in records:
        try:
            out.append(prepare_clip(r, dsp, cache_dir))
        except (WavError, ValueError) as err:
            raise DatasetError(f"clip {r.clip_id!r}: {err}") from err
    return out
