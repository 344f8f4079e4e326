"""Command-line entry point: ``hgsep train | separate | evaluate | inspect-checkpoint``.

Settings come from dataclass defaults, then an optional flat ``key = value``
config file (``--config``), then command-line flags. Every config key has a
flag of the same name with dashes (``batch_size`` -> ``--batch-size``).

Exit codes: 0 ok, 1 usage, 2 data, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .bsseval import DecompositionConfig, evaluate_track, summarize
from .container import ContainerError
from .datasets import DatasetError, load_dsd100, load_mir1k, prepare_all
from .dsp import DSPConfig, WavError, analyse, read_wav, save_spectrogram_png, to_magspec, write_wav
from .inference import ideal_ratio_masks, network_predictor, oracle_predictor, separate
from .model import NetworkConfig, load_checkpoint, param_count
from .training import AdamState, NumericError, TrainConfig, train

log = logging.getLogger("hgsep")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

SOURCE_NAMES = {
    ("mir1k", "voice"): ["voice", "accompaniment"],
    ("dsd100", "voice"): ["vocals", "accompaniment"],
    ("dsd100", "4source"): ["bass", "drums", "other", "vocals"],
}


class UsageError(Exception):
    pass


def _opt(default, help_text, choices=None):
    return field(default=default, metadata={"help": help_text, "choices": choices})


@dataclass
class RunConfig:
    # data
    dataset: str = _opt("mir1k", "dataset layout", ("mir1k", "dsd100"))
    data_root: str = _opt("", "dataset root directory")
    task: str = _opt("voice", "voice (2 sources) or 4source (DSD100 only)", ("voice", "4source"))
    mir1k_voice_channel: str = _opt("right", "MIR-1K channel holding the voice", ("left", "right"))
    cache_dir: str = _opt("", "spectrogram cache directory; empty falls back to $HGSEP_CACHE_DIR")
    # signal processing
    sample_rate: int = _opt(8000, "working sample rate in Hz")
    window_size: int = _opt(1024, "STFT window length")
    hop: int = _opt(256, "STFT hop length")
    # network
    stacks: int = _opt(4, "number of hourglass modules")
    channels: int = _opt(256, "trunk width; stem widths scale with it")
    excerpt_frames: int = _opt(64, "frames per network input")
    # optimisation
    iterations: int = _opt(15000, "total optimisation steps")
    batch_size: int = _opt(4, "excerpts per step")
    lr0: float = _opt(1e-4, "initial learning rate")
    lr_late: float = _opt(2e-5, "learning rate after the decay point")
    decay_point: float = _opt(0.8, "fraction of iterations after which lr_late applies")
    seed: int = _opt(0, "seed for initialisation and batch sampling")
    checkpoint_every: int = _opt(1000, "checkpoint cadence in steps (0 = final only)")
    # runtime
    out_dir: str = _opt("run", "output directory")
    threads: int = _opt(0, "cap on BLAS / worker threads (0 = library default)")

    def dsp(self) -> DSPConfig:
        return DSPConfig(self.sample_rate, self.window_size, self.hop)

    def source_names(self) -> list[str]:
        try:
            return SOURCE_NAMES[(self.dataset, self.task)]
        except KeyError:
            raise UsageError(f"task {self.task!r} is not available for dataset {self.dataset!r}") from None

    def network(self) -> NetworkConfig:
        return NetworkConfig.scaled(self.channels, num_stacks=self.stacks, num_sources=len(self.source_names()),
                                    input_shape=(self.window_size // 2, self.excerpt_frames))

    def training(self) -> TrainConfig:
        return TrainConfig(lr0=self.lr0, lr_late=self.lr_late, decay_point=self.decay_point,
                           batch_size=self.batch_size, iterations=self.iterations, seed=self.seed,
                           checkpoint_every=self.checkpoint_every, excerpt_frames=self.excerpt_frames)

    def dump(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


CONFIG_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{origin}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_TYPES:
            raise UsageError(f"{origin}:{lineno}: unknown config key {key!r}")
        out[key] = _convert(key, value)
    return out


def _convert(key: str, value: str):
    try:
        return CONFIG_TYPES[key](value)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {value!r} as {CONFIG_TYPES[key].__name__}") from None


def build_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} not found")
        values.update(parse_config_text(path.read_text(), str(path)))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    cfg = RunConfig(**values)
    for f in fields(RunConfig):
        choices = f.metadata.get("choices")
        if choices and getattr(cfg, f.name) not in choices:
            raise UsageError(f"{f.name} must be one of {', '.join(choices)}")
    return cfg


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser, only: Optional[Sequence[str]] = None) -> None:
    p.add_argument("--config", help="flat key = value config file")
    for f in fields(RunConfig):
        if only is not None and f.name not in only:
            continue
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, type=CONFIG_TYPES[f.name], default=None,
                       choices=f.metadata.get("choices"), help=f"{f.metadata['help']} (default: {f.default})")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hgsep", description="Stacked hourglass source separation")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a network on a dataset")
    _add_config_flags(p)
    p.add_argument("--resume", help="continue from this checkpoint")

    p = sub.add_parser("separate", help="separate WAV files with a trained checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("inputs", nargs="+", help="input WAV files")
    p.add_argument("--out-dir", dest="out_dir", help="output directory (default: next to each input)")
    p.add_argument("--dump-spectrograms", action="store_true", help="also write log-magnitude PNGs")
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("evaluate", help="separate a test split and score it with BSS-EVAL")
    _add_config_flags(p, ["dataset", "data_root", "task", "mir1k_voice_channel", "sample_rate", "window_size",
                          "hop", "excerpt_frames", "out_dir", "threads"])
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="trained checkpoint")
    src.add_argument("--oracle-masks", action="store_true", help="use ideal ratio masks from the references")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--filter-len", type=int, default=512, help="BSS-EVAL projection filter length")

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint's configuration")
    p.add_argument("checkpoint")
    return parser


# ---------------------------------------------------------------------------
# commands


def load_records(cfg: RunConfig, split: str):
    if not cfg.data_root:
        raise UsageError("--data-root is required")
    if cfg.dataset == "mir1k":
        cfg.source_names()
        return load_mir1k(cfg.data_root, split, cfg.mir1k_voice_channel)
    return load_dsd100(cfg.data_root, split, cfg.task)


def cmd_train(args) -> int:
    cfg = build_config(args)
    net, tcfg, dsp = cfg.network(), cfg.training(), cfg.dsp()
    names = cfg.source_names()
    out = Path(cfg.out_dir)
    params = optimizer = None
    start = 0
    if args.resume:
        ck = load_checkpoint(args.resume)
        if ck.config != net:
            raise UsageError(f"checkpoint network {ck.config} differs from the configured one {net}")
        if ck.step >= tcfg.iterations:
            log.info("checkpoint is at step %d of %d; nothing left to do", ck.step, tcfg.iterations)
            return EXIT_OK
        params, start = ck.params, ck.step
        optimizer = AdamState.from_dict(ck.optimizer) if ck.optimizer else None
    with _threads(cfg.threads):
        records = load_records(cfg, "train")
        if not records:
            raise DatasetError(f"no training clips under {cfg.data_root}")
        log.info("preparing %d clips", len(records))
        data = prepare_all(records, dsp, cfg.cache_dir or None)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.dump())
        meta = {"source_names": names, "dsp": asdict(dsp), "run_config": asdict(cfg)}
        log.info("training %d parameters for %d steps", param_count(net), tcfg.iterations - start)

        def progress(step, value):
            if step % 50 == 0 or step == tcfg.iterations - 1:
                log.info("step %d loss %.4f", step, value)

        train(data, net, tcfg, out, params=params, optimizer=optimizer, start_step=start, meta=meta, progress=progress)
    log.info("done; checkpoints in %s", out)
    return EXIT_OK


def _checkpoint_setup(path):
    ck = load_checkpoint(path)
    extra = ck.meta
    names = extra.get("source_names") or [f"source{i + 1}" for i in range(ck.config.num_sources)]
    dsp = DSPConfig(**extra["dsp"]) if "dsp" in extra else DSPConfig()
    if ck.config.input_shape[0] != dsp.n_bins:
        raise ValueError(f"{path}: network expects {ck.config.input_shape[0]} bins, DSP settings give {dsp.n_bins}")
    return ck, names, dsp


def cmd_separate(args) -> int:
    ck, names, dsp = _checkpoint_setup(args.checkpoint)
    predict = network_predictor(ck.params, ck.config)
    with _threads(args.threads or 0):
        for inp in args.inputs:
            inp = Path(inp)
            out_dir = Path(args.out_dir) if args.out_dir else inp.parent
            out_dir.mkdir(parents=True, exist_ok=True)
            clip = read_wav(inp)
            res = separate(clip, predict, dsp, names, ck.config.input_shape[1])
            for name, est in res.sources.items():
                write_wav(out_dir / f"{inp.stem}.{name}.wav", est)
            if args.dump_spectrograms:
                save_spectrogram_png(out_dir / f"{inp.stem}.mixture.png", res.mixture.denormalized())
                for name, mag in zip(names, res.magnitudes):
                    save_spectrogram_png(out_dir / f"{inp.stem}.{name}.png", mag)
            log.info("%s -> %d sources in %s", inp, len(names), out_dir)
    return EXIT_OK


EVAL_FIELDS = ["track", "source", "sdr", "sir", "sar", "nsdr", "length_samples"]


def cmd_evaluate(args) -> int:
    cfg = build_config(args)
    if args.checkpoint:
        ck, names, dsp = _checkpoint_setup(args.checkpoint)
        width = ck.config.input_shape[1]
        predictor = network_predictor(ck.params, ck.config)
    else:
        names, dsp, width, predictor = cfg.source_names(), cfg.dsp(), cfg.excerpt_frames, None
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    decomp = DecompositionConfig(filter_len=args.filter_len)
    results, failed = [], []
    with _threads(cfg.threads):
        records = load_records(cfg, args.split)
        if not records:
            raise DatasetError(f"no {args.split} clips under {cfg.data_root}")
        for rec in records:
            try:
                if rec.source_names != names:
                    raise ValueError(f"record sources {rec.source_names} differ from model sources {names}")
                predict = predictor or _oracle_for(rec, dsp)
                res = separate(rec.mixture, predict, dsp, names, width)
                estimates = {n: res.sources[n].samples for n in names}
                refs = {n: rec.sources[n].samples for n in names}
                rows = evaluate_track(rec.clip_id, estimates, refs, rec.mixture.samples, decomp)
            except (ValueError, WavError, np.linalg.LinAlgError) as err:
                log.error("track %s failed: %s", rec.clip_id, err)
                failed.append(rec.clip_id)
                continue
            results.extend(rows)
            log.info("%s: %s", rec.clip_id, ", ".join(f"{r.source} NSDR {r.nsdr:.2f} dB" for r in rows))
    with open(out / "evaluation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_FIELDS)
        for r in results:
            w.writerow([r.track, r.source, repr(r.sdr), repr(r.sir), repr(r.sar), repr(r.nsdr), r.length])
    summary = {"sources": summarize(results) if results else {}, "tracks": len(records), "failed": failed}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for name, s in summary["sources"].items():
        log.info("%s: GNSDR %.2f  GSIR %.2f  GSAR %.2f  median SDR %.2f dB",
                 name, s["gnsdr"], s["gsir"], s["gsar"], s["median_sdr"])
    return EXIT_DATA if failed else EXIT_OK


def _oracle_for(rec, dsp: DSPConfig):
    mix, sources = to_magspec(analyse(rec.mixture, dsp), [analyse(c, dsp) for c in rec.sources.values()])
    return oracle_predictor(ideal_ratio_masks(mix, sources))


def cmd_inspect(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    info = {
        "step": ck.step,
        "network": ck.config.to_dict(),
        "parameters": param_count(ck.config),
        "optimizer_step": ck.optimizer["t"] if ck.optimizer else None,
        "meta": ck.meta,
    }
    print(json.dumps(info, indent=2))
    return EXIT_OK


def _threads(n: int):
    return threadpool_limits(limits=n) if n and n > 0 else nullcontext()


COMMANDS = {"train": cmd_train, "separate": cmd_separate, "evaluate": cmd_evaluate, "inspect-checkpoint": cmd_inspect}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"hgsep: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        log.error("%s", err)
        return EXIT_USAGE
    except NumericError as err:
        log.error("numeric failure: %s", err)
        return EXIT_NUMERIC
    except (DatasetError, WavError, ContainerError, FileNotFoundError, ValueError) as err:
        log.error("%s", err)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
