"""Write synthetic MIR-1K / DSD100-style fixtures and, optionally, an identity-mask checkpoint.

    python3 scripts/make_fixture.py mir1k /tmp/mir --clips abjones_1_01 amy_1_01 bobon_1_01
    python3 scripts/make_fixture.py dsd100 /tmp/dsd --songs 2
    python3 scripts/make_fixture.py identity /tmp/identity.ckpt --window-size 128 --channels 16 --stacks 2
"""

import argparse
from dataclasses import asdict

from hgsep.dsp import DSPConfig
from hgsep.model import Checkpoint, NetworkConfig, identity_params, save_checkpoint
from hgsep.synthetic import write_dsd100_fixture, write_mir1k_fixture


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("kind", choices=("mir1k", "dsd100", "identity"))
    p.add_argument("path")
    p.add_argument("--clips", nargs="+", default=["abjones_1_01", "amy_1_01", "annar_1_01", "bobon_1_01"])
    p.add_argument("--songs", type=int, default=2, help="songs per DSD100 split")
    p.add_argument("--seconds", type=float, default=2.0)
    p.add_argument("--rate", type=int, default=16000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window-size", type=int, default=1024)
    p.add_argument("--hop", type=int, default=256)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--stacks", type=int, default=1)
    args = p.parse_args()

    if args.kind == "mir1k":
        write_mir1k_fixture(args.path, args.clips, args.seconds, args.rate, args.seed)
    elif args.kind == "dsd100":
        songs = {"Dev": [f"{i:03d} - dev" for i in range(args.songs)],
                 "Test": [f"{i + args.songs:03d} - test" for i in range(args.songs)]}
        write_dsd100_fixture(args.path, songs, args.seconds, args.rate, args.seed)
    else:
        dsp = DSPConfig(8000, args.window_size, args.hop)
        net = NetworkConfig.scaled(args.channels, num_stacks=args.stacks, input_shape=(dsp.n_bins, 64))
        meta = {"source_names": ["voice", "accompaniment"], "dsp": asdict(dsp), "debug": "identity masks"}
        save_checkpoint(args.path, Checkpoint(identity_params(net), net, 0, meta))
    print(args.path)


if __name__ == "__main__":
    main()
