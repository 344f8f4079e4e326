"""NSDR of ideal ratio masks pushed through the inference pipeline (an upper bound for any mask estimator).

    python3 scripts/oracle_separation.py --seconds 5 --rate 44100
"""

import argparse

from hgsep.dsp import DSPConfig
from hgsep.smoke import oracle_nsdr


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seconds", type=float, default=3.0)
    p.add_argument("--rate", type=int, default=16000, help="input sample rate")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--window-size", type=int, default=1024)
    p.add_argument("--hop", type=int, default=256)
    p.add_argument("--filter-len", type=int, default=512)
    a = p.parse_args()
    dsp = DSPConfig(8000, a.window_size, a.hop)
    for seed in a.seeds:
        scores = oracle_nsdr(a.seconds, a.rate, seed, dsp, a.filter_len)
        print(f"seed {seed}: " + "  ".join(f"{k} {v:6.2f} dB" for k, v in scores.items()))


if __name__ == "__main__":
    main()
