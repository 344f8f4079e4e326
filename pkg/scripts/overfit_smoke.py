"""Train the miniature network on one synthetic clip and report the loss reduction.

    python3 scripts/overfit_smoke.py --channels 32 --lr0 2e-3 --lr-late 1e-4 --out /tmp/overfit
"""

import argparse
import sys

from hgsep.smoke import OverfitSettings, run_overfit


def main():
    d = OverfitSettings()
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--channels", type=int, default=d.channels)
    p.add_argument("--stacks", type=int, default=d.stacks)
    p.add_argument("--lr0", type=float, default=d.lr0)
    p.add_argument("--lr-late", type=float, default=d.lr_late)
    p.add_argument("--iterations", type=int, default=d.iterations)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--clip-seed", type=int, default=d.clip_seed)
    p.add_argument("--out", help="directory for loss.csv and the final checkpoint")
    a = p.parse_args()
    settings = OverfitSettings(a.channels, a.stacks, a.lr0, a.lr_late, a.iterations, a.seed, a.clip_seed)

    def progress(step, value):
        if step % 100 == 0:
            print(f"step {step:5d}  loss {value:10.3f}", file=sys.stderr)

    r = run_overfit(settings, a.out, progress)
    print(f"first loss   {r.first_loss:.3f}")
    print(f"last loss    {r.last_loss:.3f}  (modules {', '.join(f'{m:.3f}' for m in r.last_modules)})")
    print(f"reduction    {r.reduction:.1f}x")
    print(f"wall time    {r.seconds:.1f} s")


if __name__ == "__main__":
    main()
