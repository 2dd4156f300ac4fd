#!/usr/bin/env python3
"""Run the ablation harness on a scene directory and write a CSV.

Covers the three configuration axes (aggregator variant, render stage
count, fine-tuning regime) with a shared pretrained starting point per
variant.  All sizes default to the small study configuration; expect a
few minutes of CPU per variant at 48x48.
"""

import argparse
import sys
import time

from viewsynth.ablation import AblationConfig, run_ablations


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scene_dir")
    ap.add_argument("--out", default="ablations.csv", help="CSV path")
    ap.add_argument("--pretrain-iters", type=int, default=200)
    ap.add_argument("--finetune-iters", type=int, default=120)
    ap.add_argument("--lr", type=float, default=3e-4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    cfg = AblationConfig(pretrain_iterations=args.pretrain_iters,
                         finetune_iterations=args.finetune_iters,
                         lr=args.lr, seed=args.seed)
    t0 = time.monotonic()
    rows = run_ablations(args.scene_dir, out_csv=args.out, cfg=cfg, log=print)
    minutes = (time.monotonic() - t0) / 60.0
    print(f"{len(rows)} rows -> {args.out} ({minutes:.1f} min)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
