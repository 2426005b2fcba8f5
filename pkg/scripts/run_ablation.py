"""Five-seed ablation on the default corpus: devel arousal CCC per strategy.

    python3 scripts/run_ablation.py [--seeds 0,1,2,3,4] [--epochs 50] [--out table.tsv]
"""
import argparse

import numpy as np

from graphfuse.acceptance import ABLATION_EPOCHS, ABLATION_STRATEGIES, ablation_runs


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--strategies", default=",".join(ABLATION_STRATEGIES))
    p.add_argument("--epochs", type=int, default=ABLATION_EPOCHS)
    p.add_argument("--out")
    args = p.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    strategies = args.strategies.split(",")
    runs = ablation_runs(seeds, strategies, args.epochs, log=lambda s: print(s, flush=True))
    rows = ["strategy\t" + "\t".join(f"seed{s}" for s in seeds) + "\tmedian"]
    for tok in strategies:
        vals = [runs["scores"][s][tok] for s in seeds]
        rows.append("\t".join([tok] + [f"{v:.4f}" for v in vals] + [f"{np.median(vals):.4f}"]))
    text = "\n".join(rows) + "\n"
    print(text, end="")
    if args.out:
        open(args.out, "w").write(text)


if __name__ == "__main__":
    main()
