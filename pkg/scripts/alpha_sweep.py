"""OS and UNK as the target-term weight alpha varies, mean over seeds."""
import argparse
from dataclasses import replace

import numpy as np

from uosda import pipeline
from uosda.config import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alphas", type=float, nargs="+", default=[1.0, 1.1, 1.2, 1.3, 1.4])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=200)
    args = ap.parse_args()
    base = RunConfig()
    base = replace(base, train=replace(base.train, epochs=args.epochs))
    print("alpha     OS    UNK")
    for a in args.alphas:
        cfg = replace(base, hyper=replace(base.hyper, alpha=a))
        reps = [pipeline.run(pipeline.with_seed(cfg, s)).report for s in args.seeds]
        print(f"{a:5.2f}  {np.mean([r.os for r in reps]):.4f}  {np.mean([r.unk for r in reps]):.4f}")


if __name__ == "__main__":
    main()
