"""Train with and without the floor on the open set difference; write both traces."""
import argparse
from dataclasses import replace
from pathlib import Path

from uosda import pipeline
from uosda.config import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("floor_contrast"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    cfg = pipeline.with_seed(RunConfig(), args.seed)
    for name, c in (("floored", cfg), ("unfloored", replace(cfg, train=replace(cfg.train, floor_delta=False)))):
        res = pipeline.run(c)
        res.trace.to_csv(args.out / f"trace_{name}.csv")
        d = res.trace.column("delta_eps")
        print(f"{name:9s} min delta {d.min():+.4f}  final {d[-1]:+.4f}  negative steps {int((d < 0).sum()):5d}"
              f"  OS {res.report.os:.4f}  UNK {res.report.unk:.4f}")


if __name__ == "__main__":
    main()
