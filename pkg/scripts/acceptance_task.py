"""Full method vs BADA-only on the default synthetic task, one row per seed."""
import argparse
import json
from pathlib import Path

import numpy as np

from uosda import pipeline
from uosda.config import RunConfig, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="run config (default: built-in acceptance task)")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", type=Path, help="write a JSON summary here")
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else RunConfig()

    rows = []
    for variant, make in (("full", lambda c: c), ("bada", pipeline.bada_only)):
        for s in args.seeds:
            r = pipeline.run(make(pipeline.with_seed(cfg, s))).report
            rows.append({"variant": variant, "seed": s, "os": r.os, "os_star": r.os_star, "unk": r.unk})
            print(f"{variant:5s} seed {s}: OS {r.os:.4f}  OS* {r.os_star:.4f}  UNK {r.unk:.4f}")
    for variant in ("full", "bada"):
        sel = [r for r in rows if r["variant"] == variant]
        print(f"{variant:5s} mean: OS {np.mean([r['os'] for r in sel]):.4f}  UNK {np.mean([r['unk'] for r in sel]):.4f}")
    if args.out:
        args.out.write_text(json.dumps(rows, indent=1) + "\n")


if __name__ == "__main__":
    main()
