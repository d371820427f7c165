"""Command-line harness: gen-data, train, eval, verify-bound, grad-check.

Exit codes: 0 success, 2 config error, 3 numeric abort, 4 bound violation,
5 gradient failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import boundlab
from .config import RunConfig, config_from_dict, load_config
from .datagen import (CheckpointError, Dataset, DatasetParseError, OpenSetTask, SpecError, gen_synthetic,
                      load_checkpoint, load_dataset, save_checkpoint, save_dataset)
from .metrics import evaluate
from .numkernel import layer_gradient_suite
from .pipeline import init_bundle
from .trainer import ConfigError, NumericAbort, gradient_routing_check, routing_fixture, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BOUND, EXIT_GRAD = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1) + "\n")
    return out


def _read_task(data_dir, K: int) -> OpenSetTask:
    d = Path(data_dir)
    src, tgt = load_dataset(d / "source.csv", K), load_dataset(d / "target.csv", K)
    if np.any(src.domains != "src") or np.any(tgt.domains != "tgt"):
        raise DatasetParseError(f"{d}: source.csv must hold only src rows and target.csv only tgt rows")
    if src.dim != tgt.dim:
        raise DatasetParseError(f"{d}: source has {src.dim} features, target has {tgt.dim}")
    return OpenSetTask(src, tgt, K, src.dim)


# -- subcommands ------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _config(args)
    task = gen_synthetic(cfg.synth_spec())
    out = _out_dir(cfg)
    save_dataset(task.source, out / "source.csv")
    save_dataset(task.target, out / "target.csv")
    print(f"wrote {len(task.source)} source and {len(task.target)} target rows to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    task = _read_task(args.data, cfg.data.K) if args.data else gen_synthetic(cfg.synth_spec())
    out = _out_dir(cfg)
    bundle = init_bundle(cfg, task.dim, task.K)
    # target labels are only read by evaluate(), after training
    unlabeled = OpenSetTask(task.source, Dataset(task.target.X, np.zeros(len(task.target), np.int64),
                                                 task.target.domains), task.K, task.dim)
    try:
        bundle, trace = train(unlabeled, bundle, cfg.train_config())
    except NumericAbort as e:
        e.trace.to_csv(out / "trace.csv")
        print(f"numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    trace.to_csv(out / "trace.csv")
    save_checkpoint(bundle, out / "checkpoint.json")
    report = evaluate(bundle, task.target)
    (out / "eval.json").write_text(report.to_json() + "\n")
    unk = "undefined" if report.unk is None else f"{report.unk:.4f}"
    print(f"OS {report.os:.4f}  OS* {report.os_star:.4f}  UNK {unk}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    bundle = load_checkpoint(args.checkpoint)
    path = Path(args.data)
    target = load_dataset(path / "target.csv" if path.is_dir() else path, bundle.K)
    report = evaluate(bundle, target)
    out = _out_dir(cfg)
    (out / "eval.json").write_text(report.to_json() + "\n")
    print(report.to_json())
    return EXIT_OK


def cmd_verify_bound(args) -> int:
    cfg = _config(args)
    v = cfg.verify
    n = v.n_instances if args.n_instances is None else args.n_instances
    m_max = v.m_max if args.m_max is None else args.m_max
    k_max = v.k_max if args.k_max is None else args.k_max
    eps = v.eps if args.eps is None else args.eps
    if n < 0 or m_max < 1 or k_max < 1 or eps < 0:
        raise UsageError("need n_instances >= 0, m_max >= 1, k_max >= 1, eps >= 0")
    summary = boundlab.sweep(n, m_max, k_max, eps, cfg.seed)
    for line in summary.lines():
        print(line)
    if not summary.passed:
        out = _out_dir(cfg)
        boundlab.write_counterexample(summary.first_counterexample, out / "counterexample.json")
        print(f"counterexample written to {out / 'counterexample.json'}", file=sys.stderr)
        return EXIT_BOUND
    return EXIT_OK


def cmd_grad_check(args) -> int:
    cfg = _config(args)
    failed = []
    for kind, rep in layer_gradient_suite(cfg.seed, draws=args.draws).items():
        print(f"layer {kind:14s} max rel err {rep.worst():.3e}")
        failed += [f"{kind}:{b}" for b in rep.failed]
    routing = gradient_routing_check(*routing_fixture(cfg.seed))
    for name, err in routing.fd_rel_err.items():
        print(f"objective block {name:12s} max rel err {err:.3e}")
    for name, ok in {**routing.edges, **routing.probes}.items():
        print(f"routing {name}: {'ok' if ok else 'FAIL'}")
    failed += routing.failures
    if failed:
        print("gradient check failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_GRAD
    return EXIT_OK


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uosda", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON run config (unknown keys rejected)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.set_defaults(fn=fn)
        return p

    add("gen-data", cmd_gen_data, "write source.csv and target.csv")
    p = add("train", cmd_train, "train, then write checkpoint, trace and eval")
    p.add_argument("--data", help="directory with source.csv and target.csv (default: generate from config)")
    p = add("eval", cmd_eval, "score a checkpoint on target data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="target CSV or a directory containing target.csv")
    p = add("verify-bound", cmd_verify_bound, "exhaustive bound sweep over random finite instances")
    p.add_argument("--n-instances", type=int)
    p.add_argument("--m-max", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--eps", type=float)
    p = add("grad-check", cmd_grad_check, "finite-difference checks of layers and player objectives")
    p.add_argument("--draws", type=int, default=100, help="random parameter draws per layer kind")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, SpecError, DatasetParseError, CheckpointError, UsageError, OSError,
            boundlab.SizeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
