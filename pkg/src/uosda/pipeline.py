"""Config-driven glue: build the task and initial model, train, evaluate."""
from __future__ import annotations

from dataclasses import dataclass, replace

from .config import STREAM_INIT, RunConfig, seed_stream
from .datagen import OpenSetTask, gen_synthetic
from .metrics import EvalReport, evaluate
from .model import ModelBundle, build_bundle
from .trainer import TrainTrace, train


@dataclass
class RunResult:
    initial: ModelBundle
    bundle: ModelBundle
    trace: TrainTrace
    report: EvalReport


def make_task(cfg: RunConfig) -> OpenSetTask:
    return gen_synthetic(cfg.synth_spec())


def init_bundle(cfg: RunConfig, input_dim: int, K: int) -> ModelBundle:
    m = cfg.model
    return build_bundle(
        input_dim, K, feature_dim=m.feature_dim, hidden=m.hidden, disc_hidden=m.disc_hidden,
        slope=m.slope, feature_act=m.feature_act, rng=seed_stream(cfg.seed, STREAM_INIT),
    )


def run(cfg: RunConfig, task: OpenSetTask | None = None) -> RunResult:
    task = task if task is not None else make_task(cfg)
    initial = init_bundle(cfg, task.dim, task.K)
    bundle, trace = train(task, initial, cfg.train_config())
    return RunResult(initial, bundle, trace, evaluate(bundle, task.target))


def bada_only(cfg: RunConfig) -> RunConfig:
    """Same run restricted to the source and binary adversarial losses."""
    return replace(cfg, train=replace(cfg.train, use_delta=False, use_conditional=False))


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, seed=seed)
