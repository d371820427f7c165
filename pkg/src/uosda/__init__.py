"""Open-set domain adaptation lab: a from-scratch minimax trainer and an exact bound verifier."""
from .boundlab import DiscreteInstance, check_target_bound, sweep
from .config import RunConfig, load_config
from .datagen import OpenSetTask, SynthSpec, gen_synthetic
from .metrics import EvalReport, evaluate
from .model import ModelBundle, build_bundle, forward_gc
from .objectives import LossBreakdown, OsdaHyper
from .trainer import TrainConfig, TrainTrace, train

__all__ = [
    "DiscreteInstance", "check_target_bound", "sweep", "RunConfig", "load_config", "OpenSetTask",
    "SynthSpec", "gen_synthetic", "EvalReport", "evaluate", "ModelBundle", "build_bundle",
    "forward_gc", "LossBreakdown", "OsdaHyper", "TrainConfig", "TrainTrace", "train",
]
