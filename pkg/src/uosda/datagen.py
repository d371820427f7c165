"""Synthetic open-set shift tasks, CSV datasets and JSON checkpoints."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelBundle
from .numkernel import DimensionError, LayerSpec, Network

CKPT_FORMAT = "uosda-ckpt-v1"
DOMAINS = ("src", "tgt")


class SpecError(ValueError):
    pass


class DatasetParseError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    labels: np.ndarray
    domains: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise DimensionError(f"features must be a 2-d matrix, got shape {self.X.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.domains = np.asarray(self.domains, dtype="<U3")
        if not (self.X.shape[0] == len(self.labels) == len(self.domains)):
            raise DimensionError("X, labels and domains differ in length")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.domains, other.domains)
        )


@dataclass
class OpenSetTask:
    source: Dataset
    target: Dataset
    K: int
    dim: int

    def __post_init__(self):
        if np.any(self.source.labels >= self.K):
            raise SpecError("source contains the unknown label")


@dataclass
class SynthSpec:
    K: int = 3
    unknown_modes: int = 2
    dim: int = 2
    shift: float | list[float] = 1.5
    spread: float = 0.5
    n_src: int = 2000
    n_tgt: int = 2000
    pi_unknown: float = 0.3
    seed: int = 0
    radius: float = 3.0

    def validate(self) -> None:
        if self.K < 1 or self.unknown_modes < 0 or self.dim < 1:
            raise SpecError("need K >= 1, unknown_modes >= 0, dim >= 1")
        if not self.spread > 0:
            raise SpecError("spread must be > 0")
        if self.n_src < 0 or self.n_tgt < 0:
            raise SpecError("sample counts must be >= 0")
        if not 0 <= self.pi_unknown < 1:
            raise SpecError("pi_unknown must lie in [0, 1)")
        n_unk = self.pi_unknown * self.n_tgt
        if self.unknown_modes > 0 and 0 < n_unk < 1:
            raise SpecError(f"pi_unknown * n_tgt = {n_unk} < 1: no room for an unknown sample")
        if self.unknown_modes == 0 and self.pi_unknown > 0:
            raise SpecError("pi_unknown > 0 needs at least one unknown mode")
        if np.ndim(self.shift) == 1 and len(self.shift) != self.dim:
            raise SpecError(f"shift vector has {len(self.shift)} entries, dim is {self.dim}")

    def shift_vector(self) -> np.ndarray:
        if np.ndim(self.shift) == 0:
            return float(self.shift) * np.ones(self.dim) / np.sqrt(self.dim)
        return np.asarray(self.shift, dtype=np.float64)


def mode_centers(spec: SynthSpec) -> np.ndarray:
    """K known centres followed by the unknown ones, evenly spaced on a circle in the first two axes."""
    n = spec.K + spec.unknown_modes
    angles = 2 * np.pi * np.arange(n) / n
    centers = np.zeros((n, spec.dim))
    centers[:, 0] = spec.radius * np.cos(angles)
    if spec.dim > 1:
        centers[:, 1] = spec.radius * np.sin(angles)
    return centers


def _draw(rng, centers, modes, spread, dim):
    return centers[modes] + spread * rng.standard_normal((len(modes), dim))


def gen_synthetic(spec: SynthSpec) -> OpenSetTask:
    """Known Gaussian modes in source; shifted copies plus unknown modes in target.

    Modes are filled round-robin so class sizes differ by at most one; the
    unknown share of the target is exactly ``round(pi_unknown * n_tgt)`` rows.
    """
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0])  # data stream of the seed scheme in config.py
    centers = mode_centers(spec)
    K = spec.K

    src_modes = np.arange(spec.n_src) % K
    Xs = _draw(rng, centers, src_modes, spec.spread, spec.dim)

    n_unk = int(round(spec.pi_unknown * spec.n_tgt))
    known_modes = np.arange(spec.n_tgt - n_unk) % K
    unk_modes = K + np.arange(n_unk) % max(spec.unknown_modes, 1)
    t_modes = np.concatenate([known_modes, unk_modes]).astype(np.int64)
    Xt = _draw(rng, centers, t_modes, spec.spread, spec.dim)
    Xt[: len(known_modes)] += spec.shift_vector()
    yt = np.minimum(t_modes, K)

    ps, pt = rng.permutation(spec.n_src), rng.permutation(spec.n_tgt)
    source = Dataset(Xs[ps], src_modes[ps], np.full(spec.n_src, "src"))
    target = Dataset(Xt[pt], yt[pt], np.full(spec.n_tgt, "tgt"))
    return OpenSetTask(source, target, K, spec.dim)


# -- CSV datasets ---------------------------------------------------------------

def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(ds.dim)] + ["label", "domain"])
        for x, y, d in zip(ds.X, ds.labels, ds.domains):
            w.writerow([repr(float(v)) for v in x] + [int(y), str(d)])


def load_dataset(path, K: int | None = None) -> Dataset:
    """Read a dataset CSV; with ``K`` given, labels above K (or K in source rows) are rejected."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetParseError(f"{path}:1: empty file, expected a header")
    header = rows[0]
    dim = len(header) - 2
    if dim < 1 or header[-2:] != ["label", "domain"] or header[:-2] != [f"f{j}" for j in range(dim)]:
        raise DatasetParseError(f"{path}:1: bad header {header}")
    X = np.zeros((len(rows) - 1, dim))
    labels = np.zeros(len(rows) - 1, dtype=np.int64)
    domains = []
    for i, rec in enumerate(rows[1:]):
        line = i + 2
        if len(rec) != dim + 2:
            raise DatasetParseError(f"{path}:{line}: expected {dim + 2} fields, got {len(rec)}")
        try:
            X[i] = [float(v) for v in rec[:dim]]
            labels[i] = int(rec[dim])
        except ValueError as e:
            raise DatasetParseError(f"{path}:{line}: {e}") from None
        if not np.all(np.isfinite(X[i])):
            raise DatasetParseError(f"{path}:{line}: non-finite feature")
        dom = rec[dim + 1]
        if dom not in DOMAINS:
            raise DatasetParseError(f"{path}:{line}: domain must be one of {DOMAINS}, got {dom!r}")
        if labels[i] < 0 or (K is not None and labels[i] > K):
            raise DatasetParseError(f"{path}:{line}: label {labels[i]} outside 0..{K}")
        if K is not None and dom == "src" and labels[i] == K:
            raise DatasetParseError(f"{path}:{line}: source row carries the unknown label {K}")
        domains.append(dom)
    return Dataset(X, labels, np.array(domains, dtype="<U3"))


# -- checkpoints ----------------------------------------------------------------

def _layer_doc(layer: LayerSpec) -> dict:
    doc = {"kind": layer.kind, "in_dim": layer.in_dim, "out_dim": layer.out_dim}
    if layer.kind == "leaky-relu":
        doc["slope"] = layer.slope
    if layer.kind == "grad-reversal":
        doc["lambda"] = layer.lam
    if layer.kind == "dense":
        doc["weight"] = layer.weight.tolist()
        doc["bias"] = layer.bias.tolist()
    return doc


def _layer_from_doc(doc: dict) -> LayerSpec:
    return LayerSpec(
        doc["kind"], int(doc["in_dim"]), int(doc["out_dim"]),
        slope=float(doc.get("slope", 0.01)), lam=float(doc.get("lambda", 1.0)),
        weight=None if "weight" not in doc else np.array(doc["weight"], dtype=np.float64).reshape(doc["out_dim"], doc["in_dim"]),
        bias=None if "bias" not in doc else np.array(doc["bias"], dtype=np.float64),
    )


def checkpoint_dict(bundle: ModelBundle) -> dict:
    return {
        "format": CKPT_FORMAT,
        "K": bundle.K,
        **{name: [_layer_doc(l) for l in net.layers] for name, net in
           (("generator", bundle.generator), ("classifier", bundle.classifier), ("discriminator", bundle.discriminator))},
    }


def save_checkpoint(bundle: ModelBundle, path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(bundle), indent=1) + "\n")


def load_checkpoint(path) -> ModelBundle:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(doc, dict) or doc.get("format") != CKPT_FORMAT:
        raise CheckpointError(f"{path}: expected format {CKPT_FORMAT!r}, got {doc.get('format') if isinstance(doc, dict) else doc!r}")
    try:
        nets = [Network([_layer_from_doc(l) for l in doc[name]]) for name in ("generator", "classifier", "discriminator")]
        return ModelBundle(*nets, K=int(doc["K"]))
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: {e}") from None
