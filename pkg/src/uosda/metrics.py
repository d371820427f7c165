"""Open-set accuracies: OS over all K+1 classes, OS* over the K known ones, UNK."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .model import ModelBundle, forward_gc


@dataclass
class EvalReport:
    confusion: np.ndarray
    per_class_acc: list[float | None]
    os: float
    os_star: float
    unk: float | None
    undefined_classes: list[int] = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.confusion.shape[0] - 1

    @property
    def nonstandard(self) -> bool:
        """True when empty classes were dropped from the averages."""
        return bool(self.undefined_classes)

    def to_dict(self) -> dict:
        doc = {
            "os": self.os,
            "os_star": self.os_star,
            "unk": self.unk,
            "per_class_acc": self.per_class_acc,
            "confusion": self.confusion.tolist(),
        }
        if self.undefined_classes:
            doc["undefined_classes"] = self.undefined_classes
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def confusion_matrix(labels, preds, n_classes: int) -> np.ndarray:
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (np.asarray(labels, dtype=np.int64), np.asarray(preds, dtype=np.int64)), 1)
    return conf


def report_from_confusion(confusion) -> EvalReport:
    """Macro accuracies from a count table (rows are true classes, last row unknown).

    Per-class accuracies are exact fractions of integer counts; each average is
    divided once at the end. Classes with no samples are reported as ``None``
    and left out of the averages.
    """
    conf = np.asarray(confusion, dtype=np.int64)
    K = conf.shape[0] - 1
    fracs: list[Fraction | None] = []
    for c in range(K + 1):
        total = int(conf[c].sum())
        fracs.append(Fraction(int(conf[c, c]), total) if total else None)
    undefined = [c for c, f in enumerate(fracs) if f is None]
    known = [f for f in fracs[:K] if f is not None]
    defined = [f for f in fracs if f is not None]
    os_ = float(sum(defined, Fraction(0)) / len(defined)) if defined else float("nan")
    os_star = float(sum(known, Fraction(0)) / len(known)) if known else float("nan")
    unk = None if fracs[K] is None else float(fracs[K])
    return EvalReport(conf, [None if f is None else float(f) for f in fracs], os_, os_star, unk, undefined)


def evaluate(bundle: ModelBundle, target) -> EvalReport:
    """Score argmax predictions of C(G(x)) against the target labels."""
    preds = forward_gc(bundle, target.X).argmax
    return report_from_confusion(confusion_matrix(target.labels, preds, bundle.K + 1))
