import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uosda.datagen import Dataset
from uosda.metrics import confusion_matrix, evaluate, report_from_confusion
from uosda.model import build_bundle


def table_with_acc(accs, n=10):
    K1 = len(accs)
    conf = np.zeros((K1, K1), dtype=np.int64)
    for c, a in enumerate(accs):
        conf[c, c] = round(a * n)
        conf[c, (c + 1) % K1] = n - conf[c, c]
    return conf


def test_perfect_predictor():
    r = report_from_confusion(np.diag([3, 4, 5]))
    assert r.os == r.os_star == r.unk == 1.0


def test_worked_example():
    r = report_from_confusion(table_with_acc([1.0, 0.5, 0.0]))
    assert r.per_class_acc == [1.0, 0.5, 0.0]
    assert r.os == 0.5 and r.os_star == 0.75 and r.unk == 0.0


@pytest.mark.parametrize("K", [1, 2, 5])
def test_constant_unknown_predictor(K):
    labels = np.repeat(np.arange(K + 1), 3)
    r = report_from_confusion(confusion_matrix(labels, np.full_like(labels, K), K + 1))
    assert r.os == pytest.approx(1 / (K + 1), rel=1e-15) and r.unk == 1.0


@given(st.integers(1, 6).flatmap(lambda k: arrays(np.int64, (k + 1, k + 1), elements=st.integers(0, 50))))
def test_identity_holds(conf):
    conf[np.arange(len(conf)), np.arange(len(conf))] += 1
    r = report_from_confusion(conf)
    K = len(conf) - 1
    assert abs((K + 1) * r.os - (K * r.os_star + r.unk)) <= 1e-12


@given(arrays(np.int64, (4, 4), elements=st.integers(1, 30)), st.integers(1, 7))
def test_macro_average_ignores_class_size(conf, scale):
    bigger = conf.copy()
    bigger[1] *= scale
    assert report_from_confusion(bigger).os == pytest.approx(report_from_confusion(conf).os, abs=1e-15)


def test_empty_class_flagged_and_excluded():
    conf = np.array([[2, 0, 0], [0, 0, 0], [1, 0, 1]])
    r = report_from_confusion(conf)
    assert r.undefined_classes == [1] and r.nonstandard
    assert r.per_class_acc[1] is None
    assert r.os == pytest.approx(0.75) and r.os_star == 1.0
    assert "undefined_classes" in r.to_dict()


def test_evaluate_permutation_invariant(rng):
    b = build_bundle(2, 2, rng=rng)
    X, y = rng.normal(size=(40, 2)), rng.integers(0, 3, size=40)
    perm = rng.permutation(40)
    a = evaluate(b, Dataset(X, y, ["tgt"] * 40))
    c = evaluate(b, Dataset(X[perm], y[perm], ["tgt"] * 40))
    assert a.os == c.os and np.array_equal(a.confusion, c.confusion)


def test_json_fields():
    doc = report_from_confusion(np.diag([1, 1])).to_dict()
    assert set(doc) == {"os", "os_star", "unk", "per_class_acc", "confusion"}
