"""Empirical losses of the open-set minimax game and confident-sample selection.

Every loss comes as a value function plus a ``*_grad`` companion returning the
gradient with respect to the probabilities it consumes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Prediction
from .numkernel import PROB_CLAMP

LN2 = float(np.log(2.0))


class DomainContractError(ValueError):
    pass


@dataclass
class OsdaHyper:
    alpha: float = 1.1
    eps: float = 0.0
    conf_threshold: float = 0.9
    grl_lambda: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not self.eps >= 0:
            raise ValueError("eps must be >= 0")
        if not 0 < self.conf_threshold < 1:
            raise ValueError("conf_threshold must lie in (0, 1)")
        if not self.grl_lambda >= 0:
            raise ValueError("grl_lambda must be >= 0")


@dataclass
class LossBreakdown:
    l_cls: float
    l_badv: float
    delta_eps: float
    l_dadv: float
    l_d: float
    n_known_conf: int
    n_unknown_conf: int

    def values(self) -> tuple:
        return (self.l_cls, self.l_badv, self.delta_eps, self.l_dadv, self.l_d)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values())))


def _clamped_log(p):
    return np.log(np.maximum(p, PROB_CLAMP))


def _dlog(p):
    """d/dp of the clamped log; zero where the clamp is active."""
    p = np.asarray(p, dtype=np.float64)
    return np.where(p > PROB_CLAMP, 1.0 / np.maximum(p, PROB_CLAMP), 0.0)


# -- source classification ----------------------------------------------------

def _check_source_labels(probs, labels):
    K = probs.shape[1] - 1
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (probs.shape[0],):
        raise ValueError(f"{labels.shape[0]} labels for {probs.shape[0]} rows")
    if np.any(labels >= K) or np.any(labels < 0):
        raise DomainContractError(f"source labels must lie in 0..{K - 1}; the unknown class {K} never occurs in source")
    return labels


def source_cls_loss(probs, labels) -> float:
    """Mean cross-entropy of known-class source labels."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = _check_source_labels(probs, labels)
    if probs.shape[0] == 0:
        return 0.0
    return float(-_clamped_log(probs[np.arange(len(labels)), labels]).mean())


def source_cls_grad(probs, labels) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    labels = _check_source_labels(probs, labels)
    g = np.zeros_like(probs)
    rows = np.arange(len(labels))
    g[rows, labels] = -_dlog(probs[rows, labels]) / max(len(labels), 1)
    return g


# -- binary adversarial loss --------------------------------------------------

def binary_adv_loss(probs_target) -> float:
    """Binary cross-entropy of the unknown-class probability against target 1/2.

    Minimised (value ln 2) when every unknown probability equals 0.5.
    """
    p = np.asarray(probs_target, dtype=np.float64)[:, -1]
    return float(-(_clamped_log(p) + _clamped_log(1.0 - p)).sum() / (2 * len(p)))


def binary_adv_grad(probs_target) -> np.ndarray:
    probs_target = np.asarray(probs_target, dtype=np.float64)
    p = probs_target[:, -1]
    g = np.zeros_like(probs_target)
    g[:, -1] = -(_dlog(p) - _dlog(1.0 - p)) / (2 * len(p))
    return g


# -- epsilon open set difference ----------------------------------------------

def _unknown_mse(probs):
    target = np.zeros(probs.shape[1])
    target[-1] = 1.0
    R = probs - target
    return 0.5 * (R * R).sum(axis=1), R


def open_set_diff(probs_src, probs_tgt, alpha: float) -> float:
    """Unfloored difference: alpha * mean target l2-to-unknown minus mean source l2-to-unknown."""
    ls, _ = _unknown_mse(np.asarray(probs_src, dtype=np.float64))
    lt, _ = _unknown_mse(np.asarray(probs_tgt, dtype=np.float64))
    return float(alpha * lt.mean() - ls.mean())


def eps_open_set_diff(probs_src, probs_tgt, hyper: OsdaHyper) -> float:
    return max(-hyper.eps, open_set_diff(probs_src, probs_tgt, hyper.alpha))


def open_set_diff_grad(probs_src, probs_tgt, alpha: float):
    """Gradients ``(dsrc, dtgt)`` of the unfloored difference."""
    _, Rs = _unknown_mse(np.asarray(probs_src, dtype=np.float64))
    _, Rt = _unknown_mse(np.asarray(probs_tgt, dtype=np.float64))
    return -Rs / Rs.shape[0], alpha * Rt / Rt.shape[0]


def eps_open_set_diff_grad(probs_src, probs_tgt, hyper: OsdaHyper):
    # subgradient 0 on the floor
    if open_set_diff(probs_src, probs_tgt, hyper.alpha) < -hyper.eps:
        return np.zeros_like(np.asarray(probs_src, float)), np.zeros_like(np.asarray(probs_tgt, float))
    return open_set_diff_grad(probs_src, probs_tgt, hyper.alpha)


# -- confident target selection -----------------------------------------------

def select_confident(pred: Prediction, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices of target rows confidently predicted known, and confidently predicted unknown."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    K = pred.probs.shape[1] - 1
    arg = pred.argmax
    sure = pred.confidence >= threshold
    return np.flatnonzero(sure & (arg < K)), np.flatnonzero(sure & (arg == K))


# -- discriminator losses -----------------------------------------------------

def cond_adv_loss(d_src, d_tgt) -> float:
    """-mean log D(source) - mean log(1 - D(target)); zero when the target set is empty."""
    d_src = np.asarray(d_src, dtype=np.float64)
    d_tgt = np.asarray(d_tgt, dtype=np.float64)
    if len(d_tgt) == 0 or len(d_src) == 0:
        return 0.0
    return float(-_clamped_log(d_src).mean() - _clamped_log(1.0 - d_tgt).mean())


def cond_adv_grad(d_src, d_tgt):
    d_src = np.asarray(d_src, dtype=np.float64)
    d_tgt = np.asarray(d_tgt, dtype=np.float64)
    if len(d_tgt) == 0 or len(d_src) == 0:
        return np.zeros_like(d_src), np.zeros_like(d_tgt)
    return -_dlog(d_src) / len(d_src), _dlog(1.0 - d_tgt) / len(d_tgt)


# the push-away loss has the same form, evaluated on the confident-unknown set
push_unknown_loss = cond_adv_loss
push_unknown_grad = cond_adv_grad
