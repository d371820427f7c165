"""Minibatch SGD over the three-player open-set game.

Per step the generator descends ``cls - badv + delta_eps - dadv + d``, the
classifier descends ``cls + badv + delta_eps`` and the discriminator descends
``dadv + d``. The two maximisation terms reach the generator through
gradient-reversal layers placed in front of the classifier (binary adversarial
path) and in front of the discriminator (conditional adversarial path).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import objectives as obj
from .datagen import OpenSetTask
from .model import ModelBundle, Prediction, build_bundle, tensor_feature, tensor_feature_backward
from .numkernel import DimensionError, LayerSpec, Network, finite_difference_check

TRACE_HEADER = ["step", "epoch", "l_cls", "l_badv", "delta_eps", "l_dadv", "l_d", "n_known_conf", "n_unknown_conf"]


class ConfigError(ValueError):
    pass


class NumericAbort(RuntimeError):
    def __init__(self, msg, trace: "TrainTrace"):
        super().__init__(msg)
        self.trace = trace


@dataclass
class Terms:
    """Which losses take part in a step. ``floor=False`` swaps in the unfloored difference."""

    cls: bool = True
    badv: bool = True
    delta: bool = True
    dadv: bool = True
    d: bool = True
    floor: bool = True


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    batch: int = 64
    epochs: int = 200
    seed: int = 0
    hyper: obj.OsdaHyper = field(default_factory=obj.OsdaHyper)
    log_every: int = 1
    use_delta: bool = True
    use_conditional: bool = True
    floor_delta: bool = True

    def __post_init__(self):
        if isinstance(self.hyper, dict):
            self.hyper = obj.OsdaHyper(**self.hyper)
        if not self.lr >= 0:
            raise ConfigError("lr must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch < 1 or self.epochs < 0 or self.log_every < 1:
            raise ConfigError("batch and log_every must be >= 1, epochs >= 0")

    def terms(self) -> Terms:
        return Terms(delta=self.use_delta, dadv=self.use_conditional, d=self.use_conditional, floor=self.floor_delta)


@dataclass
class TraceRow:
    step: int
    epoch: int
    losses: obj.LossBreakdown

    def as_list(self) -> list:
        return [self.step, self.epoch, *self.losses.values(), self.losses.n_known_conf, self.losses.n_unknown_conf]


@dataclass
class TrainTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        i = TRACE_HEADER.index(name)
        return np.array([r.as_list()[i] for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for row in self.rows:
                w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row.as_list()])

    @classmethod
    def from_csv(cls, path) -> "TrainTrace":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != TRACE_HEADER:
                raise ValueError(f"unexpected trace header {header}")
            rows = []
            for rec in reader:
                step, epoch = int(rec[0]), int(rec[1])
                vals = [float(v) for v in rec[2:7]]
                rows.append(TraceRow(step, epoch, obj.LossBreakdown(*vals, int(rec[7]), int(rec[8]))))
        return cls(rows)


# -- one step -----------------------------------------------------------------

def _reversed(net: Network, lam: float) -> Network:
    """``net`` preceded by a gradient-reversal layer; shares its parameter arrays."""
    return Network([LayerSpec("grad-reversal", net.in_dim, net.in_dim, lam=lam)] + net.layers)


def step_gradients(bundle: ModelBundle, xs, ys, xt, hyper: obj.OsdaHyper, terms: Terms | None = None):
    """Loss values and per-player gradients for one source/target minibatch pair.

    Returns ``(LossBreakdown, {"G": grads, "C": grads, "D": grads})`` where each
    gradient list aligns with ``Network.params()``.
    """
    terms = terms or Terms()
    G, C, D = bundle.generator, bundle.classifier, bundle.discriminator
    xs = np.asarray(xs, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    n_s = xs.shape[0]
    lam = hyper.grl_lambda

    F, g_tape = G.forward(np.vstack([xs, xt]))
    P, c_tape = C.forward(F)
    Ps, Pt = P[:n_s], P[n_s:]
    dF = np.zeros_like(F)
    grads = {
        "C": [np.zeros_like(p) for p in C.params()],
        "D": [np.zeros_like(p) for p in D.params()],
    }

    def add(player, gs):
        for acc, g in zip(grads[player], gs):
            acc += g

    # classifier-side losses: no reversal
    dP = np.zeros_like(P)
    l_cls = obj.source_cls_loss(Ps, ys)
    if terms.cls:
        dP[:n_s] += obj.source_cls_grad(Ps, ys)
    inner = obj.open_set_diff(Ps, Pt, hyper.alpha)
    delta = max(-hyper.eps, inner) + 0.0 if terms.floor else inner  # + 0.0 folds -0.0
    if terms.delta and (inner >= -hyper.eps or not terms.floor):
        dps, dpt = obj.open_set_diff_grad(Ps, Pt, hyper.alpha)
        dP[:n_s] += dps
        dP[n_s:] += dpt
    dF_c, gC = C.backward(c_tape, dP)
    dF += dF_c
    add("C", gC)

    # binary adversarial loss: reversal between G and C
    l_badv = obj.binary_adv_loss(Pt)
    if terms.badv:
        c_rev = _reversed(C, lam)
        _, tape = c_rev.forward(F[n_s:])
        dFt, gC = c_rev.backward(tape, obj.binary_adv_grad(Pt))
        dF[n_s:] += dFt
        add("C", gC)

    known, unknown = obj.select_confident(Prediction(F[n_s:], Pt), hyper.conf_threshold)
    T = tensor_feature(F, P)
    dT = np.zeros_like(T)
    l_dadv = l_d = 0.0
    # (loss weight on, target rows, network) for the aligning and push-away losses
    for on, rows, net, which in (
        (terms.dadv, known, _reversed(D, lam), "dadv"),
        (terms.d, unknown, D, "d"),
    ):
        if len(rows) == 0:
            continue
        tgt_rows = n_s + rows
        out, tape = net.forward(np.vstack([T[:n_s], T[tgt_rows]]))
        d_src, d_tgt = out[:n_s, 0], out[n_s:, 0]
        value = obj.cond_adv_loss(d_src, d_tgt)
        if which == "dadv":
            l_dadv = value
        else:
            l_d = value
        if not on:
            continue
        gs, gt = obj.cond_adv_grad(d_src, d_tgt)
        dTin, gD = net.backward(tape, np.concatenate([gs, gt])[:, None])
        dT[:n_s] += dTin[:n_s]
        dT[tgt_rows] += dTin[n_s:]
        add("D", gD)

    if np.any(dT):
        dF_t, dP_t = tensor_feature_backward(F, P, dT)
        dF += dF_t
        # the probability factor of the tensor map depends on G through C;
        # C's own parameters take no gradient from the discriminator losses
        _, tape = C.forward(F)
        dF_via_c, _ = C.backward(tape, dP_t)
        dF += dF_via_c

    _, gG = G.backward(g_tape, dF)
    grads["G"] = gG
    losses = obj.LossBreakdown(l_cls, l_badv, delta, l_dadv, l_d, len(known), len(unknown))
    return losses, grads


def player_objectives(losses: obj.LossBreakdown, hyper: obj.OsdaHyper, terms: Terms | None = None) -> dict[str, float]:
    """Objective each player descends, as implied by the reversal layers."""
    terms = terms or Terms()
    lam = hyper.grl_lambda
    cls = losses.l_cls if terms.cls else 0.0
    badv = losses.l_badv if terms.badv else 0.0
    delta = losses.delta_eps if terms.delta else 0.0
    dadv = losses.l_dadv if terms.dadv else 0.0
    d = losses.l_d if terms.d else 0.0
    return {
        "G": cls - lam * badv + delta - lam * dadv + d,
        "C": cls + badv + delta,
        "D": dadv + d,
    }


# -- optimisation ---------------------------------------------------------------

def sgd_update(params, grads, lr: float, momentum: float, velocity):
    """In-place heavy-ball step: ``v <- momentum*v + g``; ``theta <- theta - lr*v``."""
    if not (len(params) == len(grads) == len(velocity)):
        raise DimensionError("params, grads and velocity lists differ in length")
    for theta, g, v in zip(params, grads, velocity):
        if theta.shape != g.shape or theta.shape != v.shape:
            raise DimensionError(f"shape mismatch {theta.shape} / {g.shape} / {v.shape}")
        v *= momentum
        v += g
        theta -= lr * v
    return params, velocity


def train(task: OpenSetTask, bundle: ModelBundle, cfg: TrainConfig) -> tuple[ModelBundle, TrainTrace]:
    """Run the minimax game on ``task``; target labels are never read."""
    if bundle.K != task.K:
        raise ConfigError(f"bundle has K={bundle.K}, task has K={task.K}")
    if np.any(task.source.labels >= task.K):
        raise obj.DomainContractError("source contains unknown-class rows")
    n_s, n_t = len(task.source), len(task.target)
    if cfg.batch > min(n_s, n_t):
        raise ConfigError(f"batch {cfg.batch} exceeds dataset size min({n_s}, {n_t})")

    bundle = bundle.copy()
    terms = cfg.terms()
    rng = np.random.default_rng([cfg.seed, 2])  # shuffle stream of the seed scheme in config.py
    velocity = {k: [np.zeros_like(p) for p in net.params()] for k, net in bundle.players().items()}
    trace = TrainTrace()
    Xs, ys, Xt = task.source.X, task.source.labels, task.target.X
    steps_per_epoch = min(n_s, n_t) // cfg.batch
    step = 0
    for epoch in range(cfg.epochs):
        perm_s = rng.permutation(n_s)
        perm_t = rng.permutation(n_t)
        for b in range(steps_per_epoch):
            si = perm_s[b * cfg.batch:(b + 1) * cfg.batch]
            ti = perm_t[b * cfg.batch:(b + 1) * cfg.batch]
            losses, grads = step_gradients(bundle, Xs[si], ys[si], Xt[ti], cfg.hyper, terms)
            if not losses.is_finite():
                raise NumericAbort(f"non-finite loss at step {step}: {losses}", trace)
            if terms.floor:
                assert losses.delta_eps >= -cfg.hyper.eps
            if step % cfg.log_every == 0:
                trace.rows.append(TraceRow(step, epoch, losses))
            for k, net in bundle.players().items():
                sgd_update(net.params(), grads[k], cfg.lr, cfg.momentum, velocity[k])
                if not all(np.all(np.isfinite(p)) for p in net.params()):
                    raise NumericAbort(f"non-finite {k} parameters after step {step}", trace)
            step += 1
    return bundle, trace


# -- gradient routing -------------------------------------------------------------

@dataclass
class RoutingReport:
    fd_rel_err: dict[str, float]
    edges: dict[str, bool]
    probes: dict[str, bool]
    rtol: float

    @property
    def failures(self) -> list[str]:
        bad = [f"fd:{k}" for k, v in self.fd_rel_err.items() if not v < self.rtol]
        bad += [f"edge:{k}" for k, ok in self.edges.items() if not ok]
        bad += [f"probe:{k}" for k, ok in self.probes.items() if not ok]
        return bad

    @property
    def passed(self) -> bool:
        return not self.failures


def _only(**on) -> Terms:
    base = dict(cls=False, badv=False, delta=False, dadv=False, d=False)
    base.update(on)
    return Terms(**base)


def gradient_routing_check(bundle: ModelBundle, xs, ys, xt, hyper: obj.OsdaHyper,
                           h: float = 1e-5, rtol: float = 1e-4) -> RoutingReport:
    """Certify the sign and isolation structure of the per-player gradients.

    * each player's analytic gradient matches central differences of its own
      composite objective;
    * the classifier takes nothing from the discriminator losses, and the
      discriminator takes nothing from the classifier-side losses;
    * moving G along +grad(badv) raises badv, moving G along -grad(d) lowers d.
    """
    report = RoutingReport({}, {}, {}, rtol)
    players = bundle.players()
    _, grads = step_gradients(bundle, xs, ys, xt, hyper)

    for name, net in players.items():
        params = net.params()
        names = net.param_names(f"{name}.")

        def objective(name=name):
            losses, _ = step_gradients(bundle, xs, ys, xt, hyper)
            return player_objectives(losses, hyper)[name]

        fd = finite_difference_check(dict(zip(names, params)), objective, dict(zip(names, grads[name])), h, rtol)
        report.fd_rel_err.update(fd.max_rel_err)

    _, g = step_gradients(bundle, xs, ys, xt, hyper, _only(dadv=True))
    report.edges["dadv->C"] = all(not np.any(x) for x in g["C"])
    _, g = step_gradients(bundle, xs, ys, xt, hyper, _only(d=True))
    report.edges["d->C"] = all(not np.any(x) for x in g["C"])
    for term in ("cls", "badv", "delta"):
        _, g = step_gradients(bundle, xs, ys, xt, hyper, _only(**{term: True}))
        report.edges[f"{term}->D"] = all(not np.any(x) for x in g["D"])

    # directional probes on G; the G gradient for badv alone is -lam * grad(badv)
    for term, sign, expect_up in (("badv", -1.0, True), ("d", 1.0, False)):
        terms = _only(**{term: True})
        before, g = step_gradients(bundle, xs, ys, xt, hyper, terms)
        raw = [sign * x for x in g["G"]]
        if term == "badv" and hyper.grl_lambda > 0:
            raw = [x / hyper.grl_lambda for x in raw]
        norm = np.sqrt(sum(float((x * x).sum()) for x in raw))
        if norm == 0:
            report.probes[f"G along {'+' if expect_up else '-'}grad({term})"] = False
            continue
        step = 1e-4 / norm
        direction = step if expect_up else -step
        params = players["G"].params()
        for p, x in zip(params, raw):
            p += direction * x
        after, _ = step_gradients(bundle, xs, ys, xt, hyper, terms)
        for p, x in zip(params, raw):
            p -= direction * x
        b = getattr(before, f"l_{term}")
        a = getattr(after, f"l_{term}")
        report.probes[f"G along {'+' if expect_up else '-'}grad({term})"] = (a > b) if expect_up else (a < b)
    return report


def routing_fixture(seed: int = 0, n: int = 12, K: int = 2, dim: int = 3, margin: float = 1e-3):
    """A small bundle and batch on which every loss is active and away from its kinks.

    Picks a confidence threshold inside a gap of the target confidences so that
    both confident sets are non-empty and no row sits within ``margin`` of it.
    """
    for attempt in range(1000):
        rng = np.random.default_rng([seed, attempt])
        bundle = build_bundle(dim, K, feature_dim=4, hidden=5, disc_hidden=6, rng=rng)
        bundle.classifier.layers[0].weight *= 6.0
        for layer in bundle.discriminator.layers:
            if layer.has_params:
                layer.bias += rng.normal(scale=0.1, size=layer.bias.shape)
        xs = rng.normal(size=(n, dim))
        ys = rng.integers(0, K, size=n)
        xt = rng.normal(size=(n, dim)) * 1.5
        F = bundle.generator(np.vstack([xs, xt]))
        pre = bundle.generator.layers[0].weight
        P = bundle.classifier(F)
        Pt = P[n:]
        conf = np.sort(Pt.max(axis=1))
        arg = Pt.argmax(axis=1)
        gaps = [(conf[i + 1] - conf[i], 0.5 * (conf[i] + conf[i + 1])) for i in range(len(conf) - 1)]
        for gap, thr in sorted(gaps, reverse=True):
            if gap < 2 * margin or not 0 < thr < 1:
                continue
            sure = Pt.max(axis=1) >= thr
            if not (np.any(sure & (arg < K)) and np.any(sure & (arg == K))):
                continue
            hyper = obj.OsdaHyper(alpha=1.1, eps=0.0, conf_threshold=float(thr))
            inner = obj.open_set_diff(P[:n], Pt, hyper.alpha)
            # every pre-activation must sit clear of the leaky-relu kink
            Z1 = np.vstack([xs, xt]) @ pre.T + bundle.generator.layers[0].bias
            if inner > margin and np.abs(Z1).min() > margin:
                return bundle, xs, ys, xt, hyper
            break
    raise RuntimeError("could not build a routing fixture")

