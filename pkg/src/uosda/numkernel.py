"""Dense layers with hand-written forward/backward passes.

Everything runs in float64. A :class:`Network` is an ordered list of
:class:`LayerSpec`; ``Network.forward`` returns the output together with a
:class:`GradTape` that ``Network.backward`` consumes exactly once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

LAYER_KINDS = ("dense", "leaky-relu", "sigmoid", "softmax", "grad-reversal")
PROB_CLAMP = 1e-12


class DimensionError(ValueError):
    pass


class TapeStateError(RuntimeError):
    pass


class DeterminismError(RuntimeError):
    pass


def as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {X.shape}")
    return X


# -- primitive ops ----------------------------------------------------------

def dense_forward(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Y = X W^T + b."""
    X = as_matrix(X)
    W = as_matrix(W)
    b = np.asarray(b, dtype=np.float64)
    if X.shape[1] != W.shape[1]:
        raise DimensionError(f"input has {X.shape[1]} cols, weight expects in-dim {W.shape[1]}")
    if b.shape != (W.shape[0],):
        raise DimensionError(f"bias shape {b.shape} does not match out-dim {W.shape[0]}")
    return X @ W.T + b


def dense_backward(W: np.ndarray, X: np.ndarray, dY: np.ndarray):
    """Return ``(dW, db, dX)`` for ``Y = X W^T + b``."""
    X = as_matrix(X)
    dY = as_matrix(dY)
    if dY.shape != (X.shape[0], W.shape[0]):
        raise DimensionError(f"upstream shape {dY.shape} != ({X.shape[0]}, {W.shape[0]})")
    return dY.T @ X, dY.sum(axis=0), dY @ W


def softmax(Z: np.ndarray) -> np.ndarray:
    Z = as_matrix(Z)
    if Z.shape[0] == 0:
        return Z.copy()
    e = np.exp(Z - Z.max(axis=1, keepdims=True))
    # logit gaps beyond ~745 underflow to 0; keep every probability strictly positive
    return np.maximum(e / e.sum(axis=1, keepdims=True), np.finfo(np.float64).tiny)


def sigmoid(Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(Z)
    pos = Z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-Z[pos]))
    ez = np.exp(Z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activation_forward(spec: "LayerSpec", X: np.ndarray) -> np.ndarray:
    X = as_matrix(X)
    if spec.kind == "leaky-relu":
        return np.where(X > 0, X, spec.slope * X)
    if spec.kind == "sigmoid":
        return sigmoid(X)
    if spec.kind == "softmax":
        return softmax(X)
    raise ValueError(f"not an activation: {spec.kind}")


def activation_backward(spec: "LayerSpec", cached: tuple, dY: np.ndarray) -> np.ndarray:
    """``cached`` is ``(X, Y)`` from the forward pass."""
    X, Y = cached
    dY = as_matrix(dY)
    if spec.kind == "leaky-relu":
        return dY * np.where(X > 0, 1.0, spec.slope)
    if spec.kind == "sigmoid":
        return dY * Y * (1.0 - Y)
    if spec.kind == "softmax":
        return Y * (dY - (dY * Y).sum(axis=1, keepdims=True))
    raise ValueError(f"not an activation: {spec.kind}")


def grl_forward(X: np.ndarray) -> np.ndarray:
    return X


def grl_backward(lam: float, dY: np.ndarray) -> np.ndarray:
    if lam < 0:
        raise ValueError("gradient reversal coefficient must be >= 0")
    return -lam * np.asarray(dY, dtype=np.float64)


# -- layers and networks ------------------------------------------------------

@dataclass
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    slope: float = 0.01
    lam: float = 1.0
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense":
            if self.weight is None:
                self.weight = np.zeros((self.out_dim, self.in_dim))
            if self.bias is None:
                self.bias = np.zeros(self.out_dim)
            self.weight = np.array(self.weight, dtype=np.float64)
            self.bias = np.array(self.bias, dtype=np.float64)
            if self.weight.shape != (self.out_dim, self.in_dim) or self.bias.shape != (self.out_dim,):
                raise DimensionError(
                    f"dense {self.in_dim}->{self.out_dim} got weight {self.weight.shape}, bias {self.bias.shape}"
                )
        elif self.in_dim != self.out_dim:
            raise DimensionError(f"{self.kind} layer must keep its width, got {self.in_dim}->{self.out_dim}")
        if self.kind == "grad-reversal" and self.lam < 0:
            raise ValueError("gradient reversal coefficient must be >= 0")

    @property
    def has_params(self) -> bool:
        return self.kind == "dense"


def dense(in_dim: int, out_dim: int, rng: np.random.Generator | None = None) -> LayerSpec:
    """Dense layer with Glorot-uniform weights (zeros if ``rng`` is None) and zero bias."""
    if rng is None:
        return LayerSpec("dense", in_dim, out_dim)
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    W = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    return LayerSpec("dense", in_dim, out_dim, weight=W, bias=np.zeros(out_dim))


@dataclass
class GradTape:
    """Activations cached by one forward pass."""

    cache: list = field(default_factory=list)
    consumed: bool = False


class Network:
    def __init__(self, layers: Sequence[LayerSpec]):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionError(f"shape chain broken: {a.kind} out {a.out_dim} -> {b.kind} in {b.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        """Parameter arrays (weight, bias per dense layer), not copies."""
        out = []
        for layer in self.layers:
            if layer.has_params:
                out += [layer.weight, layer.bias]
        return out

    def param_names(self, prefix: str = "") -> list[str]:
        names = []
        for i, layer in enumerate(self.layers):
            if layer.has_params:
                names += [f"{prefix}{i}.weight", f"{prefix}{i}.bias"]
        return names

    def copy(self) -> "Network":
        return Network([
            LayerSpec(l.kind, l.in_dim, l.out_dim, l.slope, l.lam,
                      None if l.weight is None else l.weight.copy(),
                      None if l.bias is None else l.bias.copy())
            for l in self.layers
        ])

    def forward(self, X) -> tuple[np.ndarray, GradTape]:
        X = as_matrix(X)
        if X.shape[1] != self.in_dim:
            raise DimensionError(f"input has {X.shape[1]} cols, network expects {self.in_dim}")
        tape = GradTape()
        for layer in self.layers:
            if layer.kind == "dense":
                Y = dense_forward(layer.weight, layer.bias, X)
            elif layer.kind == "grad-reversal":
                Y = grl_forward(X)
            else:
                Y = activation_forward(layer, X)
            tape.cache.append((X, Y))
            X = Y
        return X, tape

    def __call__(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def backward(self, tape: GradTape, dY) -> tuple[np.ndarray, list[np.ndarray]]:
        """Return ``(dX, grads)`` with grads aligned to :meth:`params`."""
        if tape.consumed or len(tape.cache) != len(self.layers):
            raise TapeStateError("backward called without a matching forward pass")
        dY = as_matrix(dY)
        grads: list[np.ndarray] = []
        for layer, cached in zip(reversed(self.layers), reversed(tape.cache)):
            X, _ = cached
            if layer.kind == "dense":
                dW, db, dY = dense_backward(layer.weight, X, dY)
                grads += [db, dW]
            elif layer.kind == "grad-reversal":
                dY = grl_backward(layer.lam, dY)
            else:
                dY = activation_backward(layer, cached, dY)
        tape.cache.clear()
        tape.consumed = True
        return dY, grads[::-1]

    def reversal_factors(self) -> list[float]:
        """Per parameter array, the product of ``-lam`` over reversal layers downstream of it.

        Analytic gradients of a parameter behind a reversal layer are gradients of
        ``factor * loss``; finite-difference checks must use the same objective.
        """
        factors = []
        scale = 1.0
        for layer in reversed(self.layers):
            if layer.kind == "grad-reversal":
                scale *= -layer.lam
            elif layer.has_params:
                factors += [scale, scale]
        return factors[::-1]


# -- finite differences -------------------------------------------------------

@dataclass
class FDReport:
    max_rel_err: dict[str, float]
    rtol: float
    failed: list[str]

    @property
    def passed(self) -> bool:
        return not self.failed

    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)


def block_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max|a - n| / max(max|a|, max|n|, floor) over one parameter block."""
    if analytic.size == 0:
        return 0.0
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def finite_difference_check(
    params: dict[str, np.ndarray],
    loss: Callable[[], float],
    analytic: dict[str, np.ndarray],
    h: float = 1e-5,
    rtol: float = 1e-4,
) -> FDReport:
    """Compare ``analytic`` gradients against central differences of ``loss``.

    ``params`` are perturbed in place and restored; ``loss`` must read them.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    base = loss()
    if loss() != base:
        raise DeterminismError("loss evaluator returned different values for identical parameters")
    errs: dict[str, float] = {}
    failed = []
    for name, theta in params.items():
        numeric = np.zeros_like(theta)
        flat = theta.reshape(-1)
        nflat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss()
            flat[j] = orig - h
            down = loss()
            flat[j] = orig
            nflat[j] = (up - down) / (2 * h)
        errs[name] = block_rel_error(np.asarray(analytic[name]), numeric)
        if not errs[name] < rtol:
            failed.append(name)
    if loss() != base:
        raise DeterminismError("loss drifted across the finite-difference sweep")
    return FDReport(errs, rtol, failed)


def check_network_gradients(
    net: Network,
    X: np.ndarray,
    loss_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    h: float = 1e-5,
    rtol: float = 1e-4,
    check_input: bool = True,
) -> FDReport:
    """Finite-difference check of every parameter block of ``net`` (and its input).

    Parameters sitting behind gradient-reversal layers are checked against the
    reversed-sign objective, which is what their analytic gradient descends.
    """
    X = np.array(X, dtype=np.float64)
    Y, tape = net.forward(X)
    dY = loss_and_grad(Y)[1]
    dX, grads = net.backward(tape, dY)
    names = net.param_names()
    factors = net.reversal_factors()
    report = FDReport({}, rtol, [])
    # one objective per distinct reversal factor
    for factor in sorted(set(factors)):
        sel = [i for i, f in enumerate(factors) if f == factor]
        sub = finite_difference_check(
            {names[i]: net.params()[i] for i in sel},
            lambda f=factor: f * loss_and_grad(net(X))[0],
            {names[i]: grads[i] for i in sel},
            h, rtol,
        )
        report.max_rel_err.update(sub.max_rel_err)
        report.failed += sub.failed
    if check_input:
        in_factor = 1.0
        for layer in net.layers:
            if layer.kind == "grad-reversal":
                in_factor *= -layer.lam
        sub = finite_difference_check(
            {"input": X}, lambda: in_factor * loss_and_grad(net(X))[0], {"input": dX}, h, rtol
        )
        report.max_rel_err.update(sub.max_rel_err)
        report.failed += sub.failed
    return report


def mse_loss(Y: np.ndarray, T: np.ndarray) -> tuple[float, np.ndarray]:
    """0.5 * mean over rows of squared error, and its gradient."""
    n = max(Y.shape[0], 1)
    R = Y - T
    return 0.5 * float((R * R).sum()) / n, R / n


def layer_probe(kind: str, rng: np.random.Generator, width: int = 4, batch: int = 5,
                margin: float = 1e-3) -> tuple[Network, np.ndarray]:
    """A ``dense -> kind`` network and an input batch with pre-activations clear of kinks."""
    extra = {"lam": float(rng.uniform(0.1, 2.0))} if kind == "grad-reversal" else {}
    if kind == "leaky-relu":
        extra["slope"] = float(rng.uniform(0.01, 0.3))
    layers = [dense(width, width, rng)]
    if kind != "dense":
        layers.append(LayerSpec(kind, width, width, **extra))
    net = Network(layers)
    net.layers[0].bias += rng.normal(scale=0.1, size=width)
    while True:
        X = rng.normal(size=(batch, width))
        Z = dense_forward(net.layers[0].weight, net.layers[0].bias, X)
        if kind != "leaky-relu" or np.abs(Z).min() > margin:
            return net, X


def layer_gradient_suite(seed: int = 0, draws: int = 100, h: float = 1e-5, rtol: float = 1e-4) -> dict[str, FDReport]:
    """Finite-difference check of every layer kind over ``draws`` random parameter draws.

    The loss is a random linear read-out of the output, so every output
    coordinate carries gradient. Returns the worst report per kind.
    """
    out: dict[str, FDReport] = {}
    for k, kind in enumerate(LAYER_KINDS):
        worst = FDReport({}, rtol, [])
        for d in range(draws):
            rng = np.random.default_rng([seed, k, d])
            net, X = layer_probe(kind, rng)
            R = rng.normal(size=(X.shape[0], net.out_dim))
            rep = check_network_gradients(net, X, lambda Y, R=R: (float((Y * R).sum()), R), h, rtol)
            for name, err in rep.max_rel_err.items():
                if err >= worst.max_rel_err.get(name, -1.0):
                    worst.max_rel_err[name] = err
            worst.failed = sorted(set(worst.failed) | set(rep.failed))
        out[kind] = worst
    return out
