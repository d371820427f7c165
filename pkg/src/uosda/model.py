"""Generator G, classifier C (K+1 outputs) and discriminator D on tensor features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkernel import DimensionError, LayerSpec, Network, as_matrix, dense


@dataclass
class ModelBundle:
    generator: Network
    classifier: Network
    discriminator: Network
    K: int

    def __post_init__(self):
        d_g = self.generator.out_dim
        if self.classifier.in_dim != d_g:
            raise DimensionError(f"classifier input {self.classifier.in_dim} != generator output {d_g}")
        if self.classifier.out_dim != self.K + 1:
            raise DimensionError(f"classifier must have K+1={self.K + 1} outputs, has {self.classifier.out_dim}")
        if self.classifier.layers[-1].kind != "softmax":
            raise DimensionError("classifier must end in a softmax layer")
        if self.discriminator.in_dim != d_g * (self.K + 1):
            raise DimensionError(
                f"discriminator input {self.discriminator.in_dim} != d_G*(K+1) = {d_g * (self.K + 1)}"
            )
        if self.discriminator.out_dim != 1 or self.discriminator.layers[-1].kind != "sigmoid":
            raise DimensionError("discriminator must end in a single sigmoid unit")

    @property
    def input_dim(self) -> int:
        return self.generator.in_dim

    @property
    def feature_dim(self) -> int:
        return self.generator.out_dim

    def players(self) -> dict[str, Network]:
        return {"G": self.generator, "C": self.classifier, "D": self.discriminator}

    def copy(self) -> "ModelBundle":
        return ModelBundle(self.generator.copy(), self.classifier.copy(), self.discriminator.copy(), self.K)


def build_bundle(
    input_dim: int,
    K: int,
    feature_dim: int = 16,
    hidden: int = 32,
    disc_hidden: int = 32,
    slope: float = 0.01,
    feature_act: str = "sigmoid",
    rng: np.random.Generator | None = None,
) -> ModelBundle:
    """Two dense layers for G, one for C, three for D; all zeros when ``rng`` is None.

    ``feature_act`` is the generator's output activation. The default sigmoid
    keeps features bounded; with an unbounded output the generator can scale
    features until the unknown-class probability saturates.
    """
    def act(width, kind="leaky-relu"):
        return LayerSpec(kind, width, width, slope=slope)

    n_cls = K + 1
    d_in = feature_dim * n_cls
    generator = Network([dense(input_dim, hidden, rng), act(hidden), dense(hidden, feature_dim, rng), act(feature_dim, feature_act)])
    classifier = Network([dense(feature_dim, n_cls, rng), LayerSpec("softmax", n_cls, n_cls)])
    discriminator = Network([
        dense(d_in, disc_hidden, rng), act(disc_hidden),
        dense(disc_hidden, disc_hidden, rng), act(disc_hidden),
        dense(disc_hidden, 1, rng), LayerSpec("sigmoid", 1, 1),
    ])
    return ModelBundle(generator, classifier, discriminator, K)


@dataclass
class Prediction:
    features: np.ndarray
    probs: np.ndarray

    @property
    def argmax(self) -> np.ndarray:
        return self.probs.argmax(axis=1)

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=1)

    def __len__(self):
        return self.probs.shape[0]


def forward_gc(bundle: ModelBundle, X) -> Prediction:
    X = as_matrix(X)
    if X.shape[1] != bundle.input_dim:
        raise DimensionError(f"input has {X.shape[1]} cols, generator expects {bundle.input_dim}")
    features = bundle.generator(X)
    return Prediction(features, bundle.classifier(features))


def tensor_feature(features, probs) -> np.ndarray:
    """Flattened outer product; entry ``i*(K+1) + k`` is ``features[i] * probs[k]``.

    Accepts single vectors or row-aligned batches.
    """
    features = np.asarray(features, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if features.ndim == 1:
        return np.outer(features, probs).reshape(-1)
    if features.shape[0] != probs.shape[0]:
        raise DimensionError(f"{features.shape[0]} feature rows vs {probs.shape[0]} prob rows")
    return np.einsum("ni,nk->nik", features, probs).reshape(features.shape[0], -1)


def tensor_feature_backward(features: np.ndarray, probs: np.ndarray, dT: np.ndarray):
    """Gradients ``(dfeatures, dprobs)`` of a batch tensor map given upstream ``dT``."""
    dT = dT.reshape(features.shape[0], features.shape[1], probs.shape[1])
    return np.einsum("nik,nk->ni", dT, probs), np.einsum("nik,ni->nk", dT, features)


def forward_d(bundle: ModelBundle, tensor_features) -> np.ndarray:
    T = as_matrix(tensor_features)
    if T.shape[1] != bundle.discriminator.in_dim:
        raise DimensionError(f"tensor features have {T.shape[1]} cols, discriminator expects {bundle.discriminator.in_dim}")
    return bundle.discriminator(T)[:, 0]
