"""Learned temperature-scaled distance and prototype classification.

Embeddings are rescaled to x / (||x|| * g(x)) where g is a small trainable
network emitting one strictly positive temperature per instance; class scores
are the softmax over negated Euclidean distances to the prototypes.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ParamSet, Tensor, concat, softmax
from .layers import Linear


class TemperatureNet:
    """Per-instance temperature g(x): d -> 512 -> 128 -> softplus + floor.

    The floor keeps temperatures strictly positive, bounding the rescaled
    embedding norms. The output head starts near ln(e-1) so g ~= 1 initially
    and the metric begins as a plain direction distance.
    """

    def __init__(self, params: ParamSet, feature_dim: int, hidden: tuple = (512, 128),
                 floor: float = 1e-3, rng: np.random.Generator | None = None,
                 prefix: str = "temperature"):
        if len(hidden) != 2:
            raise ValueError(f"temperature net needs two hidden sizes, got {hidden}")
        if floor <= 0.0:
            raise ValueError(f"temperature floor must be positive, got {floor}")
        rng = rng or np.random.default_rng(0)
        self.floor = float(floor)
        self.l1 = Linear(params, f"{prefix}.l1", feature_dim, hidden[0], rng)
        self.l2 = Linear(params, f"{prefix}.l2", hidden[0], hidden[1], rng)
        self.l3 = Linear(params, f"{prefix}.l3", hidden[1], 1, rng,
                         w_scale=0.01 / np.sqrt(hidden[1]), b_init=np.log(np.e - 1.0))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2:
            raise ValueError(f"temperature net expects (n, d), got {x.shape}")
        return self.l3(self.l2(self.l1(x).relu()).relu()).softplus() + self.floor


def rescale(x: Tensor, net: TemperatureNet) -> Tensor:
    """x / (||x||_2 * g(x)) row-wise; zero-norm rows are degenerate input."""
    norms_sq = (x * x).sum(axis=1, keepdims=True)
    if np.any(norms_sq.data <= 0.0):
        raise ValueError("cannot rescale a zero-norm embedding")
    return x / (norms_sq.sqrt() * net(x))


def distance(x1: Tensor, x2: Tensor, net: TemperatureNet) -> Tensor:
    """Temperature-scaled distance between two embedding vectors."""
    both = concat([x1.reshape(1, -1), x2.reshape(1, -1)], axis=0)
    z = rescale(both, net)
    diff = z[0] - z[1]
    return (diff * diff).sum().sqrt()


def classify(features: Tensor, prototypes: Tensor, net: TemperatureNet) -> Tensor:
    """Score an augmentation ensemble against prototypes.

    features: (q, m, d) ensemble embeddings; prototypes: (N, d).
    Returns (q, m, N) scores; each (j, k) slice is a distribution over the
    N classes (softmax over negated distances). Features and prototypes are
    rescaled jointly by the same temperature net.
    """
    if features.ndim != 3:
        raise ValueError(f"features must be (q, m, d), got {features.shape}")
    if prototypes.ndim != 2 or prototypes.shape[1] != features.shape[2]:
        raise ValueError(
            f"prototypes {prototypes.shape} incompatible with features {features.shape}")
    q, m, d = features.shape
    n = prototypes.shape[0]
    flat = features.reshape(q * m, d)
    z = rescale(concat([flat, prototypes], axis=0), net)
    zq = z[:q * m].reshape(q * m, 1, d)
    zp = z[q * m:].reshape(1, n, d)
    diff = zq - zp
    dist = (diff * diff).sum(axis=2).sqrt()
    scores = softmax(-dist, axis=-1)
    return scores.reshape(q, m, n)


def predict_labels(scores_2d: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    return np.argmax(scores_2d, axis=1)
