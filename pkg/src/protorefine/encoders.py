"""Embedding encoders mapping raw payloads to d-dimensional features."""

from __future__ import annotations

import numpy as np

from .autodiff import ParamSet, Tensor
from .layers import Linear


class IdentityEncoder:
    """Feature mode: payloads are already embeddings; wraps without change."""

    name = "identity"

    def __init__(self, feature_dim: int):
        if feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {feature_dim}")
        self.out_dim = int(feature_dim)

    def encode(self, batch: np.ndarray) -> Tensor:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.out_dim:
            raise ValueError(
                f"identity encoder expects (n, {self.out_dim}), got {batch.shape}")
        return Tensor(batch)


class SmallMlpEncoder:
    """Raster mode: flatten, scale to [0, 1], two ReLU layers, linear head."""

    name = "mlp"

    def __init__(self, params: ParamSet, input_shape: tuple, out_dim: int = 64,
                 hidden: tuple = (256, 128), rng: np.random.Generator | None = None,
                 prefix: str = "encoder"):
        if len(hidden) != 2:
            raise ValueError(f"encoder needs exactly two hidden sizes, got {hidden}")
        rng = rng or np.random.default_rng(0)
        self.input_shape = tuple(input_shape)
        self.out_dim = int(out_dim)
        n_in = int(np.prod(self.input_shape))
        self.l1 = Linear(params, f"{prefix}.l1", n_in, hidden[0], rng)
        self.l2 = Linear(params, f"{prefix}.l2", hidden[0], hidden[1], rng)
        self.l3 = Linear(params, f"{prefix}.l3", hidden[1], out_dim, rng,
                         w_scale=np.sqrt(1.0 / hidden[1]))

    def encode(self, batch: np.ndarray) -> Tensor:
        batch = np.asarray(batch)
        if batch.shape[1:] != self.input_shape:
            raise ValueError(
                f"encoder expects (n, *{self.input_shape}), got {batch.shape}")
        flat = batch.reshape(batch.shape[0], -1).astype(np.float64)
        if batch.dtype == np.uint8:
            flat = flat / 255.0
        x = Tensor(flat)
        return self.l3(self.l2(self.l1(x).relu()).relu())


def build_encoder(kind: str, params: ParamSet, *, feature_dim: int,
                  input_shape: tuple | None = None, hidden: tuple = (256, 128),
                  rng: np.random.Generator | None = None):
    if kind == "identity":
        return IdentityEncoder(feature_dim)
    if kind == "mlp":
        if input_shape is None:
            raise ValueError("mlp encoder needs an input_shape")
        return SmallMlpEncoder(params, input_shape, out_dim=feature_dim,
                               hidden=hidden, rng=rng)
    raise ValueError(f"unknown encoder kind {kind!r}; choices: identity, mlp")
