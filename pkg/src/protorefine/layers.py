"""Small building blocks shared by the trainable networks."""

from __future__ import annotations

import numpy as np

from .autodiff import ParamSet, Tensor


class Linear:
    """Affine layer ``x @ w + b`` with parameters registered on a ParamSet."""

    def __init__(self, params: ParamSet, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator, w_scale: float | None = None,
                 b_init: float = 0.0):
        scale = np.sqrt(2.0 / n_in) if w_scale is None else w_scale
        self.w = params.add(f"{name}.w", rng.normal(0.0, scale, (n_in, n_out)))
        self.b = params.add(f"{name}.b", np.full(n_out, b_init))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b
