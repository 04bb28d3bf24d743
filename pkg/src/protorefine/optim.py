"""Stochastic gradient descent with Nesterov momentum and per-group rates."""

from __future__ import annotations

import numpy as np

from .autodiff import ParamSet


class NesterovSGD:
    """SGD with Nesterov momentum: v = mu*v + g; p -= lr * (g + mu*v).

    ``lr_overrides`` maps name prefixes to learning rates, so e.g. the encoder
    can run at a lower rate than the rest of the model. Velocity buffers
    persist across steps. A zero rate is permitted and leaves the matching
    parameters unchanged (useful for freezing groups); negative rates are
    rejected.
    """

    def __init__(self, params: ParamSet, lr: float, momentum: float = 0.9,
                 lr_overrides: dict[str, float] | None = None):
        if lr < 0.0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.params = params
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.lr_overrides = dict(lr_overrides or {})
        for prefix, rate in self.lr_overrides.items():
            if rate < 0.0:
                raise ValueError(f"learning rate for {prefix!r} must be non-negative")
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def _rate(self, name: str) -> float:
        for prefix, rate in self.lr_overrides.items():
            if name.startswith(prefix):
                return rate
        return self.lr

    def step(self) -> None:
        mu = self.momentum
        for name, t in self.params.items():
            g = t.grad
            v = self.velocity[name]
            v *= mu
            v += g
            t.data -= self._rate(name) * (g + mu * v)
        self.params.step += 1

    def zero_grad(self) -> None:
        self.params.zero_grad()
