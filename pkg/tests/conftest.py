"""Shared test helpers: finite-difference oracle and gradient comparison."""

from __future__ import annotations

import numpy as np
import pytest

from protorefine.autodiff import ParamSet, no_grad


def finite_difference(params: ParamSet, loss_fn, name: str, flat_index: int,
                      h: float = 1e-5) -> float:
    """Central-difference derivative of loss_fn w.r.t. one parameter entry."""
    flat = params[name].data.ravel()
    orig = flat[flat_index]
    with no_grad():
        flat[flat_index] = orig + h
        up = float(loss_fn().item())
        flat[flat_index] = orig - h
        down = float(loss_fn().item())
    flat[flat_index] = orig
    return (up - down) / (2.0 * h)


def gradient_rel_error(analytic: float, numeric: float) -> float:
    denom = max(abs(analytic), abs(numeric), 1e-8)
    return abs(analytic - numeric) / denom


def check_gradients(params: ParamSet, loss_fn, n_points: int, rng,
                    tol: float = 1e-4, h: float = 1e-5) -> float:
    """Compare autodiff gradients to central differences at random entries.

    Draws ``n_points`` (parameter, flat index) pairs, recomputes the loss and
    a fresh backward pass for each, and asserts the relative error bound.
    Returns the worst relative error seen.
    """
    names = params.names()
    worst = 0.0
    for _ in range(n_points):
        name = names[rng.integers(len(names))]
        flat_index = int(rng.integers(params[name].data.size))
        params.zero_grad()
        loss = loss_fn()
        loss.backward()
        analytic = float(params[name].grad.ravel()[flat_index])
        numeric = finite_difference(params, loss_fn, name, flat_index, h=h)
        if abs(analytic - numeric) < 1e-10:
            continue
        rel = gradient_rel_error(analytic, numeric)
        worst = max(worst, rel)
        assert rel < tol, (
            f"gradient mismatch for {name}[{flat_index}]: "
            f"autodiff={analytic:.10g} numeric={numeric:.10g} rel={rel:.3g}"
        )
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(42)
