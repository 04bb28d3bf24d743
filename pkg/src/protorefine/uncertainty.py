"""Ensemble disagreement as mutual information over augmentation scores.

For a (q, m, N) score tensor the per-instance uncertainty is
I = H(mean over members) - mean over members of H, i.e. the Jensen-Shannon
style gap between the entropy of the averaged distribution and the average
member entropy. Natural log throughout; I is clamped at zero from below to
absorb float residue.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, xlogx


def _entropy_rows(p: Tensor, axis: int = -1) -> Tensor:
    """Shannon entropy along ``axis`` with the 0*log(0)=0 convention."""
    return -xlogx(p).sum(axis=axis)


def check_distribution(p: np.ndarray, axis: int = -1, tol: float = 1e-8) -> None:
    if np.any(p < -1e-12):
        raise ValueError("scores must be non-negative")
    sums = p.sum(axis=axis)
    if np.any(np.abs(sums - 1.0) > tol):
        worst = float(np.abs(sums - 1.0).max())
        raise ValueError(f"scores must sum to 1 along the class axis (off by {worst:.3g})")


def entropy(p) -> float | Tensor:
    """Shannon entropy (natural log) of one probability vector.

    Accepts a 1-D array (returns float) or Tensor (returns scalar Tensor).
    """
    t = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=np.float64))
    if t.ndim != 1:
        raise ValueError(f"entropy expects a 1-D distribution, got shape {t.shape}")
    check_distribution(t.data, axis=-1)
    out = _entropy_rows(t, axis=-1)
    return out if isinstance(p, Tensor) else float(out.item())


def average_scores(scores, check: bool = True):
    """Mean over the ensemble axis: (q, m, N) -> (q, N). Rows stay distributions."""
    t = scores if isinstance(scores, Tensor) else Tensor(np.asarray(scores, dtype=np.float64))
    if t.ndim != 3:
        raise ValueError(f"scores must be (q, m, N), got shape {t.shape}")
    if check:
        check_distribution(t.data, axis=-1)
    out = t.mean(axis=1)
    return out if isinstance(scores, Tensor) else out.data


def mutual_information(scores, check: bool = True):
    """Per-instance ensemble disagreement: (q, m, N) -> (q,), always >= 0."""
    t = scores if isinstance(scores, Tensor) else Tensor(np.asarray(scores, dtype=np.float64))
    if t.ndim != 3:
        raise ValueError(f"scores must be (q, m, N), got shape {t.shape}")
    if check:
        check_distribution(t.data, axis=-1)
    mean_members = t.mean(axis=1)                      # (q, N)
    total = _entropy_rows(mean_members, axis=-1)       # (q,)
    expected = _entropy_rows(t, axis=-1).mean(axis=1)  # (q,)
    gap = total - expected
    out = gap.clip(0.0, None)
    return out if isinstance(scores, Tensor) else out.data
