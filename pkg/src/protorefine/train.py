"""Loss functions and the episodic meta-training loop."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .bench import EvalProtocol, episode_seed, evaluate
from .episodes import Dataset, sample_episode
from .model import Model
from .optim import NesterovSGD
from .refine import refine_episode

# scores this small only arise when exp() underflows; the floor keeps the
# log finite without touching gradients anywhere realistic
SCORE_FLOOR = 1e-300

# weight clamp for the binary cross-entropy terms
BCE_FLOOR = 1e-7


class TrainingDiverged(RuntimeError):
    """Raised when an episode produces a non-finite loss."""


def onehot(index: int, n: int) -> np.ndarray:
    """One-based one-hot vector: position ``index`` of ``n`` carries the 1."""
    if not 1 <= index <= n:
        raise ValueError(f"index must be in [1, {n}], got {index}")
    v = np.zeros(n, dtype=np.float64)
    v[index - 1] = 1.0
    return v


def classification_loss(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-score of the true class.

    ``scores`` is (q, N) rows of class distributions for the unaugmented
    member; ``labels`` holds 0-based class indices.
    """
    if scores.ndim != 2:
        raise ValueError(f"scores must be (q, N), got {scores.shape}")
    labels = np.asarray(labels)
    q, n = scores.shape
    if labels.shape != (q,):
        raise ValueError(f"labels must be ({q},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise ValueError(f"labels must lie in [0, {n - 1}]")
    picked = scores[np.arange(q), labels]
    return -(picked.clip(SCORE_FLOOR, 1.0).log().mean())


def generator_loss(weight_vectors: Tensor, labels: np.ndarray) -> Tensor:
    """Mean element-wise binary cross-entropy against one-hot targets.

    Row j of ``weight_vectors`` is the N-vector of class weights for support
    instance j; its target is onehot(labels[j] + 1, N). Weights are clamped
    to [1e-7, 1 - 1e-7] before the logs.
    """
    if weight_vectors.ndim != 2:
        raise ValueError(f"weight vectors must be (M, N), got {weight_vectors.shape}")
    labels = np.asarray(labels)
    m, n = weight_vectors.shape
    if labels.shape != (m,):
        raise ValueError(f"labels must be ({m},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise ValueError(f"labels must lie in [0, {n - 1}]")
    targets = np.eye(n, dtype=np.float64)[labels]
    w = weight_vectors.clip(BCE_FLOOR, 1.0 - BCE_FLOOR)
    return -(targets * w.log() + (1.0 - targets) * (1.0 - w).log()).mean()


@dataclass(frozen=True)
class LossReport:
    """Scalar loss terms of one episode: total = classification + lam * regularization."""

    total: float
    classification: float
    regularization: float


def episode_loss(model: Model, episode, lam: float = 0.5, *,
                 iterations: int | None = None,
                 use_unlabeled: bool = False) -> tuple[Tensor, LossReport]:
    """Differentiable episode loss plus its report.

    With lam = 0 the regularizer is skipped entirely and total equals the
    classification term exactly.
    """
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    collect = lam > 0
    result = refine_episode(model, episode, iterations=iterations,
                            use_unlabeled=use_unlabeled,
                            collect_support_weights=collect)
    cls = classification_loss(result.a0_scores[:episode.n_query],
                              episode.query_labels)
    if collect:
        support_labels = np.repeat(np.arange(episode.n_way), episode.k_shot)
        gen = generator_loss(result.support_weights, support_labels)
        total = cls + lam * gen
        report = LossReport(float(total.data), float(cls.data), float(gen.data))
    else:
        total = cls
        report = LossReport(float(total.data), float(cls.data), 0.0)
    return total, report


# ----------------------------------------------------------------------
# meta-training loop


@dataclass
class TrainConfig:
    """Episode budget, loss weights, and optimizer/validation settings."""

    episodes: int = 5000
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 15
    n_unlabeled: int = 0
    distractors: int = 0
    lam: float = 0.5
    lr: float = 1e-3
    encoder_lr: float = 1e-4
    momentum: float = 0.9
    iterations: int | None = None     # None: the model's configured T
    val_interval: int = 500
    val_episodes: int = 600
    val_seed: int | None = None       # None: derived from the training seed
    val_predict: str = "a0"
    log_interval: int = 1

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError(f"episodes must be >= 0, got {self.episodes}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.lr < 0 or self.encoder_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.val_interval < 1 or self.val_episodes < 1 or self.log_interval < 1:
            raise ValueError("val_interval, val_episodes and log_interval must be >= 1")


@dataclass
class TrainResult:
    """Training log plus the retained best-validation outcome."""

    history: list = field(default_factory=list)   # LDJSON rows as dicts
    best_val_accuracy: float = 0.0
    best_episode: int = -1
    final_val_accuracy: float = 0.0
    episodes_run: int = 0
    elapsed_s: float = 0.0


def meta_train(model: Model, dataset: Dataset, cfg: TrainConfig = TrainConfig(),
               seed: int = 0, log_path=None) -> TrainResult:
    """Meta-train ``model`` in place; the best-validation parameters win.

    Each episode: sample with seed (seed, e), refine, backpropagate the
    episode loss, take one optimizer step. Every ``val_interval`` episodes
    (and after the last) the val split is scored on fixed seeds derived from
    ``val_seed``; the parameters with the best validation accuracy are
    restored at the end, so re-evaluating the returned model with the same
    validation settings reproduces ``final_val_accuracy`` exactly.

    Rows are appended to ``history`` (and streamed to ``log_path`` as
    line-delimited JSON) every ``log_interval`` episodes and whenever
    validation ran.
    """
    optimizer = NesterovSGD(model.params, lr=cfg.lr, momentum=cfg.momentum,
                            lr_overrides={"encoder.": cfg.encoder_lr})
    val_seed = cfg.val_seed if cfg.val_seed is not None else seed + 7919
    val_protocol = EvalProtocol(
        n_way=cfg.n_way, k_shot=cfg.k_shot, n_query=cfg.n_query,
        n_unlabeled=cfg.n_unlabeled, distractors=cfg.distractors,
        iterations=cfg.iterations, predict=cfg.val_predict)
    use_unlabeled = cfg.n_unlabeled > 0

    def validate() -> float:
        report = evaluate(model, dataset, "val", val_protocol,
                          episodes=cfg.val_episodes, seed=val_seed)
        return report.accuracy

    start = time.perf_counter()
    result = TrainResult()
    best_state: dict | None = None
    log_file = open(log_path, "w") if log_path is not None else None

    def emit(row: dict) -> None:
        result.history.append(row)
        if log_file is not None:
            log_file.write(json.dumps(row) + "\n")

    try:
        for e in range(cfg.episodes):
            episode = sample_episode(
                dataset, "train", cfg.n_way, cfg.k_shot, cfg.n_query,
                n_unlabeled=cfg.n_unlabeled, distractors=cfg.distractors,
                seed=episode_seed(seed, e))
            optimizer.zero_grad()
            total, report = episode_loss(model, episode, cfg.lam,
                                         iterations=cfg.iterations,
                                         use_unlabeled=use_unlabeled)
            if not math.isfinite(report.total):
                raise TrainingDiverged(
                    f"non-finite loss {report.total} at episode {e}")
            total.backward()
            optimizer.step()
            result.episodes_run = e + 1

            row = {"episode": e, "total": report.total,
                   "classification": report.classification,
                   "regularization": report.regularization,
                   "val_accuracy": None,
                   "elapsed_s": time.perf_counter() - start}
            if (e + 1) % cfg.val_interval == 0 or e == cfg.episodes - 1:
                accuracy = validate()
                row["val_accuracy"] = accuracy
                if best_state is None or accuracy > result.best_val_accuracy:
                    result.best_val_accuracy = accuracy
                    result.best_episode = e
                    best_state = model.params.state_values()
            if e % cfg.log_interval == 0 or row["val_accuracy"] is not None:
                emit(row)

        if best_state is None:
            # zero-episode run: score the untouched parameters once
            result.best_val_accuracy = validate()
            best_state = model.params.state_values()
        else:
            model.params.load_values(best_state)
        result.final_val_accuracy = result.best_val_accuracy
        result.elapsed_s = time.perf_counter() - start
    finally:
        if log_file is not None:
            log_file.close()
    return result
