"""Scikit-learn estimator facade over the transductive refinement engine."""

from __future__ import annotations

import hashlib

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .autodiff import no_grad
from .episodes import Episode
from .model import Model, ModelConfig
from .refine import refine_episode


def _content_ids(x: np.ndarray) -> np.ndarray:
    """Per-row 63-bit ids derived from row bytes.

    Augmentation draws are keyed by instance id, so hashing the content makes
    predictions invariant to row order. Identical rows share an id and
    therefore draw identical augmentations, which keeps their predictions
    identical too.
    """
    ids = np.empty(x.shape[0], dtype=np.int64)
    for j, row in enumerate(x):
        digest = hashlib.blake2b(np.ascontiguousarray(row).tobytes(),
                                 digest_size=8).digest()
        ids[j] = int.from_bytes(digest, "little") & ((1 << 63) - 1)
    return ids


class FewShotRefinementClassifier(ClassifierMixin, BaseEstimator):
    """Few-shot classifier with transductive prototype refinement.

    ``fit`` stores the support set (equal instance counts per class
    required); ``predict`` treats the entire query batch as one episode,
    iteratively pulling class prototypes toward confidently scored queries.

    Transductive caveat: predictions depend on the composition of the batch
    passed to ``predict``. Splitting a batch in two and predicting the halves
    separately may not reproduce the joint predictions. Row order does not
    matter.

    Parameters follow the refinement engine defaults; the feature dimension
    is inferred from the training data.
    """

    def __init__(self, iterations: int = 6, weighting: str = "mi",
                 weight_generator: str = "attention",
                 attention_dim: int = 128, attention_heads: int = 4,
                 mlp_hidden: tuple = (128, 128),
                 temp_hidden: tuple = (512, 128),
                 temperature_floor: float = 1e-3,
                 pipeline: tuple = (), init_seed: int = 0):
        self.iterations = iterations
        self.weighting = weighting
        self.weight_generator = weight_generator
        self.attention_dim = attention_dim
        self.attention_heads = attention_heads
        self.mlp_hidden = mlp_hidden
        self.temp_hidden = temp_hidden
        self.temperature_floor = temperature_floor
        self.pipeline = pipeline
        self.init_seed = init_seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        classes, counts = np.unique(y, return_counts=True)
        if classes.size < 2:
            raise ValueError("fit needs at least 2 classes")
        if np.unique(counts).size != 1:
            raise ValueError(
                f"every class needs the same instance count, got {counts.tolist()}")
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        k_shot = int(counts[0])
        support = np.empty((classes.size, k_shot, X.shape[1]), dtype=np.float64)
        for i, c in enumerate(classes):
            support[i] = X[y == c]
        self.support_ = support
        self.model_ = Model(ModelConfig(
            mode="feature", feature_dim=int(X.shape[1]),
            encoder="identity", temp_hidden=tuple(self.temp_hidden),
            temperature_floor=self.temperature_floor,
            weighting=self.weighting,
            weight_generator=self.weight_generator,
            attention_dim=self.attention_dim,
            attention_heads=self.attention_heads,
            mlp_hidden=tuple(self.mlp_hidden),
            iterations=self.iterations,
            pipeline=tuple(self.pipeline),
            init_seed=self.init_seed))
        return self

    def _episode(self, X: np.ndarray) -> Episode:
        n, k = self.support_.shape[0], self.support_.shape[1]
        empty = np.empty((0, self.n_features_in_))
        return Episode(
            n_way=n, k_shot=k, seed=int(self.init_seed),
            support=self.support_,
            support_ids=_content_ids(
                self.support_.reshape(n * k, -1)).reshape(n, k),
            query=X,
            query_labels=np.zeros(X.shape[0], dtype=np.int64),
            query_ids=_content_ids(X),
            unlabeled=empty,
            unlabeled_labels=np.empty(0, dtype=np.int64),
            unlabeled_ids=np.empty(0, dtype=np.int64),
            class_map=np.arange(n, dtype=np.int64))

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features; expected {self.n_features_in_}")
        if X.shape[0] == 0:
            return np.empty((0, self.classes_.size))
        with no_grad():
            result = refine_episode(self.model_, self._episode(X))
        return result.a0_scores.data.copy()

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
