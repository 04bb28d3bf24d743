"""Datasets with class-disjoint splits and N-way K-shot episode sampling.

Feature mode draws Gaussian clusters around stored class centers; image mode
renders small procedural textures (per-class oriented sinusoids with
per-instance jitter). Episodes are fully determined by (dataset, seed).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DATASET_FORMAT_VERSION = 1


class SamplingError(ValueError):
    """Episode request cannot be satisfied by the dataset."""


@dataclass
class SyntheticDatasetSpec:
    num_classes: int = 100
    instances_per_class: int = 600
    feature_dim: int = 64
    class_center_scale: float = 1.0
    within_class_sigma: float = 1.0
    split_fractions: tuple[float, float, float] = (0.64, 0.16, 0.20)
    seed: int = 7


@dataclass
class RasterDatasetSpec:
    num_classes: int = 30
    instances_per_class: int = 60
    image_size: int = 32
    channels: int = 3
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 7


@dataclass
class Dataset:
    mode: str                       # "feature" | "image"
    payloads: np.ndarray            # (classes, per_class, *payload_shape)
    splits: dict[str, np.ndarray]   # split name -> class ids
    meta: dict = field(default_factory=dict)
    centers: np.ndarray | None = None

    @property
    def num_classes(self) -> int:
        return self.payloads.shape[0]

    @property
    def instances_per_class(self) -> int:
        return self.payloads.shape[1]

    @property
    def payload_shape(self) -> tuple:
        return self.payloads.shape[2:]

    def classes_in(self, split: str) -> np.ndarray:
        if split not in self.splits:
            raise ValueError(f"unknown split {split!r}; have {sorted(self.splits)}")
        return self.splits[split]

    def uid(self, class_id: int, index: int) -> int:
        return int(class_id) * self.instances_per_class + int(index)


def _split_classes(num_classes: int, fractions, rng: np.random.Generator) -> dict:
    f = np.asarray(fractions, dtype=float)
    if f.size != 3 or np.any(f < 0) or abs(f.sum() - 1.0) > 1e-8:
        raise ValueError(f"split fractions must be 3 non-negative values summing to 1, got {fractions}")
    order = rng.permutation(num_classes)
    n_train = int(round(f[0] * num_classes))
    n_val = int(round(f[1] * num_classes))
    if n_train + n_val > num_classes:
        raise ValueError(f"split fractions {fractions} oversubscribe {num_classes} classes")
    return {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train:n_train + n_val]),
        "test": np.sort(order[n_train + n_val:]),
    }


def make_synthetic(spec: SyntheticDatasetSpec) -> Dataset:
    """Gaussian clusters: centers uniform in a cube, isotropic within-class noise."""
    if spec.num_classes < 1 or spec.instances_per_class < 1 or spec.feature_dim < 1:
        raise ValueError(f"degenerate dataset spec: {spec}")
    if spec.within_class_sigma < 0:
        raise ValueError(f"within_class_sigma must be >= 0, got {spec.within_class_sigma}")
    rng = np.random.default_rng(spec.seed)
    s = spec.class_center_scale
    centers = rng.uniform(-s, s, size=(spec.num_classes, spec.feature_dim))
    noise = rng.normal(0.0, spec.within_class_sigma,
                       size=(spec.num_classes, spec.instances_per_class, spec.feature_dim))
    payloads = centers[:, None, :] + noise
    splits = _split_classes(spec.num_classes, spec.split_fractions, rng)
    meta = {"spec": vars(spec).copy(), "kind": "synthetic"}
    meta["spec"]["split_fractions"] = list(spec.split_fractions)
    return Dataset("feature", payloads, splits, meta, centers=centers)


def make_raster(spec: RasterDatasetSpec) -> Dataset:
    """Procedural texture classes: oriented sinusoid gratings with jitter."""
    if spec.image_size < 4:
        raise ValueError(f"image_size must be >= 4, got {spec.image_size}")
    if spec.channels not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {spec.channels}")
    hw = spec.image_size
    yy, xx = np.mgrid[0:hw, 0:hw] / hw
    payloads = np.empty((spec.num_classes, spec.instances_per_class, hw, hw, spec.channels),
                        dtype=np.uint8)
    for c in range(spec.num_classes):
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, c)))
        freq = rng.uniform(1.5, 5.0, size=2)
        theta = rng.uniform(0.0, np.pi)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=spec.channels)
        amp = rng.uniform(0.6, 1.0)
        u = np.cos(theta) * xx + np.sin(theta) * yy
        v = -np.sin(theta) * xx + np.cos(theta) * yy
        for i in range(spec.instances_per_class):
            jitter = rng.uniform(-0.4, 0.4)
            shift = rng.uniform(-0.05, 0.05, size=2)
            grid = 2.0 * np.pi * (freq[0] * (u + shift[0]) + freq[1] * (v + shift[1]))
            img = np.stack([np.sin(grid + phases[ch] + jitter) for ch in range(spec.channels)],
                           axis=-1)
            img = 127.5 + amp * 110.0 * img
            img += rng.normal(0.0, 8.0, size=img.shape)
            payloads[c, i] = np.clip(np.round(img), 0, 255).astype(np.uint8)
    rng = np.random.default_rng(spec.seed)
    splits = _split_classes(spec.num_classes, spec.split_fractions, rng)
    meta = {"spec": vars(spec).copy(), "kind": "raster"}
    meta["spec"]["split_fractions"] = list(spec.split_fractions)
    return Dataset("image", payloads, splits, meta)


# ----------------------------------------------------------------------
# episodes


@dataclass
class Episode:
    n_way: int
    k_shot: int
    seed: int
    support: np.ndarray           # (N, K, *payload_shape)
    support_ids: np.ndarray       # (N, K) global instance ids
    query: np.ndarray             # (q, *payload_shape)
    query_labels: np.ndarray      # (q,) in 0..N-1
    query_ids: np.ndarray         # (q,)
    unlabeled: np.ndarray         # (U, *payload_shape), possibly U=0
    unlabeled_labels: np.ndarray  # (U,), distractors get sentinel ids >= N
    unlabeled_ids: np.ndarray     # (U,)
    class_map: np.ndarray         # episode class -> original dataset class id

    @property
    def n_query(self) -> int:
        return self.query.shape[0]

    @property
    def n_unlabeled(self) -> int:
        return self.unlabeled.shape[0]

    def fingerprint(self) -> str:
        """Stable digest of the labeled draw (pairing verification).

        Unlabeled pools extend the same draw without altering support or
        query membership, so they are deliberately excluded: episodes that
        differ only in their unlabeled pool compare as paired.
        """
        h = hashlib.blake2b(digest_size=8)
        for arr in (self.support_ids, self.query_ids, self.query_labels,
                    self.class_map[:self.n_way]):
            h.update(np.ascontiguousarray(arr, dtype=np.int64).tobytes())
        return h.hexdigest()


def sample_episode(dataset: Dataset, split: str, n_way: int, k_shot: int,
                   n_query: int, n_unlabeled: int = 0, distractors: int = 0,
                   seed: int = 0) -> Episode:
    """Draw an N-way K-shot episode with optional unlabeled pool.

    ``n_unlabeled`` is the total across the N episode classes and must divide
    evenly; each distractor class contributes the same per-class count under
    sentinel labels >= N. Support/query membership is invariant to the
    unlabeled settings for a fixed seed.
    """
    if n_way < 2:
        raise ValueError(f"n_way must be >= 2, got {n_way}")
    if k_shot < 1:
        raise ValueError(f"k_shot must be >= 1, got {k_shot}")
    if n_query < 1:
        raise ValueError(f"n_query must be >= 1, got {n_query}")
    if n_unlabeled < 0 or distractors < 0:
        raise ValueError("n_unlabeled and distractors must be >= 0")
    if n_unlabeled % n_way != 0:
        raise ValueError(
            f"n_unlabeled={n_unlabeled} must divide evenly over n_way={n_way} classes")
    if distractors > 0 and n_unlabeled == 0:
        raise ValueError("distractor classes need a nonzero unlabeled count")

    pool = dataset.classes_in(split)
    if n_way + distractors > pool.size:
        raise SamplingError(
            f"split {split!r} has {pool.size} classes; need {n_way}+{distractors}")

    rng = np.random.default_rng(seed)
    order = pool[rng.permutation(pool.size)]
    episode_classes = order[:n_way]
    distractor_classes = order[n_way:n_way + distractors]
    u_pc = n_unlabeled // n_way

    per_class = dataset.instances_per_class
    base_q, extra = divmod(n_query, n_way)

    support, support_ids = [], []
    query, query_labels, query_ids = [], [], []
    unlabeled, unlabeled_labels, unlabeled_ids = [], [], []

    for pos, cls in enumerate(episode_classes):
        q_c = base_q + (1 if pos < extra else 0)
        need = k_shot + q_c + u_pc
        if need > per_class:
            raise SamplingError(
                f"class {cls} has {per_class} instances; episode needs {need} "
                f"({k_shot} support + {q_c} query + {u_pc} unlabeled)")
        perm = rng.permutation(per_class)
        s_idx = perm[:k_shot]
        q_idx = perm[k_shot:k_shot + q_c]
        u_idx = perm[k_shot + q_c:k_shot + q_c + u_pc]
        support.append(dataset.payloads[cls][s_idx])
        support_ids.append([dataset.uid(cls, i) for i in s_idx])
        query.append(dataset.payloads[cls][q_idx])
        query_labels.extend([pos] * q_c)
        query_ids.extend(dataset.uid(cls, i) for i in q_idx)
        unlabeled.append(dataset.payloads[cls][u_idx])
        unlabeled_labels.extend([pos] * u_pc)
        unlabeled_ids.extend(dataset.uid(cls, i) for i in u_idx)

    for rank, cls in enumerate(distractor_classes):
        if u_pc > per_class:
            raise SamplingError(
                f"distractor class {cls} has {per_class} instances; needs {u_pc}")
        perm = rng.permutation(per_class)
        u_idx = perm[:u_pc]
        unlabeled.append(dataset.payloads[cls][u_idx])
        unlabeled_labels.extend([n_way + rank] * u_pc)
        unlabeled_ids.extend(dataset.uid(cls, i) for i in u_idx)

    payload_shape = dataset.payload_shape
    return Episode(
        n_way=n_way, k_shot=k_shot, seed=int(seed),
        support=np.stack(support),
        support_ids=np.asarray(support_ids, dtype=np.int64),
        query=np.concatenate(query),
        query_labels=np.asarray(query_labels, dtype=np.int64),
        query_ids=np.asarray(query_ids, dtype=np.int64),
        unlabeled=(np.concatenate(unlabeled) if unlabeled and sum(len(u) for u in unlabeled)
                   else np.empty((0, *payload_shape), dtype=dataset.payloads.dtype)),
        unlabeled_labels=np.asarray(unlabeled_labels, dtype=np.int64),
        unlabeled_ids=np.asarray(unlabeled_ids, dtype=np.int64),
        class_map=np.concatenate([episode_classes, distractor_classes]).astype(np.int64),
    )


# ----------------------------------------------------------------------
# persistence


def save_dataset(path, dataset: Dataset) -> None:
    """Versioned container: payload arrays plus a JSON header."""
    header = {
        "format_version": DATASET_FORMAT_VERSION,
        "mode": dataset.mode,
        "meta": dataset.meta,
        "splits": {k: v.tolist() for k, v in dataset.splits.items()},
    }
    arrays = {"payloads": dataset.payloads,
              "header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    if dataset.centers is not None:
        arrays["centers"] = dataset.centers
    np.savez_compressed(path, **arrays)


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        version = header.get("format_version")
        if version != DATASET_FORMAT_VERSION:
            raise ValueError(
                f"unsupported dataset format_version {version!r} in {path} "
                f"(expected {DATASET_FORMAT_VERSION})")
        payloads = z["payloads"]
        centers = z["centers"] if "centers" in z.files else None
    splits = {k: np.asarray(v, dtype=np.int64) for k, v in header["splits"].items()}
    return Dataset(header["mode"], payloads, splits, header["meta"], centers=centers)
