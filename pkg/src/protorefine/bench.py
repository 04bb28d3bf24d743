"""Evaluation protocol, confidence intervals, ablation sweeps, and export."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import get_context

import numpy as np

from .autodiff import no_grad
from .episodes import Dataset, sample_episode
from .metric import predict_labels
from .model import Model, ModelConfig
from .refine import refine_episode

DEFAULT_EPISODES = 600
QUICK_EPISODES = 100

# the inductive baseline scores queries by the augmentation-averaged member
# mean; transductive variants predict from the unaugmented member
DEFAULT_CELL_OVERRIDES = {
    "uncertainty_onoff": {"inductive_baseline": {"predict": "ensemble_mean"}},
}

ABLATION_AXES = ("T_sweep", "augmentation_sets", "uncertainty_onoff",
                 "weight_generator_variant", "semi_supervised")


@dataclass(frozen=True)
class EvalProtocol:
    """Episode shape and prediction rule for one evaluation run."""

    n_way: int = 5
    k_shot: int = 1
    n_query: int = 15
    n_unlabeled: int = 0
    distractors: int = 0
    iterations: int | None = None      # None: the model's configured T
    predict: str = "a0"                # "a0" or "ensemble_mean"
    pipeline: tuple = ()               # (): the model's configured pipeline

    def __post_init__(self):
        if self.predict not in ("a0", "ensemble_mean"):
            raise ValueError(f"unknown predict rule {self.predict!r}")


@dataclass(frozen=True)
class EpisodeRecord:
    index: int
    seed: int
    accuracy: float      # percentage
    fingerprint: str


@dataclass
class EvalReport:
    """Aggregate accuracy with a normal-approximation 95% interval."""

    accuracy: float      # mean percentage over episodes
    ci95: float          # 1.96 * sample stddev / sqrt(n); 0 when n <= 1
    n_episodes: int
    seed: int
    config_fingerprint: str
    elapsed_s: float
    records: list = field(default_factory=list)

    def to_dict(self, include_records: bool = True) -> dict:
        out = {
            "accuracy": self.accuracy,
            "ci95": self.ci95,
            "n_episodes": self.n_episodes,
            "seed": self.seed,
            "config_fingerprint": self.config_fingerprint,
            "elapsed_s": self.elapsed_s,
        }
        if include_records:
            out["records"] = [asdict(r) for r in self.records]
        return out


def ci95_half_width(values: np.ndarray) -> float:
    """1.96 * s / sqrt(n); zero for n <= 1 (no spread estimate)."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n <= 1:
        return 0.0
    return float(1.96 * values.std(ddof=1) / np.sqrt(n))


def episode_seed(master_seed: int, index: int) -> int:
    """Independent per-episode seed; identical across runs and cells."""
    return int(np.random.SeedSequence((int(master_seed), int(index))).generate_state(1)[0])


def config_fingerprint(model_config: dict, protocol: EvalProtocol, split: str,
                       episodes: int, seed: int, dataset_meta: dict) -> str:
    blob = json.dumps({
        "model": model_config,
        "protocol": asdict(protocol),
        "split": split,
        "episodes": episodes,
        "seed": seed,
        "dataset": dataset_meta,
    }, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _score_episode(model: Model, dataset: Dataset, split: str,
                   protocol: EvalProtocol, index: int, master_seed: int) -> tuple:
    seed = episode_seed(master_seed, index)
    episode = sample_episode(
        dataset, split, protocol.n_way, protocol.k_shot, protocol.n_query,
        n_unlabeled=protocol.n_unlabeled, distractors=protocol.distractors,
        seed=seed)
    with no_grad():
        result = refine_episode(
            model, episode,
            iterations=protocol.iterations,
            pipeline=protocol.pipeline or None,
            use_unlabeled=protocol.n_unlabeled > 0)
    q = episode.n_query
    if protocol.predict == "a0":
        scores = result.a0_scores.data[:q]
    else:
        scores = result.scores.data[:q].mean(axis=1)
    predicted = predict_labels(scores)
    accuracy = 100.0 * float(np.mean(predicted == episode.query_labels))
    return index, seed, accuracy, episode.fingerprint()


# worker-process state, installed once per process by the pool initializer
_WORKER: dict = {}


def _worker_init(config_dict: dict, state: dict, dataset: Dataset, split: str,
                 protocol: EvalProtocol, master_seed: int) -> None:
    model = Model(ModelConfig.from_dict(config_dict))
    model.params.load_values(state)
    _WORKER.update(model=model, dataset=dataset, split=split,
                   protocol=protocol, master_seed=master_seed)


def _worker_score(index: int) -> tuple:
    w = _WORKER
    return _score_episode(w["model"], w["dataset"], w["split"], w["protocol"],
                          index, w["master_seed"])


def evaluate(model: Model, dataset: Dataset, split: str = "test",
             protocol: EvalProtocol = EvalProtocol(),
             episodes: int = DEFAULT_EPISODES, seed: int = 0,
             workers: int = 1) -> EvalReport:
    """Score ``episodes`` random episodes and aggregate mean accuracy.

    Per-episode work depends only on (parameters, dataset, split, protocol,
    per-episode seed); records are reduced in index order, so reports are
    identical for any worker count.
    """
    if episodes < 0:
        raise ValueError(f"episodes must be >= 0, got {episodes}")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    start = time.perf_counter()
    if workers == 1 or episodes <= 1:
        rows = [_score_episode(model, dataset, split, protocol, e, seed)
                for e in range(episodes)]
    else:
        ctx = get_context("fork")
        initargs = (model.config_dict(), model.params.state_values(),
                    dataset, split, protocol, seed)
        chunk = max(1, episodes // (workers * 4))
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx,
                                 initializer=_worker_init,
                                 initargs=initargs) as pool:
            rows = list(pool.map(_worker_score, range(episodes), chunksize=chunk))
    rows.sort(key=lambda r: r[0])
    records = [EpisodeRecord(*r) for r in rows]
    values = np.array([r.accuracy for r in records], dtype=np.float64)
    mean = float(values.mean()) if episodes else 0.0
    return EvalReport(
        accuracy=mean,
        ci95=ci95_half_width(values),
        n_episodes=episodes,
        seed=seed,
        config_fingerprint=config_fingerprint(
            model.config_dict(), protocol, split, episodes, seed,
            dataset.meta),
        elapsed_s=time.perf_counter() - start,
        records=records,
    )


# ----------------------------------------------------------------------
# ablation sweeps


@dataclass
class AblationSpec:
    """One sweep axis with a value grid; all cells share episode seeds."""

    axis: str
    grid: tuple
    episodes: int = DEFAULT_EPISODES
    seed: int = 0
    protocol: EvalProtocol = EvalProtocol()
    cell_overrides: dict | None = None  # label -> protocol field overrides

    def __post_init__(self):
        if self.axis not in ABLATION_AXES:
            raise ValueError(
                f"unknown ablation axis {self.axis!r}; expected one of {ABLATION_AXES}")
        if not self.grid:
            raise ValueError("ablation grid must be non-empty")


@dataclass
class AblationResult:
    axis: str
    cells: list  # (label, EvalReport) in grid order

    def summary_rows(self) -> list[dict]:
        return [{"cell": label, "accuracy": rep.accuracy, "ci95": rep.ci95,
                 "n_episodes": rep.n_episodes, "seed": rep.seed,
                 "config_fingerprint": rep.config_fingerprint}
                for label, rep in self.cells]

    def write_csv(self, path) -> None:
        """One row per (cell, episode)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["axis", "cell", "episode", "seed", "accuracy",
                             "fingerprint"])
            for label, rep in self.cells:
                for rec in rep.records:
                    writer.writerow([self.axis, label, rec.index, rec.seed,
                                     f"{rec.accuracy:.10g}", rec.fingerprint])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"axis": self.axis, "cells": self.summary_rows()},
                      fh, indent=2)
            fh.write("\n")


def _cell_plan(spec: AblationSpec, models) -> list[tuple]:
    """Expand the grid into (label, model, protocol) triples."""
    base = spec.protocol
    overrides = spec.cell_overrides
    if overrides is None:
        overrides = DEFAULT_CELL_OVERRIDES.get(spec.axis, {})

    def pick_model(label):
        if isinstance(models, dict):
            if label not in models:
                raise ValueError(f"no model supplied for cell {label!r}")
            return models[label]
        return models

    plan = []
    for value in spec.grid:
        if spec.axis == "T_sweep":
            label, proto = f"T={int(value)}", replace(base, iterations=int(value))
            model = pick_model(label)
        elif spec.axis == "augmentation_sets":
            ops = (value,) if isinstance(value, str) else tuple(value)
            label, proto = ",".join(str(v) for v in ops), replace(base, pipeline=ops)
            model = pick_model(label)
        elif spec.axis == "semi_supervised":
            u = int(value)
            # the supervised cell cannot carry distractor classes
            proto = replace(base, n_unlabeled=u, distractors=base.distractors if u else 0)
            label = f"u={u}"
            model = pick_model(label)
        else:  # uncertainty_onoff, weight_generator_variant: cells are models
            label, proto = str(value), base
            model = pick_model(label)
        for key, val in overrides.get(label, {}).items():
            proto = replace(proto, **{key: val})
        plan.append((label, model, proto))
    return plan


def run_ablation(spec: AblationSpec, models, dataset: Dataset,
                 split: str = "test", workers: int = 1) -> AblationResult:
    """Evaluate every grid cell with shared episode seeds.

    ``models`` is a single Model for protocol axes (T_sweep,
    augmentation_sets, semi_supervised) or a dict label -> Model for the
    variant axes. Pairing is verified: episode e must draw the same labeled
    instances in every cell.
    """
    cells = []
    for label, model, proto in _cell_plan(spec, models):
        report = evaluate(model, dataset, split, proto,
                          episodes=spec.episodes, seed=spec.seed,
                          workers=workers)
        cells.append((label, report))
    first = cells[0][1].records
    for label, rep in cells[1:]:
        for a, b in zip(first, rep.records):
            if a.fingerprint != b.fingerprint:
                raise RuntimeError(
                    f"cell {label!r} episode {b.index} broke pairing: "
                    f"{b.fingerprint} != {a.fingerprint}")
    return AblationResult(axis=spec.axis, cells=cells)


# ----------------------------------------------------------------------
# weight/uncertainty distribution export


def export_mi_distribution(models: dict, dataset: Dataset, path,
                           split: str = "test", episodes: int = 0,
                           top_k: int = 3, seed: int = 0,
                           protocol: EvalProtocol = EvalProtocol()) -> int:
    """CSV of the top-k queries per episode ranked by their class-0 weight.

    Rows are (variant, episode, rank, mi, weight) taken from the last
    refinement iteration, enabling external distribution plots. Returns the
    number of data rows written.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    rows_written = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "episode", "rank", "mi", "weight"])
        for variant, model in models.items():
            iterations = (protocol.iterations if protocol.iterations is not None
                          else model.config.iterations)
            if iterations < 1:
                raise ValueError(
                    f"variant {variant!r} needs at least one refinement iteration")
            for e in range(episodes):
                ep = sample_episode(
                    dataset, split, protocol.n_way, protocol.k_shot,
                    protocol.n_query, n_unlabeled=protocol.n_unlabeled,
                    distractors=protocol.distractors,
                    seed=episode_seed(seed, e))
                with no_grad():
                    result = refine_episode(
                        model, ep, iterations=iterations,
                        pipeline=protocol.pipeline or None,
                        use_unlabeled=protocol.n_unlabeled > 0)
                weights = result.weight_history[-1]   # (N, q)
                mi = result.mi_history[-1]            # (q,)
                k = min(top_k, weights.shape[1])
                top = np.argsort(-weights[0], kind="stable")[:k]
                for rank, idx in enumerate(top, start=1):
                    writer.writerow([variant, e, rank,
                                     f"{mi[idx]:.12g}",
                                     f"{weights[0, idx]:.12g}"])
                    rows_written += 1
    return rows_written
