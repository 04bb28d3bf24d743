"""Transductive few-shot classification with uncertainty-weighted
iterative prototype refinement.

The public surface re-exported here covers the episode pipeline end to end:
dataset construction and episode sampling, the model bundle, the refinement
loop, episodic training, the evaluation harness, and the sklearn-style
adapter. Deeper pieces (autodiff, layers, metric, augmentation operators)
stay importable from their modules.
"""

from .autodiff import Tensor, no_grad
from .bench import AblationSpec, EvalProtocol, EvalReport, evaluate, run_ablation
from .episodes import (
    Dataset,
    Episode,
    RasterDatasetSpec,
    SyntheticDatasetSpec,
    load_dataset,
    make_raster,
    make_synthetic,
    sample_episode,
    save_dataset,
)
from .estimator import FewShotRefinementClassifier
from .model import Model, ModelConfig
from .refine import RefineResult, refine_episode, refine_with_unlabeled
from .train import TrainConfig, TrainResult, episode_loss, meta_train

__version__ = "0.1.0"

__all__ = [
    "AblationSpec",
    "Dataset",
    "Episode",
    "EvalProtocol",
    "EvalReport",
    "FewShotRefinementClassifier",
    "Model",
    "ModelConfig",
    "RasterDatasetSpec",
    "RefineResult",
    "SyntheticDatasetSpec",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "episode_loss",
    "evaluate",
    "load_dataset",
    "make_raster",
    "make_synthetic",
    "meta_train",
    "no_grad",
    "refine_episode",
    "refine_with_unlabeled",
    "run_ablation",
    "sample_episode",
    "save_dataset",
    "__version__",
]
