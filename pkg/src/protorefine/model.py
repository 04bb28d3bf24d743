"""Model bundle: encoder, temperature net, weight generator, pipeline."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import build_pipeline, default_pipeline
from .autodiff import ParamSet
from .checkpoint import load_checkpoint, save_checkpoint
from .encoders import build_encoder
from .metric import TemperatureNet
from .refine import AttentionWeightGenerator, MlpWeightGenerator


@dataclass
class ModelConfig:
    mode: str = "feature"                 # payload mode: feature | image
    feature_dim: int = 64                 # embedding dimension d
    input_shape: tuple | None = None      # raster payload shape (H, W, C)
    encoder: str = "identity"             # identity | mlp
    encoder_hidden: tuple = (256, 128)
    temp_hidden: tuple = (512, 128)
    temperature_floor: float = 1e-3
    weighting: str = "mi"                 # mi: w = h(I) * avg; scores: w = avg
    weight_generator: str = "attention"   # attention | mlp
    attention_dim: int = 128
    attention_heads: int = 4
    mlp_hidden: tuple = (128, 128)
    iterations: int = 6
    pipeline: tuple = ()                  # op specs; () selects the mode default
    init_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("feature", "image"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.weighting not in ("mi", "scores"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.weight_generator not in ("attention", "mlp"):
            raise ValueError(f"unknown weight_generator {self.weight_generator!r}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.mode == "image" and self.input_shape is None:
            raise ValueError("image mode needs an input_shape")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("encoder_hidden", "temp_hidden", "mlp_hidden", "pipeline"):
            if key in d and d[key] is not None:
                d[key] = tuple(tuple(v) if isinstance(v, list) else v for v in d[key]) \
                    if key == "pipeline" else tuple(d[key])
        if d.get("input_shape") is not None:
            d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)


class Model:
    """All trainable parts plus the augmentation pipeline, on one ParamSet."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params = ParamSet()
        rng = np.random.default_rng(config.init_seed)
        self.encoder = build_encoder(
            config.encoder, self.params, feature_dim=config.feature_dim,
            input_shape=config.input_shape, hidden=config.encoder_hidden, rng=rng)
        self.temperature = TemperatureNet(
            self.params, config.feature_dim, hidden=config.temp_hidden,
            floor=config.temperature_floor, rng=rng)
        if config.weighting == "mi":
            if config.weight_generator == "attention":
                self.weight_gen = AttentionWeightGenerator(
                    self.params, embed_dim=config.attention_dim,
                    heads=config.attention_heads, rng=rng)
            else:
                self.weight_gen = MlpWeightGenerator(
                    self.params, hidden=config.mlp_hidden, rng=rng)
        else:
            self.weight_gen = None
        self.pipeline = self.build_pipeline(config.pipeline or None)

    def build_pipeline(self, op_specs):
        """Built operator list; None selects the mode default."""
        if op_specs is None or (isinstance(op_specs, (tuple, list)) and not op_specs):
            return default_pipeline(self.config.mode)
        if isinstance(op_specs, (tuple, list)) and op_specs and \
                hasattr(op_specs[0], "stream"):
            return list(op_specs)  # already built
        return build_pipeline(list(op_specs), self.config.mode)

    # ------------------------------------------------------------------
    # persistence

    def config_dict(self) -> dict:
        """JSON-safe copy of the configuration (tuples become lists)."""
        cfg = asdict(self.config)
        cfg["input_shape"] = list(self.config.input_shape) if self.config.input_shape else None
        for key in ("encoder_hidden", "temp_hidden", "mlp_hidden"):
            cfg[key] = list(cfg[key])
        cfg["pipeline"] = [dict(s) if isinstance(s, dict) else s
                           for s in self.config.pipeline]
        return cfg

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"model_config": self.config_dict()}
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> tuple["Model", dict]:
        values, step, meta = load_checkpoint(path)
        if "model_config" not in meta:
            raise ValueError(f"checkpoint {path} has no model_config metadata")
        model = cls(ModelConfig.from_dict(meta["model_config"]))
        model.params.load_values(values)
        model.params.step = step
        return model, meta
