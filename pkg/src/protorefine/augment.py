"""Label-preserving augmentation operators for raster images and feature vectors.

Images are (H, W, C) uint8 arrays with C in {1, 3}; features are 1-D float
vectors. Every operator preserves shape and dtype, and stochastic operators
are fully determined by their integer seed. Repeated operators in a pipeline
draw from distinct streams via their pipeline position.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


class AugmentationOp:
    """A named operator with validated parameters and a stream index."""

    def __init__(self, name: str, params: dict[str, float], stream: int = 0):
        self.name = name
        self.params = dict(params)
        self.stream = int(stream)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"AugmentationOp({self.name}{', ' + inner if inner else ''})"


# operator registry: name -> (mode, {param: default})
_IMAGE_OPS: dict[str, dict[str, float]] = {
    "Id": {},
    "F": {},
    "Eq": {},
    "X": {"a": 0.68},
    "Co": {"factor": 3.0},
    "Cr": {"factor": 2.0},
    "Br": {"factor": 1.5},
    "I": {"alpha": 0.5},
    "Cu": {"a": 0.3},
    "B": {"radius": 2.0, "alpha": 0.5},
}
_FEATURE_OPS: dict[str, dict[str, float]] = {
    "Id": {},
    "FN": {"sigma": 0.1},
    "FM": {"rho": 0.25},
}


def _registry(mode: str) -> dict[str, dict[str, float]]:
    if mode == "image":
        return _IMAGE_OPS
    if mode == "feature":
        return _FEATURE_OPS
    raise ValueError(f"unknown augmentation mode: {mode!r}")


def make_op(spec, mode: str, stream: int = 0) -> AugmentationOp:
    """Build an operator from a name or a {name, **params} mapping."""
    if isinstance(spec, str):
        name, given = spec, {}
    elif isinstance(spec, dict):
        spec = dict(spec)
        name = spec.pop("name", None)
        given = spec
        if name is None:
            raise ValueError("augmentation spec mapping needs a 'name' key")
    elif isinstance(spec, AugmentationOp):
        name, given = spec.name, spec.params
    else:
        raise ValueError(f"cannot build augmentation from {spec!r}")

    registry = _registry(mode)
    if name not in registry:
        raise ValueError(
            f"unknown {mode}-mode augmentation {name!r}; "
            f"choices: {sorted(registry)}"
        )
    params = dict(registry[name])
    for key, value in given.items():
        if key not in params:
            raise ValueError(f"operator {name!r} has no parameter {key!r}")
        params[key] = float(value)
    _validate_params(name, params)
    return AugmentationOp(name, params, stream)


def _validate_params(name: str, params: dict[str, float]) -> None:
    if name in ("Co", "Cr", "Br") and params["factor"] < 0.0:
        raise ValueError(f"{name}: enhancement factor must be >= 0, got {params['factor']}")
    if name == "I" and not 0.0 <= params["alpha"] <= 1.0:
        raise ValueError(f"I: alpha must be in [0, 1], got {params['alpha']}")
    if name == "B":
        if params["radius"] <= 0.0:
            raise ValueError(f"B: radius must be positive, got {params['radius']}")
        if not 0.0 <= params["alpha"] <= 1.0:
            raise ValueError(f"B: alpha must be in [0, 1], got {params['alpha']}")
    if name in ("X", "Cu") and params["a"] > 1.0:
        raise ValueError(f"{name}: relative size a must be <= 1, got {params['a']}")
    if name == "FN" and params["sigma"] < 0.0:
        raise ValueError(f"FN: sigma must be >= 0, got {params['sigma']}")
    if name == "FM" and not 0.0 <= params["rho"] <= 1.0:
        raise ValueError(f"FM: rho must be in [0, 1], got {params['rho']}")


def default_pipeline(mode: str) -> list[AugmentationOp]:
    """The default ensemble: identity plus the standard operator set."""
    if mode == "image":
        names = ["F", "Eq", "Co", "X"]
    elif mode == "feature":
        names = ["FN", "FM", "FN"]
    else:
        raise ValueError(f"unknown augmentation mode: {mode!r}")
    return build_pipeline(names, mode)


def build_pipeline(op_specs, mode: str) -> list[AugmentationOp]:
    """Identity followed by the declared operators (streams = positions)."""
    ops = [make_op("Id", mode, stream=0)]
    for i, spec in enumerate(op_specs):
        op = make_op(spec, mode, stream=i + 1)
        if op.name == "Id":
            raise ValueError("identity is implicit; do not declare it in the pipeline")
        ops.append(op)
    if len(ops) < 2:
        raise ValueError("pipeline needs at least one operator besides identity")
    return ops


# ----------------------------------------------------------------------
# image operators


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise ValueError(f"image must be uint8, got {image.dtype}")
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"image must be (H, W, C) with C in {{1, 3}}, got {image.shape}")
    if image.shape[0] < 2 or image.shape[1] < 2:
        raise ValueError(f"image sides must be >= 2 pixels, got {image.shape}")
    return image


def _op_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(stream))))


def _blend(original: np.ndarray, degenerate: np.ndarray, factor: float) -> np.ndarray:
    """degenerate + factor * (original - degenerate), clamped to uint8 range."""
    out = degenerate + factor * (original.astype(np.float64) - degenerate)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def _luminance(image: np.ndarray) -> np.ndarray:
    if image.shape[2] == 1:
        return image[..., 0].astype(np.float64)
    w = np.array([0.299, 0.587, 0.114])
    return image.astype(np.float64) @ w


def _equalize_channel(channel: np.ndarray) -> np.ndarray:
    hist = np.bincount(channel.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    nonzero = cdf[hist > 0]
    cdf_min = nonzero[0]
    total = channel.size
    if cdf_min == total:  # constant channel
        return channel
    remap = np.round((cdf - cdf_min) / (total - cdf_min) * 255.0)
    return np.clip(remap, 0, 255).astype(np.uint8)[channel]


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize; exact identity when sizes match."""
    h, w, c = image.shape
    ys = np.arange(out_h) * ((h - 1) / (out_h - 1)) if out_h > 1 else np.zeros(1)
    xs = np.arange(out_w) * ((w - 1) / (out_w - 1)) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    img = image.astype(np.float64)
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    out = top * (1 - wy) + bottom * wy
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def apply(op: AugmentationOp, image: np.ndarray, seed: int) -> np.ndarray:
    """Apply an image-mode operator; returns a new (H, W, C) uint8 array."""
    image = check_image(image)
    name = op.name
    if name not in _IMAGE_OPS:
        raise ValueError(f"{name!r} is not an image-mode operator")
    if name == "Id":
        return image.copy()
    if name == "F":
        return np.flip(image, axis=1).copy()  # mirror across the vertical axis
    if name == "Eq":
        out = np.empty_like(image)
        for ch in range(image.shape[2]):
            out[..., ch] = _equalize_channel(image[..., ch])
        return out
    if name == "X":
        h, w, _ = image.shape
        a = op.params["a"]
        ch, cw = int(a * h), int(a * w)
        if ch < 1 or cw < 1:
            raise ValueError(f"X: a={a} yields an empty crop for image {image.shape}")
        rng = _op_rng(seed, op.stream)
        i = int(rng.integers(0, h - ch + 1))
        j = int(rng.integers(0, w - cw + 1))
        return resize_bilinear(image[i:i + ch, j:j + cw], h, w)
    if name == "Co":
        if image.shape[2] == 1:
            return image.copy()  # no chroma to adjust
        lum = _luminance(image)[..., None]
        return _blend(image, np.broadcast_to(lum, image.shape), op.params["factor"])
    if name == "Cr":
        gray = float(_luminance(image).mean())
        return _blend(image, np.full(image.shape, gray), op.params["factor"])
    if name == "Br":
        return _blend(image, np.zeros(image.shape), op.params["factor"])
    if name == "I":
        alpha = op.params["alpha"]
        inverted = 255.0 - image.astype(np.float64)
        out = alpha * image.astype(np.float64) + (1.0 - alpha) * inverted
        return np.clip(np.round(out), 0, 255).astype(np.uint8)
    if name == "Cu":
        h, w, _ = image.shape
        side = int(op.params["a"] * min(h, w))
        if side < 1:
            raise ValueError(f"Cu: a={op.params['a']} yields an empty patch")
        rng = _op_rng(seed, op.stream)
        i = int(rng.integers(0, h - side + 1))
        j = int(rng.integers(0, w - side + 1))
        out = image.copy()
        out[i:i + side, j:j + side, :] = 127
        return out
    if name == "B":
        sigma = op.params["radius"]
        blurred = np.empty_like(image, dtype=np.float64)
        for ch in range(image.shape[2]):
            blurred[..., ch] = ndimage.gaussian_filter(
                image[..., ch].astype(np.float64), sigma=sigma, mode="nearest")
        alpha = op.params["alpha"]
        out = alpha * image.astype(np.float64) + (1.0 - alpha) * blurred
        return np.clip(np.round(out), 0, 255).astype(np.uint8)
    raise ValueError(f"unhandled operator {name!r}")


# ----------------------------------------------------------------------
# feature operators


def apply_feature(op: AugmentationOp, features: np.ndarray, seed: int) -> np.ndarray:
    """Apply a feature-mode operator; returns a new 1-D float64 vector."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ValueError(f"feature vector must be 1-D, got shape {features.shape}")
    name = op.name
    if name not in _FEATURE_OPS:
        raise ValueError(f"{name!r} is not a feature-mode operator")
    if name == "Id":
        return features.copy()
    if name == "FN":
        rng = _op_rng(seed, op.stream)
        return features + rng.normal(0.0, op.params["sigma"], features.shape)
    if name == "FM":
        d = features.size
        k = int(round(op.params["rho"] * d))
        rng = _op_rng(seed, op.stream)
        out = features.copy()
        if k > 0:
            idx = rng.choice(d, size=k, replace=False)
            out[idx] = 0.0
        return out
    raise ValueError(f"unhandled operator {name!r}")


def apply_any(op: AugmentationOp, payload: np.ndarray, mode: str, seed: int) -> np.ndarray:
    """Dispatch on pipeline mode."""
    if mode == "image":
        return apply(op, payload, seed)
    if mode == "feature":
        return apply_feature(op, payload, seed)
    raise ValueError(f"unknown augmentation mode: {mode!r}")


# ----------------------------------------------------------------------
# batched ensemble path
#
# The refinement loop augments whole instance batches each iteration. Draws
# are made in ascending-uid order from one generator per (seed, stream), so
# the result for a given instance does not depend on its position in the
# batch: permuting the batch permutes the output rows and nothing else.


def apply_feature_batch(op: AugmentationOp, features: np.ndarray,
                        uids: np.ndarray, seed: int) -> np.ndarray:
    """Vectorized feature-mode application with order-invariant draws."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"feature batch must be (n, d), got {features.shape}")
    n, d = features.shape
    uids = np.asarray(uids)
    if uids.shape != (n,):
        raise ValueError(f"uids must be ({n},), got {uids.shape}")
    name = op.name
    if name not in _FEATURE_OPS:
        raise ValueError(f"{name!r} is not a feature-mode operator")
    if name == "Id":
        return features.copy()
    order = np.argsort(uids, kind="stable")
    rng = _op_rng(seed, op.stream)
    out = features.copy()
    if name == "FN":
        noise = rng.normal(0.0, op.params["sigma"], (n, d))
        out[order] += noise
        return out
    if name == "FM":
        k = int(round(op.params["rho"] * d))
        if k > 0:
            scores = rng.random((n, d))
            masked = np.argpartition(scores, k - 1, axis=1)[:, :k]
            rows = np.repeat(order, k)
            out[rows, masked.ravel()] = 0.0
        return out
    raise ValueError(f"unhandled operator {name!r}")


def apply_image_batch(op: AugmentationOp, images: np.ndarray,
                      uids: np.ndarray, seed: int) -> np.ndarray:
    """Image-mode batch application; per-instance seeds drawn in uid order."""
    images = np.asarray(images)
    if images.ndim != 4:
        raise ValueError(f"image batch must be (n, H, W, C), got {images.shape}")
    n = images.shape[0]
    uids = np.asarray(uids)
    if uids.shape != (n,):
        raise ValueError(f"uids must be ({n},), got {uids.shape}")
    order = np.argsort(uids, kind="stable")
    rng = _op_rng(seed, op.stream)
    sub_seeds = rng.integers(0, 2 ** 63 - 1, size=n)
    out = np.empty_like(images)
    for rank, idx in enumerate(order):
        out[idx] = apply(op, images[idx], int(sub_seeds[rank]))
    return out


def apply_batch(op: AugmentationOp, payloads: np.ndarray, uids: np.ndarray,
                mode: str, seed: int) -> np.ndarray:
    if mode == "image":
        return apply_image_batch(op, payloads, uids, seed)
    if mode == "feature":
        return apply_feature_batch(op, payloads, uids, seed)
    raise ValueError(f"unknown augmentation mode: {mode!r}")
