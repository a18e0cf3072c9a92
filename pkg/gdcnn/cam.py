"""
Class activation mapping: the class-weighted sum of the last conv featuremaps,
the check that its total equals the class score, upsampling to input resolution,
normalization and graymap rendering.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Literal, NamedTuple, Optional

import numpy as np

from . import tensor as T
from .errors import CamError, ShapeError
from .logger import setup_logger
from .model import ModelConfig, Parameters, Prediction, forward
from .pgm import write_pgm

logger = setup_logger(__name__)

CAM_SUFFIX = "_cam.pgm"
OVERLAY_SUFFIX = "_overlay.pgm"


@dataclass(frozen=True)
class Heatmap:
    values: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


class ScoreIdentity(NamedTuple):
    score: float  # class score from the pooled features
    map_total: float  # sum of the raw map over all positions

    def holds(self, rtol: float = 1e-4, atol: float = 1e-6) -> bool:
        return abs(self.map_total - self.score) <= rtol * abs(self.score) + atol


def _check_weights(featuremaps: np.ndarray, class_weights: np.ndarray):
    if featuremaps.ndim != 3:
        raise ShapeError(f"featuremaps: expected [K,H,W], got {featuremaps.shape}")
    if class_weights.shape != (featuremaps.shape[0],):
        raise ShapeError(f"K: featuremaps have {featuremaps.shape[0]} maps, class weights {class_weights.shape}")


def compute_cam(featuremaps: np.ndarray, class_weights: np.ndarray) -> np.ndarray:
    """Raw map sum_k w[k] * featuremaps[k]; negatives are kept"""
    _check_weights(featuremaps, class_weights)
    return np.tensordot(class_weights, featuremaps, axes=1)


def cam_score_identity(featuremaps: np.ndarray, class_weights: np.ndarray) -> ScoreIdentity:
    """Class score and map total, evaluated independently in float64"""
    _check_weights(featuremaps, class_weights)
    f = featuremaps.astype(np.float64)
    w = class_weights.astype(np.float64)
    score = float(np.dot(w, T.gap(f)))
    map_total = float(compute_cam(f, w).sum())
    return ScoreIdentity(score=score, map_total=map_total)


def _sample_positions(source: int, target: int) -> np.ndarray:
    # corner-aligned: first and last samples land on the first and last source pixels
    if target == 1 or source == 1:
        return np.zeros(target)
    return np.arange(target) * ((source - 1) / (target - 1))


def upsample_bilinear(raw: np.ndarray, size: tuple[int, int] = (137, 137),
                      method: Literal["bilinear", "nearest"] = "bilinear") -> np.ndarray:
    """Resample a 2-D map to `size` (height, width)"""
    if raw.ndim != 2 or raw.shape[0] < 1 or raw.shape[1] < 1:
        raise ShapeError(f"map must be a non-empty 2-D grid, got {raw.shape}")
    h, w = raw.shape
    th, tw = size
    if (h, w) == (th, tw):
        return raw.astype(T.DTYPE, copy=True)

    ys = _sample_positions(h, th)
    xs = _sample_positions(w, tw)
    grid = raw.astype(np.float64)
    if method == "nearest":
        out = grid[np.ix_(np.rint(ys).astype(int), np.rint(xs).astype(int))]
        return out.astype(T.DTYPE)
    if method != "bilinear":
        raise ValueError(f"unknown upsampling method {method!r}")

    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - wx) + grid[np.ix_(y0, x1)] * wx
    bottom = grid[np.ix_(y1, x0)] * (1 - wx) + grid[np.ix_(y1, x1)] * wx
    out = top * (1 - wy) + bottom * wy
    # interpolation never leaves the source range
    return np.clip(out, grid.min(), grid.max()).astype(T.DTYPE)


def normalize_heatmap(raw: np.ndarray) -> Heatmap:
    """(v - min) / (max - min); a constant map becomes all zeros"""
    values = np.asarray(raw, dtype=np.float64)
    low, high = values.min(), values.max()
    if high == low:
        return Heatmap(values=np.zeros(values.shape, dtype=T.DTYPE))
    return Heatmap(values=((values - low) / (high - low)).astype(T.DTYPE))


def render_overlay(image: np.ndarray, heatmap: Heatmap, path) -> tuple[Path, Path]:
    """Write `<path>_cam.pgm` (original | heatmap) and `<path>_overlay.pgm` (0.5 image + 0.5 heat)"""
    plane = image[0] if image.ndim == 3 else image
    if plane.shape != heatmap.values.shape:
        raise ShapeError(f"heatmap {heatmap.values.shape} does not match image {plane.shape}")
    path = Path(path)
    side_by_side = np.concatenate([plane, heatmap.values], axis=1)
    overlay = 0.5 * plane.astype(np.float64) + 0.5 * heatmap.values.astype(np.float64)
    cam_path = write_pgm(path.with_name(path.name + CAM_SUFFIX), side_by_side)
    overlay_path = write_pgm(path.with_name(path.name + OVERLAY_SUFFIX), overlay)
    return cam_path, overlay_path


@dataclass(frozen=True)
class CamResult:
    prediction: Prediction
    class_index: int
    raw: np.ndarray
    heatmap: Heatmap
    identity: ScoreIdentity


def class_activation_map(params: Parameters, config: ModelConfig, image: np.ndarray,
                         target_class: Optional[int] = None,
                         method: Literal["bilinear", "nearest"] = "bilinear") -> CamResult:
    """CAM for the predicted class (or `target_class`) of one image"""
    if config.head != "gap":
        raise CamError("CAM requires gap head")
    prediction, trace = forward(params, config, image, mode="eval")
    c = prediction.label if target_class is None else int(target_class)
    if c not in range(config.num_classes):
        raise CamError(f"class index {c} out of range")
    weights = params["classifier.weight"][c]
    raw = compute_cam(trace.featuremaps, weights)
    identity = cam_score_identity(trace.featuremaps, weights)
    upsampled = upsample_bilinear(raw, (config.input_size, config.input_size), method=method)
    return CamResult(
        prediction=prediction,
        class_index=c,
        raw=raw,
        heatmap=normalize_heatmap(upsampled),
        identity=identity
    )
