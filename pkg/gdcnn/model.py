"""
The gender-determination CNN: four valid 3x3 conv + ReLU stages each followed by
2x2 max pooling, then either a dense head (dense+ReLU, dropout, dense+sigmoid) or a
gap head (sum pooling of the 4th conv output, dropout, bias-free linear layer,
softmax) whose class weights produce class activation maps.
"""

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import tensor as T
from .errors import DataError, ShapeError, StateError
from .logger import setup_logger

logger = setup_logger(__name__)

Parameters = dict[str, np.ndarray]
Gradients = dict[str, np.ndarray]

KERNEL = 3
PROB_CLAMP = 1e-7
CLASS_NAMES = ("Male", "Female")


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    input_size: int = Field(137, ge=1)
    conv_filters: tuple[int, int, int, int] = (32, 64, 128, 128)
    head: Literal["dense", "gap"] = "gap"
    dense_hidden: int = Field(512, ge=1)
    dropout_rate: float = Field(0.8, ge=0.0, lt=1.0, validate_default=True)
    num_classes: Literal[2] = 2

    @field_validator("dropout_rate")
    @classmethod
    def _float32_rate(cls, value: float) -> float:
        # stored as f32 in checkpoints; keep the rate below 1 after rounding
        rate = np.float32(value)
        if rate >= 1.0:
            rate = np.nextafter(np.float32(1.0), np.float32(0.0))
        return float(rate)

    @model_validator(mode="after")
    def _check_trace(self):
        if any(f < 1 for f in self.conv_filters):
            raise ValueError(f"conv_filters must be positive, got {self.conv_filters}")
        trace = self.size_trace()
        last = trace[-2] if self.head == "gap" else trace[-1]
        if min(trace[:-1]) < 1 or last < 1:
            raise ValueError(f"input_size {self.input_size} too small for the {self.head} head: trace {trace}")
        return self

    def size_trace(self) -> list[int]:
        """Spatial size after input, conv1, pool1, ..., conv4, pool4"""
        sizes = [self.input_size]
        size = self.input_size
        for _ in range(4):
            size = size - KERNEL + 1
            sizes.append(size)
            size = size // 2
            sizes.append(size)
        return sizes

    @property
    def featuremap_size(self) -> int:
        """Spatial size of the 4th conv output (the CAM source)"""
        return self.size_trace()[7]

    @property
    def flat_features(self) -> int:
        return self.conv_filters[3] * self.size_trace()[8] ** 2


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    channels = 1
    for i, filters in enumerate(config.conv_filters, start=1):
        shapes[f"conv{i}.weight"] = (filters, channels, KERNEL, KERNEL)
        shapes[f"conv{i}.bias"] = (filters,)
        channels = filters
    if config.head == "dense":
        shapes["dense1.weight"] = (config.dense_hidden, config.flat_features)
        shapes["dense1.bias"] = (config.dense_hidden,)
        shapes["dense2.weight"] = (1, config.dense_hidden)
        shapes["dense2.bias"] = (1,)
    else:
        # one weight per (class, featuremap), no bias
        shapes["classifier.weight"] = (config.num_classes, config.conv_filters[3])
    return shapes


def _fan_in(name: str, shape: tuple[int, ...], config: ModelConfig) -> int:
    if name == "classifier.weight":
        # each weight multiplies a sum over the whole featuremap
        return shape[1] * config.featuremap_size ** 2
    return int(np.prod(shape[1:]))


def init_params(config: ModelConfig, seed: int = 0) -> Parameters:
    """He-uniform weights, zero biases; deterministic under `seed`"""
    rng = np.random.default_rng(seed)
    params: Parameters = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=T.DTYPE)
        else:
            limit = np.sqrt(6.0 / _fan_in(name, shape, config))
            params[name] = rng.uniform(-limit, limit, size=shape).astype(T.DTYPE)
    return params


@dataclass(frozen=True)
class Prediction:
    label: int
    probability: float  # of class 1
    probs: np.ndarray
    logits: np.ndarray


@dataclass
class StageTrace:
    conv_input: np.ndarray
    pre_activation: np.ndarray
    activation: np.ndarray
    pool: Optional[T.PoolIndices] = None


@dataclass
class ForwardTrace:
    """Activations retained for backward and for CAM"""
    mode: str
    stages: list[StageTrace] = field(default_factory=list)
    featuremaps: Optional[np.ndarray] = None  # 4th conv post-ReLU
    head_input: Optional[np.ndarray] = None
    hidden_pre: Optional[np.ndarray] = None
    dropout_mask: Optional[np.ndarray] = None
    dropout_output: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None  # class scores for the gap head
    probs: Optional[np.ndarray] = None


def _dropout(values, config: ModelConfig, mode: str, seed: int):
    if mode == "train" and config.dropout_rate > 0.0:
        return T.dropout_forward(values, config.dropout_rate, seed)
    return values, None


def forward(params: Parameters, config: ModelConfig, image: np.ndarray,
            mode: Literal["train", "eval"] = "eval", seed: int = 0,
            keep_trace: bool = True) -> tuple[Prediction, Optional[ForwardTrace]]:
    """Run one image through the network.

    Dropout is active only in train mode; its mask is derived from `seed`.
    """
    expected = (1, config.input_size, config.input_size)
    if image.shape != expected:
        raise ShapeError(f"image: expected {expected}, got {image.shape}")
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise DataError("image pixel values must lie in [0, 1]")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    trace = ForwardTrace(mode=mode)
    x = image
    for i in range(1, 5):
        z = T.check_finite(f"conv{i}", T.conv2d_forward(x, params[f"conv{i}.weight"], params[f"conv{i}.bias"]))
        a = T.relu(z)
        stage = StageTrace(conv_input=x, pre_activation=z, activation=a)
        trace.stages.append(stage)
        if i == 4 and config.head == "gap":
            trace.featuremaps = a
            break
        x, stage.pool = T.maxpool2d_forward(a)

    if config.head == "gap":
        pooled = T.gap(trace.featuremaps)
        trace.head_input = pooled
        dropped, mask = _dropout(pooled, config, mode, seed)
        logits = T.check_finite("classifier", T.dense_forward(dropped, params["classifier.weight"]))
        probs = T.softmax(logits)
        label = int(np.argmax(probs))
        probability = float(probs[1])
    else:
        flat = x.reshape(-1)
        trace.head_input = flat
        hidden = T.check_finite("dense1", T.dense_forward(flat, params["dense1.weight"], params["dense1.bias"]))
        trace.hidden_pre = hidden
        activated = T.relu(hidden)
        dropped, mask = _dropout(activated, config, mode, seed)
        logits = T.check_finite("dense2", T.dense_forward(dropped, params["dense2.weight"], params["dense2.bias"]))
        probability = float(T.sigmoid(logits)[0])
        probs = np.array([1.0 - probability, probability], dtype=logits.dtype)
        label = int(probability > 0.5)

    trace.dropout_mask = mask
    trace.dropout_output = dropped
    trace.logits = logits
    trace.probs = probs
    prediction = Prediction(label=label, probability=probability, probs=probs, logits=logits)
    return prediction, (trace if keep_trace else None)


def predict(params: Parameters, config: ModelConfig, image: np.ndarray) -> Prediction:
    return forward(params, config, image, mode="eval", keep_trace=False)[0]


# --- losses ---

def _clamp(p: float) -> float:
    return min(max(float(p), PROB_CLAMP), 1.0 - PROB_CLAMP)


def loss_bce(p: float, label: int) -> float:
    p = _clamp(p)
    return -(label * np.log(p) + (1 - label) * np.log(1.0 - p))


def loss_bce_grad(p: float, label: int) -> float:
    """dL/dp at the clamped probability"""
    p = _clamp(p)
    return -label / p + (1 - label) / (1.0 - p)


def loss_ce(probs: np.ndarray, label: int) -> float:
    return -float(np.log(_clamp(probs[label])))


def loss_ce_grad(probs: np.ndarray, label: int) -> np.ndarray:
    grad = np.zeros(probs.shape, dtype=np.float64)
    grad[label] = -1.0 / _clamp(probs[label])
    return grad


def loss(prediction: Prediction, config: ModelConfig, label: int) -> float:
    if config.head == "dense":
        return float(loss_bce(prediction.probability, label))
    return loss_ce(prediction.probs, label)


# --- backward ---

def backward(params: Parameters, config: ModelConfig, trace: Optional[ForwardTrace], label: int) -> Gradients:
    """Gradient of the head's loss w.r.t. every parameter.

    The logit gradient uses the fused forms p - y (sigmoid + BCE) and
    P - onehot (softmax + CE); the rest chains through the forward kernels,
    including the recorded dropout mask.
    """
    if trace is None or trace.logits is None:
        raise StateError("backward requires the trace of a forward pass")
    grads: Gradients = {}
    dtype = trace.logits.dtype

    if config.head == "gap":
        grad_logits = trace.probs.astype(dtype, copy=True)
        grad_logits[label] -= 1
        grad_dropped, grads["classifier.weight"], _ = T.dense_backward(
            trace.dropout_output, params["classifier.weight"], grad_logits)
        grad_pooled = grad_dropped if trace.dropout_mask is None else T.dropout_backward(trace.dropout_mask, grad_dropped)
        grad = T.gap_backward(trace.featuremaps.shape, grad_pooled)
    else:
        grad_logits = np.array([trace.probs[1] - label], dtype=dtype)
        grad_dropped, grads["dense2.weight"], grads["dense2.bias"] = T.dense_backward(
            trace.dropout_output, params["dense2.weight"], grad_logits)
        grad_hidden = grad_dropped if trace.dropout_mask is None else T.dropout_backward(trace.dropout_mask, grad_dropped)
        grad_hidden = T.relu_backward(trace.hidden_pre, grad_hidden)
        grad_flat, grads["dense1.weight"], grads["dense1.bias"] = T.dense_backward(
            trace.head_input, params["dense1.weight"], grad_hidden)
        grad = grad_flat.reshape(trace.stages[-1].pool.flat.shape)

    for i in range(len(trace.stages), 0, -1):
        stage = trace.stages[i - 1]
        if stage.pool is not None:
            grad = T.maxpool2d_backward(stage.pool, grad)
        grad_z = T.relu_backward(stage.pre_activation, grad)
        grad, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = T.conv2d_backward(
            stage.conv_input, params[f"conv{i}.weight"], grad_z)

    return {name: grads[name] for name in params}
