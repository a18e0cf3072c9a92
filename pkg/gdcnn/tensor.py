"""
Dense-tensor kernels: forward/backward for convolution, max pooling, activations,
dense layers, dropout and global pooling.

A tensor is a numpy array. The pipeline works in float32; every kernel keeps the
floating dtype of its input so the same code can be evaluated in float64 by
finite-difference checks. All kernels are pure functions of their arguments.
"""

from typing import NamedTuple, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteError, ShapeError, StateError

Tensor = np.ndarray

DTYPE = np.float32


def derive_seed(*keys: int) -> int:
    """Stable 32-bit seed from a tuple of non-negative integers"""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def check_finite(layer: str, values: Tensor) -> Tensor:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(layer)
    return values


def _expect_rank(name: str, values: Tensor, rank: int):
    if values.ndim != rank:
        raise ShapeError(f"{name}: expected rank {rank}, got shape {values.shape}")


def _result_dtype(*arrays: Tensor):
    return np.result_type(*[a.dtype for a in arrays if a is not None], DTYPE)


# --- convolution (valid padding, stride 1) ---

def conv2d_forward(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """out[o,y,x] = bias[o] + sum_{c,dy,dx} x[c,y+dy,x+dx] * weights[o,c,dy,dx]"""
    _expect_rank("input", x, 3)
    _expect_rank("weights", weights, 4)
    c_out, c_in, kh, kw = weights.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"in_channels: input has {x.shape[0]}, weights expect {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"out_channels: bias shape {bias.shape}, weights expect ({c_out},)")
    if x.shape[1] < kh:
        raise ShapeError(f"height: input height {x.shape[1]} smaller than kernel {kh}")
    if x.shape[2] < kw:
        raise ShapeError(f"width: input width {x.shape[2]} smaller than kernel {kw}")

    dtype = _result_dtype(x, weights, bias)
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))  # [C, H', W', kh, kw]
    out = np.tensordot(weights, windows, axes=([1, 2, 3], [0, 3, 4]))
    out += bias[:, None, None]
    return out.astype(dtype, copy=False)


def conv2d_backward(x: Tensor, weights: Tensor, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (grad_input, grad_weights, grad_bias)"""
    _expect_rank("input", x, 3)
    _expect_rank("weights", weights, 4)
    _expect_rank("grad_out", grad_out, 3)
    c_out, c_in, kh, kw = weights.shape
    expected = (c_out, x.shape[1] - kh + 1, x.shape[2] - kw + 1)
    if x.shape[0] != c_in:
        raise ShapeError(f"in_channels: input has {x.shape[0]}, weights expect {c_in}")
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out: expected {expected}, got {grad_out.shape}")

    dtype = _result_dtype(x, weights, grad_out)
    grad_bias = grad_out.sum(axis=(1, 2))

    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))
    grad_weights = np.tensordot(grad_out, windows, axes=([1, 2], [1, 2]))  # [O, C, kh, kw]

    # full correlation of the padded gradient with the flipped kernel
    padded = np.pad(grad_out, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    grad_windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))  # [O, H, W, kh, kw]
    flipped = weights[:, :, ::-1, ::-1]
    grad_input = np.tensordot(flipped, grad_windows, axes=([0, 2, 3], [0, 3, 4]))

    return (grad_input.astype(dtype, copy=False),
            grad_weights.astype(dtype, copy=False),
            grad_bias.astype(dtype, copy=False))


# --- 2x2 max pooling, stride 2 ---

class PoolIndices(NamedTuple):
    """Winning flat position (y * W + x in the input plane) per output cell"""
    flat: np.ndarray
    input_shape: tuple[int, int, int]


def maxpool2d_forward(x: Tensor) -> tuple[Tensor, PoolIndices]:
    _expect_rank("input", x, 3)
    c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"pool input spatial dims must be >= 2, got {h}x{w}")
    ho, wo = h // 2, w // 2

    # trailing odd row/column dropped
    blocks = x[:, :2 * ho, :2 * wo].reshape(c, ho, 2, wo, 2).transpose(0, 1, 3, 2, 4).reshape(c, ho, wo, 4)
    # argmax keeps the first maximum in row-major window order
    winner = blocks.argmax(axis=3)
    out = np.take_along_axis(blocks, winner[..., None], axis=3)[..., 0]

    rows = 2 * np.arange(ho)[:, None] + winner // 2
    cols = 2 * np.arange(wo)[None, :] + winner % 2
    flat = (rows * w + cols).astype(np.int64)
    return out, PoolIndices(flat=flat, input_shape=(c, h, w))


def maxpool2d_backward(indices: PoolIndices, grad_out: Tensor) -> Tensor:
    c, h, w = indices.input_shape
    if grad_out.shape != indices.flat.shape:
        raise ShapeError(f"grad_out: expected {indices.flat.shape}, got {grad_out.shape}")
    flat = indices.flat.reshape(c, -1)
    if flat.size and (flat.min() < 0 or flat.max() >= h * w):
        raise StateError("pool argmax index out of range; indices do not belong to this input")

    grad_input = np.zeros((c, h * w), dtype=grad_out.dtype)
    np.put_along_axis(grad_input, flat, grad_out.reshape(c, -1), axis=1)
    return grad_input.reshape(c, h, w)


# --- activations ---

def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    # gradient at exactly 0 is 0
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function (branch on sign)"""
    x = np.asarray(x)
    dtype = _result_dtype(x)
    out = np.empty(x.shape, dtype=dtype)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(output: Tensor, grad_out: Tensor) -> Tensor:
    """Gradient through sigmoid given its output s: grad * s * (1 - s)"""
    return grad_out * output * (1 - output)


def softmax(logits: Tensor) -> Tensor:
    _expect_rank("logits", logits, 1)
    if logits.shape[0] < 1:
        raise ShapeError("softmax needs at least one class")
    shifted = np.exp(logits - logits.max())
    return (shifted / shifted.sum()).astype(_result_dtype(logits), copy=False)


def softmax_backward(probs: Tensor, grad_out: Tensor) -> Tensor:
    """Vector-Jacobian product of softmax"""
    return probs * (grad_out - np.dot(grad_out, probs))


# --- dense ---

def dense_forward(x: Tensor, weights: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """out = W @ x + b; bias may be omitted"""
    _expect_rank("input", x, 1)
    _expect_rank("weights", weights, 2)
    n_out, n_in = weights.shape
    if x.shape[0] != n_in:
        raise ShapeError(f"n_in: input has {x.shape[0]}, weights expect {n_in}")
    out = weights @ x
    if bias is not None:
        if bias.shape != (n_out,):
            raise ShapeError(f"n_out: bias shape {bias.shape}, weights expect ({n_out},)")
        out = out + bias
    return out.astype(_result_dtype(x, weights, bias), copy=False)


def dense_backward(x: Tensor, weights: Tensor, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (grad_x, grad_W, grad_b)"""
    n_out, n_in = weights.shape
    if grad_out.shape != (n_out,):
        raise ShapeError(f"n_out: grad_out shape {grad_out.shape}, weights expect ({n_out},)")
    if x.shape != (n_in,):
        raise ShapeError(f"n_in: input shape {x.shape}, weights expect ({n_in},)")
    grad_x = weights.T @ grad_out
    grad_w = np.outer(grad_out, x)
    return grad_x, grad_w.astype(weights.dtype, copy=False), grad_out.copy()


# --- dropout (inverted) ---

def dropout_forward(x: Tensor, rate: float, rng_seed: int) -> tuple[Tensor, Tensor]:
    """Zero each element with probability `rate`, scale survivors by 1/(1-rate).

    Returns (output, mask); the mask already carries the survivor scale.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x.copy(), np.ones_like(x)
    rng = np.random.default_rng(rng_seed)
    keep = rng.random(x.shape) >= rate
    mask = (keep / (1.0 - rate)).astype(x.dtype)
    return x * mask, mask


def dropout_backward(mask: Tensor, grad_out: Tensor) -> Tensor:
    return grad_out * mask


# --- global pooling (sum form) ---

def gap(featuremaps: Tensor) -> Tensor:
    """Per-channel sum over all spatial positions"""
    _expect_rank("featuremaps", featuremaps, 3)
    if featuremaps.shape[1] < 1 or featuremaps.shape[2] < 1:
        raise ShapeError(f"featuremaps must be at least 1x1, got {featuremaps.shape}")
    return featuremaps.sum(axis=(1, 2)).astype(featuremaps.dtype, copy=False)


def gap_backward(shape: tuple[int, int, int], grad_out: Tensor) -> Tensor:
    return np.broadcast_to(grad_out[:, None, None], shape).copy()
