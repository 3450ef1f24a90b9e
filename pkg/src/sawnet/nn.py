"""Neural operators for forward inference, plus gradients for the dense head.

Tensors are plain numpy arrays. Feature maps are channels-first ``[C, H, W]``,
row-major; vectors are 1-D. Every operator accumulates in float64 and casts
the result back to the promoted dtype of its inputs, so float32 weight
bundles keep float32 activations without losing digits in long reductions.

Only the dense head has a backward path (`cross_entropy_grad` plus the
closed-form dense gradient assembled by the training loop); convolution and
batch norm are inference-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


def _readonly(a, name: str) -> np.ndarray:
    arr = np.array(a, copy=True)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ConvParams:
    """Kernels ``[out_ch, in_ch, k, k]`` (k odd) and bias ``[out_ch]``."""

    kernels: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kernels", _readonly(self.kernels, "kernels"))
        object.__setattr__(self, "bias", _readonly(self.bias, "bias"))
        if self.kernels.ndim != 4:
            raise ShapeError(f"kernels must be 4-D, got shape {self.kernels.shape}")
        out_ch, _, kh, kw = self.kernels.shape
        if kh != kw or kh % 2 == 0:
            raise ShapeError(f"kernel window must be square and odd, got {kh}x{kw}")
        if self.bias.shape != (out_ch,):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {out_ch} output channels"
            )

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]


@dataclass(frozen=True)
class BatchNormParams:
    """Per-channel affine renormalization statistics (inference form)."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "running_mean", "running_var"):
            object.__setattr__(self, name, _readonly(getattr(self, name), name))
        c = self.gamma.shape
        if len(c) != 1:
            raise ShapeError("batch-norm parameters must be 1-D per-channel vectors")
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != c:
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != {c}")
        if np.any(self.running_var < 0):
            raise ShapeError("running_var entries must be >= 0")
        if not self.epsilon > 0:
            raise ShapeError("epsilon must be > 0")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


@dataclass(frozen=True)
class DenseParams:
    """Weights ``[out_units, in_units]`` and bias ``[out_units]``."""

    weights: np.ndarray
    bias: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "weights", _readonly(self.weights, "weights"))
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        bias = np.zeros(self.weights.shape[0]) if self.bias is None else self.bias
        object.__setattr__(self, "bias", _readonly(bias, "bias"))
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )

    @property
    def out_units(self) -> int:
        return self.weights.shape[0]

    @property
    def in_units(self) -> int:
        return self.weights.shape[1]


def _check_chw(x: np.ndarray, op: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"{op} expects a [C, H, W] tensor, got shape {x.shape}")
    return x


def _cast_back(result64: np.ndarray, *inputs: np.ndarray) -> np.ndarray:
    return result64.astype(np.result_type(*inputs), copy=False)


def conv2d_same(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Stride-1 'same' 2-D convolution: ``[C_in, H, W] -> [C_out, H, W]``.

    Zero padding keeps the spatial size; out-of-range taps contribute 0.
    Implemented as im2col + one matmul with float64 accumulation.
    """
    x = _check_chw(x, "conv2d_same")
    c, h, w = x.shape
    if c != p.in_channels:
        raise ShapeError(f"input has {c} channels, kernels expect {p.in_channels}")
    k = p.kernels.shape[2]
    pad = k // 2
    xp = np.pad(x.astype(np.float64, copy=False), ((0, 0), (pad, pad), (pad, pad)))
    # [C, H, W, k, k] -> [H*W, C*k*k]
    cols = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    cols = cols.transpose(1, 2, 0, 3, 4).reshape(h * w, c * k * k)
    kmat = p.kernels.astype(np.float64).reshape(p.out_channels, c * k * k)
    out = cols @ kmat.T + p.bias.astype(np.float64)
    out = out.T.reshape(p.out_channels, h, w)
    return _cast_back(out, x, p.kernels)


def batchnorm_infer(x: np.ndarray, p: BatchNormParams) -> np.ndarray:
    """Per-channel ``gamma * (x - mean) / sqrt(var + eps) + beta``."""
    x = _check_chw(x, "batchnorm_infer")
    if x.shape[0] != p.channels:
        raise ShapeError(f"input has {x.shape[0]} channels, batch norm expects {p.channels}")
    scale = p.gamma.astype(np.float64) / np.sqrt(p.running_var.astype(np.float64) + p.epsilon)
    shift = p.beta.astype(np.float64) - p.running_mean.astype(np.float64) * scale
    out = x.astype(np.float64, copy=False) * scale[:, None, None] + shift[:, None, None]
    return _cast_back(out, x, p.gamma)


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise ``max(x, 0)``."""
    return np.maximum(np.asarray(x), 0)


def maxpool_2x2(x: np.ndarray) -> np.ndarray:
    """2x2 max pooling with stride 2; a trailing odd row/column is dropped."""
    x = _check_chw(x, "maxpool_2x2")
    c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool_2x2 needs H, W >= 2, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    blocks = x[:, : 2 * h2, : 2 * w2].reshape(c, h2, 2, w2, 2)
    return blocks.max(axis=(2, 4))


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Spatial mean per channel: ``[C, H, W] -> [C]``."""
    x = _check_chw(x, "global_avg_pool")
    out = x.mean(axis=(1, 2), dtype=np.float64)
    return _cast_back(out, x)


def dense(x: np.ndarray, p: DenseParams) -> np.ndarray:
    """Affine map ``W @ x + b`` on a 1-D input."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise ShapeError(f"dense expects a 1-D input, got shape {x.shape}")
    if x.shape[0] != p.in_units:
        raise ShapeError(f"input length {x.shape[0]} does not match {p.in_units} units")
    out = p.weights.astype(np.float64) @ x.astype(np.float64) + p.bias.astype(np.float64)
    return _cast_back(out, x, p.weights)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax, float64 output; stable for |z| up to ~1e4."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 1:
        raise ShapeError(f"softmax expects a non-empty 1-D tensor, got shape {z.shape}")
    e = np.exp(z - z.max())
    return e / e.sum()


def sigmoid(logit: float) -> float:
    """Logistic function ``1 / (1 + exp(-z))``, stable for large |z|."""
    z = float(logit)
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return float(e / (1.0 + e))


def cross_entropy_grad(logits: np.ndarray, true_class: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy loss and its gradient w.r.t. the logits.

    Returns ``(loss, dlogits)`` with ``loss = -log softmax(logits)[true_class]``
    and ``dlogits = softmax(logits) - onehot(true_class)``.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ShapeError(f"cross_entropy_grad expects 1-D logits, got shape {z.shape}")
    k = z.shape[0]
    if not 0 <= true_class < k:
        raise IndexError(f"true_class {true_class} out of range for {k} classes")
    shifted = z - z.max()
    log_norm = np.log(np.exp(shifted).sum())
    loss = float(log_norm - shifted[true_class])
    grad = softmax(z)
    grad[true_class] -= 1.0
    return loss, grad
