"""Optimized neural ops over NCHW tensors.

Public functions take and return :class:`~hbonet.tensor.Tensor`; the ndarray
kernels (prefixed ``_nd``) are shared with the autodiff tape so the eager and
taped paths compute byte-identical forward values. Every convolution path is
tested against ``conv2d_oracle`` at 1e-12.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ConvKernel, DimensionError, Tensor, UnsupportedKernelError

__all__ = [
    "BatchNormParams",
    "conv2d",
    "depthwise_conv",
    "pointwise_conv",
    "relu6",
    "batchnorm",
    "bilinear_upsample",
    "avgpool",
    "concat_channels",
    "take_first_channels",
    "eltadd",
]


@dataclass
class BatchNormParams:
    """Per-channel affine + running statistics for batch normalization.

    gamma/beta are learnable; running_mean/running_var are state mutated by
    training-mode forward passes (biased variance on both sides).
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray = None
    running_var: np.ndarray = None
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        c = self.gamma.shape[0]
        if self.running_mean is None:
            self.running_mean = np.zeros(c)
        if self.running_var is None:
            self.running_var = np.ones(c)
        self.running_mean = np.asarray(self.running_mean, dtype=np.float64)
        self.running_var = np.asarray(self.running_var, dtype=np.float64)
        shapes = {a.shape for a in (self.gamma, self.beta, self.running_mean,
                                    self.running_var)}
        if shapes != {(c,)}:
            raise DimensionError(f"batchnorm parameter vectors disagree: {shapes}")
        if np.any(self.running_var < 0):
            raise ValueError("running_var must be >= 0 elementwise")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def identity(cls, c: int) -> "BatchNormParams":
        return cls(gamma=np.ones(c), beta=np.zeros(c))


# ---------------------------------------------------------------------------
# ndarray kernels (shared with the autodiff tape)
# ---------------------------------------------------------------------------

def _pad_nd(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    out[:, :, pad:pad + h, pad:pad + w] = x
    return out


def _conv2d_nd(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Dense (groups == 1) convolution via windowed tensordot."""
    kh, kw = w.shape[2], w.shape[3]
    xp = _pad_nd(x, pad)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: (n, c, oh, ow, kh, kw) -> contract (c, kh, kw) against w (o, c, kh, kw)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _depthwise_nd(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Depthwise convolution via shift-and-add; w has shape (c, kh, kw)."""
    kh, kw = w.shape[1], w.shape[2]
    xp = _pad_nd(x, pad)
    oh = (xp.shape[2] - kh) // stride + 1
    ow = (xp.shape[3] - kw) // stride + 1
    out = np.zeros((x.shape[0], x.shape[1], oh, ow))
    for i in range(kh):
        for j in range(kw):
            out += w[None, :, i, j, None, None] * \
                xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return out


def _pointwise_nd(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Pointwise (1x1) convolution; w has shape (c_out, c_in)."""
    out = np.tensordot(w, x, axes=([1], [1]))   # (o, n, h, w)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def _grouped_conv_nd(x: np.ndarray, w: np.ndarray, groups: int,
                     stride: int, pad: int) -> np.ndarray:
    """General grouped convolution; only used for group counts other than
    1 and c (never hit by the networks, kept for oracle parity tests)."""
    cpg = w.shape[1]
    opg = w.shape[0] // groups
    outs = [
        _conv2d_nd(x[:, g * cpg:(g + 1) * cpg], w[g * opg:(g + 1) * opg],
                   stride, pad)
        for g in range(groups)
    ]
    return np.concatenate(outs, axis=1)


def _relu6_nd(x: np.ndarray) -> np.ndarray:
    return np.minimum(np.maximum(x, 0.0), 6.0)


def _bn_affine_nd(x: np.ndarray, mean: np.ndarray, var: np.ndarray,
                  gamma: np.ndarray, beta: np.ndarray, eps: float) -> np.ndarray:
    scale = gamma / np.sqrt(var + eps)
    shift = beta - mean * scale
    return x * scale[None, :, None, None] + shift[None, :, None, None]


@lru_cache(maxsize=None)
def _bilinear_matrix(size: int, factor: int) -> np.ndarray:
    """(size*factor, size) interpolation matrix under the half-pixel-center
    convention: src = (dst + 0.5)/factor - 0.5, clamped to borders."""
    out = np.zeros((size * factor, size))
    for d in range(size * factor):
        s = (d + 0.5) / factor - 0.5
        s = min(max(s, 0.0), size - 1.0)
        lo = int(np.floor(s))
        hi = min(lo + 1, size - 1)
        frac = s - lo
        out[d, lo] += 1.0 - frac
        out[d, hi] += frac
    out.flags.writeable = False
    return out


def _upsample_nd(x: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return x
    uh = _bilinear_matrix(x.shape[2], factor)
    uw = _bilinear_matrix(x.shape[3], factor)
    return (uh[None, None] @ x) @ uw.T[None, None]


def _upsample_transpose_nd(g: np.ndarray, factor: int, h: int, w: int) -> np.ndarray:
    if factor == 1:
        return g
    uh = _bilinear_matrix(h, factor)
    uw = _bilinear_matrix(w, factor)
    return (uh.T[None, None] @ g) @ uw[None, None]


def _avgpool_nd(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride].mean(axis=(-2, -1))


# ---------------------------------------------------------------------------
# public Tensor-level ops
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: ConvKernel, stride: int = 1, pad: int = 0) -> Tensor:
    """Optimized grouped convolution, zero padding; matches conv2d_oracle."""
    if x.c != w.groups * w.c_in_per_group:
        raise DimensionError(
            f"input has {x.c} channels, kernel expects "
            f"{w.groups}*{w.c_in_per_group}"
        )
    if w.groups == 1:
        out = _conv2d_nd(x.data, w.data, stride, pad)
    elif w.groups == x.c and w.c_in_per_group == 1:
        out = _depthwise_nd(x.data, w.data[:, 0], stride, pad)
    else:
        out = _grouped_conv_nd(x.data, w.data, w.groups, stride, pad)
    return Tensor._wrap(out)


def depthwise_conv(x: Tensor, w: ConvKernel, stride: int = 1) -> Tensor:
    """Per-channel k x k convolution, k odd, implicit pad (k-1)/2.

    Output spatial dims are ceil(h/stride) x ceil(w/stride).
    """
    if w.k_h != w.k_w or w.k_h % 2 == 0:
        raise UnsupportedKernelError(
            f"depthwise kernel must be square and odd, got {w.k_h}x{w.k_w}"
        )
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if w.groups != x.c or w.c_in_per_group != 1 or w.c_out != x.c:
        raise DimensionError(
            f"depthwise kernel groups={w.groups} c_out={w.c_out} does not "
            f"match {x.c} input channels"
        )
    pad = (w.k_h - 1) // 2
    return Tensor._wrap(_depthwise_nd(x.data, w.data[:, 0], stride, pad))


def pointwise_conv(x: Tensor, w: ConvKernel) -> Tensor:
    """1x1 convolution: per-pixel linear map over channels."""
    if w.k_h != 1 or w.k_w != 1 or w.groups != 1:
        raise UnsupportedKernelError(
            f"pointwise kernel must be 1x1 ungrouped, got {w.shape} "
            f"groups={w.groups}"
        )
    if w.c_in_per_group != x.c:
        raise DimensionError(f"kernel expects {w.c_in_per_group} channels, got {x.c}")
    return Tensor._wrap(_pointwise_nd(x.data, w.data[:, :, 0, 0]))


def relu6(x: Tensor) -> Tensor:
    return Tensor._wrap(_relu6_nd(x.data))


def batchnorm(x: Tensor, p: BatchNormParams, training: bool = False) -> Tensor:
    """Per-channel normalization.

    Training mode normalizes by batch statistics (biased variance) and
    updates running stats in place:
    running <- (1 - momentum)*running + momentum*batch. Inference mode uses
    the stored running statistics.
    """
    if p.channels != x.c:
        raise DimensionError(f"batchnorm has {p.channels} channels, input {x.c}")
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        p.running_mean[...] = (1 - p.momentum) * p.running_mean + p.momentum * mean
        p.running_var[...] = (1 - p.momentum) * p.running_var + p.momentum * var
    else:
        mean, var = p.running_mean, p.running_var
    return Tensor._wrap(_bn_affine_nd(x.data, mean, var, p.gamma, p.beta, p.eps))


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Separable bilinear interpolation by an integer factor.

    Half-pixel-center convention: source coordinate (dst + 0.5)/factor - 0.5,
    clamped to borders. factor 1 is an exact identity.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    return Tensor._wrap(_upsample_nd(x.data, factor))


def avgpool(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Average pooling without padding."""
    if kernel < 1 or stride < 1:
        raise ValueError("kernel and stride must be >= 1")
    if kernel > x.h or kernel > x.w:
        raise DimensionError(
            f"pool kernel {kernel} exceeds input {x.h}x{x.w}"
        )
    return Tensor._wrap(_avgpool_nd(x.data, kernel, stride))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if (a.n, a.h, a.w) != (b.n, b.h, b.w):
        raise DimensionError(f"concat mismatch: {a.shape} vs {b.shape}")
    return Tensor._wrap(np.concatenate([a.data, b.data], axis=1))


def take_first_channels(x: Tensor, m: int) -> Tensor:
    if not 1 <= m <= x.c:
        raise DimensionError(f"cannot take {m} of {x.c} channels")
    return Tensor._wrap(x.data[:, :m].copy())


def eltadd(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"eltadd mismatch: {a.shape} vs {b.shape}")
    return Tensor._wrap(a.data + b.data)
