"""Differentiable NN primitives: convolution, layer norm, activations,
pixel shuffle resampling, and small parameter containers.

All parameter containers are plain dataclasses of :class:`~derain_ddsa.tensor.Tensor`
leaves plus static hyperparameters; ``named_params`` walks them in a stable
order for optimizers and checkpoints.

conv2d is deliberately computed with a fixed sequential accumulation order
over (in-channel, kh, kw), so its output is bit-for-bit identical to a naive
six-loop reference; the backward pass has no such constraint and uses BLAS.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .tensor import Tensor, ShapeError, record_op
from . import tensor as T

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------


@dataclass
class Conv2dParams:
    """Weights for a 2-D convolution; weight is [oc, ic/groups, kh, kw]."""

    weight: Tensor
    bias: Tensor | None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def named_params(self, prefix: str):
        out = [(f"{prefix}.weight", self.weight)]
        if self.bias is not None:
            out.append((f"{prefix}.bias", self.bias))
        return out


def conv2d_init(
    rng: np.random.Generator,
    in_channels: int,
    out_channels: int,
    kernel: int,
    *,
    stride: int = 1,
    padding: int | None = None,
    groups: int = 1,
    bias: bool = True,
    zero_weights: bool = False,
) -> Conv2dParams:
    """Build conv parameters with fan-in uniform weights and zero bias.

    ``padding=None`` means "same" padding (kernel // 2).  ``zero_weights``
    zeroes the weight too, for residual heads that must start as identity.
    """
    if in_channels % groups or out_channels % groups:
        raise ShapeError(
            f"conv2d_init: channels ({in_channels}->{out_channels}) "
            f"not divisible by groups={groups}"
        )
    if padding is None:
        padding = kernel // 2
    shape = (out_channels, in_channels // groups, kernel, kernel)
    fan_in = (in_channels // groups) * kernel * kernel
    w = np.zeros(shape) if zero_weights else uniform_fan_in(rng, shape, fan_in)
    b = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None
    return Conv2dParams(
        weight=Tensor(w, requires_grad=True),
        bias=b,
        stride=stride,
        padding=padding,
        groups=groups,
    )


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Grouped 2-D convolution of x [b, c, h, w] with zero padding.

    The contraction runs as a single flattened axis in (ic, kh, kw) order so
    the result matches a naive sequential-accumulation loop exactly.
    """
    xd, wd = x.data, p.weight.data
    stride, pad, groups = p.stride, p.padding, p.groups
    if xd.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-D [b,c,h,w], got {xd.shape}")
    B, C, H, W = xd.shape
    OC, ICG, KH, KW = wd.shape
    if C != ICG * groups:
        raise ShapeError(
            f"conv2d: input channels {C} do not match weight {wd.shape} "
            f"with groups={groups}"
        )
    OCG = OC // groups
    OH = (H + 2 * pad - KH) // stride + 1
    OW = (W + 2 * pad - KW) // stride + 1
    if OH <= 0 or OW <= 0:
        raise ShapeError(f"conv2d: kernel {KH}x{KW} too large for input {xd.shape}")

    if pad:
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = xd
    win = np.lib.stride_tricks.sliding_window_view(xp, (KH, KW), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                      # [B,C,OH,OW,KH,KW]
    wt = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    cols = wt.reshape(B, groups, ICG * KH * KW, OH * OW)
    w2 = wd.reshape(groups, OCG, ICG * KH * KW)
    out = np.einsum("bgkn,gok->bgon", cols, w2, optimize=False)
    out = out.reshape(B, OC, OH, OW)
    if p.bias is not None:
        out = out + p.bias.data[None, :, None, None]

    def vjp(g):
        gg = np.ascontiguousarray(g).reshape(B, groups, OCG, OH * OW)
        dw = np.einsum("bgkn,bgon->gok", cols, gg, optimize=True)
        dw = dw.reshape(OC, ICG, KH, KW)
        dcols = np.einsum("gok,bgon->bgkn", w2, gg, optimize=True)
        dwin = dcols.reshape(B, C, KH, KW, OH, OW)
        dxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
        for kh in range(KH):
            for kw in range(KW):
                dxp[:, :, kh:kh + stride * OH:stride,
                    kw:kw + stride * OW:stride] += dwin[:, :, kh, kw]
        dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
        if p.bias is not None:
            db = g.sum(axis=(0, 2, 3))
            return np.ascontiguousarray(dx), dw, db
        return np.ascontiguousarray(dx), dw

    inputs = (x, p.weight) if p.bias is None else (x, p.weight, p.bias)
    return record_op("conv2d", inputs, out, vjp)


# ---------------------------------------------------------------------------
# layer norm
# ---------------------------------------------------------------------------


@dataclass
class LayerNormParams:
    """Per-channel affine for channel-wise layer norm; gamma/beta are [c]."""

    gamma: Tensor
    beta: Tensor
    eps: float = 1e-6

    def named_params(self, prefix: str):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]


def layer_norm_init(channels: int, eps: float = 1e-6) -> LayerNormParams:
    return LayerNormParams(
        gamma=Tensor(np.ones(channels), requires_grad=True),
        beta=Tensor(np.zeros(channels), requires_grad=True),
        eps=eps,
    )


def layer_norm(x: Tensor, p: LayerNormParams) -> Tensor:
    """Normalize each pixel's channel vector to zero mean / unit variance.

    x is [b, c, h, w]; statistics are over the channel axis only, with biased
    variance, then a per-channel affine is applied.
    """
    xd = x.data
    if xd.ndim != 4 or xd.shape[1] != p.gamma.data.shape[0]:
        raise ShapeError(
            f"layer_norm: input {xd.shape} incompatible with "
            f"{p.gamma.data.shape[0]} channels"
        )
    C = xd.shape[1]
    gamma = p.gamma.data[None, :, None, None]
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + p.eps)
    xhat = xc * inv
    out = xhat * gamma + p.beta.data[None, :, None, None]

    def vjp(g):
        dxhat = g * gamma
        dvar = np.sum(dxhat * xc, axis=1, keepdims=True) * (-0.5) * inv ** 3
        dmu = -np.sum(dxhat, axis=1, keepdims=True) * inv \
            + dvar * np.mean(-2.0 * xc, axis=1, keepdims=True)
        dx = dxhat * inv + dvar * (2.0 / C) * xc + dmu / C
        dgamma = np.sum(g * xhat, axis=(0, 2, 3))
        dbeta = np.sum(g, axis=(0, 2, 3))
        return dx, dgamma, dbeta

    return record_op("layer_norm", (x, p.gamma, p.beta), out, vjp)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out = xd * cdf
    pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
    return record_op("gelu", (x,), out, lambda g: (g * (cdf + xd * pdf),))


def _sigmoid(xd: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(xd))
    return np.where(xd >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function."""
    s = _sigmoid(x.data)
    return record_op("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) without overflow; used for non-negative gains."""
    xd = x.data
    out = np.logaddexp(0.0, xd)
    return record_op("softplus", (x,), out, lambda g: (g * _sigmoid(xd),))


def mul_gate(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply x [b,c,h,w] by a single-channel map [b,1,h,w] (broadcast)."""
    xd, gd = x.data, gate.data
    if gd.shape != (xd.shape[0], 1, xd.shape[2], xd.shape[3]):
        raise ShapeError(f"mul_gate: gate {gd.shape} does not match input {xd.shape}")

    def vjp(g):
        return g * gd, np.sum(g * xd, axis=1, keepdims=True)

    return record_op("mul_gate", (x, gate), xd * gd, vjp)


# ---------------------------------------------------------------------------
# pixel shuffle resampling
# ---------------------------------------------------------------------------


def pixel_unshuffle(x: Tensor, r: int = 2) -> Tensor:
    """Space-to-depth: [b,c,h,w] -> [b, c*r^2, h/r, w/r].

    Output channel blocks are ordered (source channel, row offset, col
    offset), so channel c*r*r + dy*r + dx holds input pixel (dy, dx) of each
    r x r cell.
    """
    b, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: spatial dims {h}x{w} not divisible by {r}")
    y = T.reshape(x, (b, c, h // r, r, w // r, r))
    y = T.transpose(y, (0, 1, 3, 5, 2, 4))
    return T.reshape(y, (b, c * r * r, h // r, w // r))


def pixel_shuffle(x: Tensor, r: int = 2) -> Tensor:
    """Depth-to-space inverse of :func:`pixel_unshuffle`."""
    b, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle: channels {c} not divisible by {r * r}")
    y = T.reshape(x, (b, c // (r * r), r, r, h, w))
    y = T.transpose(y, (0, 1, 4, 2, 5, 3))
    return T.reshape(y, (b, c // (r * r), h * r, w * r))


@dataclass
class DownsampleParams:
    """Halve resolution, double channels: unshuffle (c->4c) then 1x1 (4c->2c)."""

    conv: Conv2dParams

    def named_params(self, prefix: str):
        return self.conv.named_params(f"{prefix}.conv")


def downsample_init(rng: np.random.Generator, channels: int) -> DownsampleParams:
    return DownsampleParams(conv2d_init(rng, 4 * channels, 2 * channels, 1, bias=False))


def downsample(x: Tensor, p: DownsampleParams) -> Tensor:
    return conv2d(pixel_unshuffle(x, 2), p.conv)


@dataclass
class UpsampleParams:
    """Double resolution, halve channels: 1x1 (c->2c) then shuffle (2c->c/2)."""

    conv: Conv2dParams

    def named_params(self, prefix: str):
        return self.conv.named_params(f"{prefix}.conv")


def upsample_init(rng: np.random.Generator, channels: int) -> UpsampleParams:
    return UpsampleParams(conv2d_init(rng, channels, 2 * channels, 1, bias=False))


def upsample(x: Tensor, p: UpsampleParams) -> Tensor:
    return pixel_shuffle(conv2d(x, p.conv), 2)
