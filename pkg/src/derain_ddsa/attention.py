"""Dynamic dual self-attention (DDSA).

Queries/keys/values come from a 1x1 conv followed by a 3x3 depthwise conv.
Two branches share one set of scaled scores: a dense softmax branch and a
sparse branch that keeps only the top-k entries per row (k a fraction of the
row length, ties at the threshold all kept) and renormalizes over the
survivors.  The branch outputs are mixed with fixed or learned non-negative
weights and leave through a shared 1x1 output projection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import MASKED, Tensor, ShapeError, record_op
from . import tensor as T
from .nn import Conv2dParams, conv2d, conv2d_init, softplus


def top_k_count(row_len: int, k_ratio: float) -> int:
    """Entries to keep per row: max(1, ceil(k_ratio * row_len))."""
    if not 0.0 < k_ratio <= 1.0:
        raise ValueError(f"k_ratio must be in (0, 1], got {k_ratio}")
    return max(1, math.ceil(k_ratio * row_len))


def topk_row_mask(scores: np.ndarray, k_ratio: float) -> np.ndarray:
    """Boolean mask of per-row top-k entries (last axis); threshold ties kept."""
    n = scores.shape[-1]
    k = top_k_count(n, k_ratio)
    if k >= n:
        return np.ones_like(scores, dtype=bool)
    # np.sort measured faster than np.partition at these shapes
    thresh = np.sort(scores, axis=-1)[..., n - k, None]
    mask = scores >= thresh
    # top-k of a row containing NaN is undefined; keep such rows whole so the
    # NaN propagates (and e.g. divergence detection sees it) instead of the
    # row silently turning into an all-masked error
    nan_rows = np.isnan(scores).any(axis=-1, keepdims=True)
    if nan_rows.any():
        mask |= nan_rows
    return mask


def apply_topk_mask(scores: Tensor, k_ratio: float, zero_fill: bool = False) -> Tensor:
    """Replace non-top-k entries with the masking sentinel (or literal zero).

    With ``zero_fill`` the dropped entries become plain 0.0 and still take
    part in a later softmax; the sentinel variant excludes them entirely.
    Dropped positions receive no gradient either way.
    """
    mask = topk_row_mask(scores.data, k_ratio)
    fill = 0.0 if zero_fill else MASKED
    out = np.where(mask, scores.data, fill)
    return record_op(
        "topk_mask", (scores,), out, lambda g: (np.where(mask, g, 0.0),)
    )


def scaled_scores(q: Tensor, k: Tensor) -> Tensor:
    """Similarity logits Q K^T scaled by 1/sqrt(feature dim)."""
    d = q.shape[-1]
    kt = T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    return T.scale(T.matmul(q, kt), 1.0 / math.sqrt(d))


@dataclass
class DdsaParams:
    """Parameters and static switches for one DDSA layer."""

    qkv_point: Conv2dParams      # 1x1, c -> 3c
    qkv_depth: Conv2dParams      # 3x3 depthwise over the 3c stack
    out_proj: Conv2dParams       # shared 1x1 output projection
    heads: int
    k_ratio: float = 0.7
    use_dense: bool = True
    use_sparse: bool = True
    branch_weights: tuple[float, float] = (0.5, 0.5)
    dense_gain: Tensor | None = None    # raw scalars; softplus() is the weight
    sparse_gain: Tensor | None = None
    attention_axis: str = "spatial"     # tokens: "spatial" pixels or "channel" slots
    sparse_zero_fill: bool = False

    def named_params(self, prefix: str):
        out = self.qkv_point.named_params(f"{prefix}.qkv_point")
        out += self.qkv_depth.named_params(f"{prefix}.qkv_depth")
        out += self.out_proj.named_params(f"{prefix}.out_proj")
        if self.dense_gain is not None:
            out.append((f"{prefix}.dense_gain", self.dense_gain))
        if self.sparse_gain is not None:
            out.append((f"{prefix}.sparse_gain", self.sparse_gain))
        return out


def _inv_softplus(y: float) -> float:
    return math.log(math.expm1(y))


def ddsa_init(
    rng: np.random.Generator,
    channels: int,
    heads: int,
    *,
    k_ratio: float = 0.7,
    use_dense: bool = True,
    use_sparse: bool = True,
    branch_weights: tuple[float, float] = (0.5, 0.5),
    learnable_weights: bool = False,
    attention_axis: str = "spatial",
    sparse_zero_fill: bool = False,
) -> DdsaParams:
    if channels % heads:
        raise ShapeError(f"channels {channels} not divisible by heads {heads}")
    if not (use_dense or use_sparse):
        raise ValueError("at least one attention branch must be enabled")
    if attention_axis not in ("spatial", "channel"):
        raise ValueError(f"unknown attention_axis {attention_axis!r}")
    top_k_count(16, k_ratio)  # validates the ratio range
    dense_gain = sparse_gain = None
    if learnable_weights:
        dense_gain = Tensor(_inv_softplus(branch_weights[0]), requires_grad=True)
        sparse_gain = Tensor(_inv_softplus(branch_weights[1]), requires_grad=True)
    return DdsaParams(
        qkv_point=conv2d_init(rng, channels, 3 * channels, 1),
        qkv_depth=conv2d_init(rng, 3 * channels, 3 * channels, 3, groups=3 * channels),
        out_proj=conv2d_init(rng, channels, channels, 1),
        heads=heads,
        k_ratio=k_ratio,
        use_dense=use_dense,
        use_sparse=use_sparse,
        branch_weights=tuple(branch_weights),
        dense_gain=dense_gain,
        sparse_gain=sparse_gain,
        attention_axis=attention_axis,
        sparse_zero_fill=sparse_zero_fill,
    )


def dual_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    *,
    k_ratio: float = 0.7,
    use_dense: bool = True,
    use_sparse: bool = True,
    branch_weights: tuple[float, float] = (0.5, 0.5),
    dense_gain: Tensor | None = None,
    sparse_gain: Tensor | None = None,
    sparse_zero_fill: bool = False,
) -> Tensor:
    """Mix dense and top-k sparse attention over shared scores; returns A V.

    q, k, v are [batch, heads, tokens, features]; both branches reuse one
    score tensor, so enabling a branch never changes the other's input.
    """
    scores = scaled_scores(q, k)
    parts = []
    if use_dense:
        att = T.softmax_rows(scores)
        if dense_gain is not None:
            att = T.scale_by(att, softplus(dense_gain))
        else:
            att = T.scale(att, branch_weights[0])
        parts.append(att)
    if use_sparse:
        att = T.softmax_rows(apply_topk_mask(scores, k_ratio, sparse_zero_fill))
        if sparse_gain is not None:
            att = T.scale_by(att, softplus(sparse_gain))
        else:
            att = T.scale(att, branch_weights[1])
        parts.append(att)
    if not parts:
        raise ValueError("at least one attention branch must be enabled")
    mixed = parts[0] if len(parts) == 1 else T.add(parts[0], parts[1])
    return T.matmul(mixed, v)


def ddsa_forward(x: Tensor, p: DdsaParams) -> Tensor:
    """Apply DDSA to a feature map [b, c, h, w]; output has the same shape."""
    b, c, h, w = x.shape
    dh = c // p.heads
    n = h * w
    qkv = conv2d(conv2d(x, p.qkv_point), p.qkv_depth)
    q, k, v = T.split(qkv, 3, axis=1)

    spatial = p.attention_axis == "spatial"

    def to_tokens(t):
        t = T.reshape(t, (b, p.heads, dh, n))
        return T.transpose(t, (0, 1, 3, 2)) if spatial else t

    out = dual_attention(
        to_tokens(q), to_tokens(k), to_tokens(v),
        k_ratio=p.k_ratio,
        use_dense=p.use_dense,
        use_sparse=p.use_sparse,
        branch_weights=p.branch_weights,
        dense_gain=p.dense_gain,
        sparse_gain=p.sparse_gain,
        sparse_zero_fill=p.sparse_zero_fill,
    )
    if spatial:
        out = T.transpose(out, (0, 1, 3, 2))
    merged = T.reshape(out, (b, c, h, w))
    return conv2d(merged, p.out_proj)
