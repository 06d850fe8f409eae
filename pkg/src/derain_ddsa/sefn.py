"""Scale-enriched feed-forward network (SEFN).

A 1x1 expansion with GELU feeds three equal channel groups arranged as a
hierarchy: the first passes through, each later group is summed with the
previous branch output and refined by a 3x3 depthwise conv, widening the
receptive field per group.  An optional spatial gate - a 7x7 conv over the
channel-mean and channel-max maps, squashed by a sigmoid - rescales every
position before the 1x1 projection back to the input width.

With both flags off this reduces exactly to a plain two-layer pointwise MLP.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, ShapeError
from . import tensor as T
from .nn import Conv2dParams, conv2d, conv2d_init, gelu, sigmoid, mul_gate


def sefn_hidden(channels: int, expansion: float = 2.66) -> int:
    """Expanded width: nearest multiple of 3 to expansion * channels."""
    hidden = 3 * round(expansion * channels / 3.0)
    if hidden < 3:
        raise ShapeError(f"sefn: expansion {expansion} of {channels} channels "
                         f"gives hidden width {hidden} < 3")
    return hidden


@dataclass
class SefnParams:
    """Parameters for one feed-forward block."""

    expand: Conv2dParams            # 1x1, c -> hidden
    branch2: Conv2dParams | None    # 3x3 depthwise on hidden/3 channels
    branch3: Conv2dParams | None
    gate: Conv2dParams | None       # 7x7, 2 -> 1 spatial gate
    project: Conv2dParams           # 1x1, hidden -> c
    use_multiscale: bool = True
    use_spatial_attention: bool = True

    def named_params(self, prefix: str):
        out = self.expand.named_params(f"{prefix}.expand")
        if self.branch2 is not None:
            out += self.branch2.named_params(f"{prefix}.branch2")
        if self.branch3 is not None:
            out += self.branch3.named_params(f"{prefix}.branch3")
        if self.gate is not None:
            out += self.gate.named_params(f"{prefix}.gate")
        out += self.project.named_params(f"{prefix}.project")
        return out


def sefn_init(
    rng: np.random.Generator,
    channels: int,
    *,
    expansion: float = 2.66,
    use_multiscale: bool = True,
    use_spatial_attention: bool = True,
) -> SefnParams:
    hidden = sefn_hidden(channels, expansion)
    group = hidden // 3
    branch2 = branch3 = gate = None
    if use_multiscale:
        branch2 = conv2d_init(rng, group, group, 3, groups=group)
        branch3 = conv2d_init(rng, group, group, 3, groups=group)
    if use_spatial_attention:
        gate = conv2d_init(rng, 2, 1, 7)
    return SefnParams(
        expand=conv2d_init(rng, channels, hidden, 1),
        branch2=branch2,
        branch3=branch3,
        gate=gate,
        project=conv2d_init(rng, hidden, channels, 1),
        use_multiscale=use_multiscale,
        use_spatial_attention=use_spatial_attention,
    )


def spatial_gate_map(y: Tensor, gate: Conv2dParams) -> Tensor:
    """Single-channel (0,1) map from channel-mean and channel-max features."""
    pooled = T.concat(
        [T.reduce_mean(y, axis=1, keepdims=True),
         T.reduce_max(y, axis=1, keepdims=True)],
        axis=1,
    )
    return sigmoid(conv2d(pooled, gate))


def sefn_forward(x: Tensor, p: SefnParams) -> Tensor:
    """Apply the feed-forward block to [b, c, h, w]; shape is preserved."""
    g = gelu(conv2d(x, p.expand))
    if p.use_multiscale:
        g1, g2, g3 = T.split(g, 3, axis=1)
        y1 = g1
        y2 = conv2d(T.add(g2, y1), p.branch2)
        y3 = conv2d(T.add(g3, y2), p.branch3)
        y = T.concat([y1, y2, y3], axis=1)
    else:
        y = g
    if p.use_spatial_attention:
        y = mul_gate(y, spatial_gate_map(y, p.gate))
    return conv2d(y, p.project)
