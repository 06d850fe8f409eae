"""The deraining network: a U-shaped encoder-decoder of transformer blocks.

Each block applies dual self-attention and the feed-forward unit, both behind
pre-norm residual connections.  Scales halve resolution and double channels
via pixel-unshuffle downsampling; the decoder mirrors the encoder, fusing
skip connections by concatenation and a 1x1 conv.  The final 3x3 head
predicts a residual image that is added onto the network input.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, ShapeError
from . import tensor as T
from .nn import (
    Conv2dParams, DownsampleParams, UpsampleParams, LayerNormParams,
    conv2d, conv2d_init, downsample, downsample_init,
    layer_norm, layer_norm_init, upsample, upsample_init,
)
from .attention import DdsaParams, ddsa_forward, ddsa_init
from .sefn import SefnParams, sefn_forward, sefn_init, sefn_hidden


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``depths``/``heads`` list one entry per encoder level plus a final entry
    for the bottleneck; channels at level i are ``base_channels * 2**i``.
    Defaults are the desk-scale preset; :func:`paper_config` returns the
    full-scale configuration.
    """

    base_channels: int = 12
    depths: tuple[int, ...] = (1, 1, 1, 1, 1)
    heads: tuple[int, ...] = (1, 1, 2, 2, 2)
    k_ratio: float = 0.7
    branch_weights: tuple[float, float] = (0.5, 0.5)
    learnable_branch_weights: bool = False
    use_dense: bool = True
    use_sparse: bool = True
    use_multiscale: bool = True
    use_spatial_attention: bool = True
    attention_axis: str = "spatial"
    sparse_zero_fill: bool = False
    ffn_expansion: float = 2.66
    in_channels: int = 3

    def __post_init__(self):
        self.depths = tuple(self.depths)
        self.heads = tuple(self.heads)
        self.branch_weights = tuple(self.branch_weights)

    @property
    def levels(self) -> int:
        """Number of encoder/decoder scales (bottleneck not counted)."""
        return len(self.depths) - 1

    def level_channels(self, i: int) -> int:
        return self.base_channels * (2 ** i)

    def validate(self) -> None:
        if len(self.depths) != len(self.heads):
            raise ValueError(
                f"depths ({len(self.depths)} entries) and heads "
                f"({len(self.heads)} entries) must have equal length"
            )
        if len(self.depths) < 2:
            raise ValueError("need at least one encoder level plus a bottleneck")
        if self.base_channels < 1 or self.in_channels < 1:
            raise ValueError("base_channels and in_channels must be positive")
        if any(d < 1 for d in self.depths):
            raise ValueError(f"all depths must be >= 1, got {self.depths}")
        if any(h < 1 for h in self.heads):
            raise ValueError(f"all head counts must be >= 1, got {self.heads}")
        for i, h in enumerate(self.heads):
            c = self.level_channels(i)
            if c % h:
                raise ValueError(
                    f"level {i}: channels {c} not divisible by heads {h}"
                )
        if not 0.0 < self.k_ratio <= 1.0:
            raise ValueError(f"k_ratio must be in (0, 1], got {self.k_ratio}")
        if not (self.use_dense or self.use_sparse):
            raise ValueError("at least one attention branch must be enabled")
        if min(self.branch_weights) < 0.0:
            raise ValueError(f"branch weights must be >= 0, got {self.branch_weights}")
        if self.attention_axis not in ("spatial", "channel"):
            raise ValueError(f"unknown attention_axis {self.attention_axis!r}")
        sefn_hidden(self.base_channels, self.ffn_expansion)


def paper_config() -> ModelConfig:
    """Full-scale preset (not runnable at desk scale; kept for reference)."""
    return ModelConfig(
        base_channels=48,
        depths=(2, 4, 6, 6, 8),
        heads=(1, 1, 2, 4, 8),
    )


# ---------------------------------------------------------------------------
# transformer block
# ---------------------------------------------------------------------------


@dataclass
class DatbParams:
    """One dual-attention transformer block: pre-norm DDSA + pre-norm SEFN."""

    norm1: LayerNormParams
    attn: DdsaParams
    norm2: LayerNormParams
    ffn: SefnParams

    def named_params(self, prefix: str):
        out = self.norm1.named_params(f"{prefix}.norm1")
        out += self.attn.named_params(f"{prefix}.attn")
        out += self.norm2.named_params(f"{prefix}.norm2")
        out += self.ffn.named_params(f"{prefix}.ffn")
        return out


def datb_init(rng: np.random.Generator, channels: int, heads: int,
              cfg: ModelConfig) -> DatbParams:
    return DatbParams(
        norm1=layer_norm_init(channels),
        attn=ddsa_init(
            rng, channels, heads,
            k_ratio=cfg.k_ratio,
            use_dense=cfg.use_dense,
            use_sparse=cfg.use_sparse,
            branch_weights=cfg.branch_weights,
            learnable_weights=cfg.learnable_branch_weights,
            attention_axis=cfg.attention_axis,
            sparse_zero_fill=cfg.sparse_zero_fill,
        ),
        norm2=layer_norm_init(channels),
        ffn=sefn_init(
            rng, channels,
            expansion=cfg.ffn_expansion,
            use_multiscale=cfg.use_multiscale,
            use_spatial_attention=cfg.use_spatial_attention,
        ),
    )


def datb_forward(x: Tensor, p: DatbParams) -> Tensor:
    x = T.add(x, ddsa_forward(layer_norm(x, p.norm1), p.attn))
    return T.add(x, sefn_forward(layer_norm(x, p.norm2), p.ffn))


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------


class DerainModel:
    """Residual U-net of transformer blocks; built deterministically from a seed.

    Construction order (and therefore RNG consumption and parameter naming) is
    fixed: embed, then each encoder level and its downsample, the bottleneck,
    then per decoder level (deepest first) upsample / skip fuse / blocks, and
    the head.  ``zero_head=True`` zeroes the final conv so the initial model
    is exactly the identity on images.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0, zero_head: bool = False):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        L = cfg.levels

        self.embed = conv2d_init(rng, cfg.in_channels, cfg.base_channels, 3)
        self.enc_levels: list[list[DatbParams]] = []
        self.downs: list[DownsampleParams] = []
        for i in range(L):
            c = cfg.level_channels(i)
            self.enc_levels.append(
                [datb_init(rng, c, cfg.heads[i], cfg) for _ in range(cfg.depths[i])]
            )
            self.downs.append(downsample_init(rng, c))
        cb = cfg.level_channels(L)
        self.bottleneck = [
            datb_init(rng, cb, cfg.heads[L], cfg) for _ in range(cfg.depths[L])
        ]
        self.ups: list[UpsampleParams] = [None] * L
        self.fuses: list[Conv2dParams] = [None] * L
        self.dec_levels: list[list[DatbParams]] = [None] * L
        for j in reversed(range(L)):
            c = cfg.level_channels(j)
            self.ups[j] = upsample_init(rng, 2 * c)
            self.fuses[j] = conv2d_init(rng, 2 * c, c, 1)
            self.dec_levels[j] = [
                datb_init(rng, c, cfg.heads[j], cfg) for _ in range(cfg.depths[j])
            ]
        self.head = conv2d_init(rng, cfg.base_channels, cfg.in_channels, 3,
                                zero_weights=zero_head)

    # -- parameter access ---------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = self.embed.named_params("embed")
        for i, level in enumerate(self.enc_levels):
            for k, blk in enumerate(level):
                out += blk.named_params(f"enc{i}.block{k}")
            out += self.downs[i].named_params(f"down{i}")
        for k, blk in enumerate(self.bottleneck):
            out += blk.named_params(f"bottleneck.block{k}")
        for j in reversed(range(self.cfg.levels)):
            out += self.ups[j].named_params(f"up{j}")
            out += self.fuses[j].named_params(f"fuse{j}")
            for k, blk in enumerate(self.dec_levels[j]):
                out += blk.named_params(f"dec{j}.block{k}")
        out += self.head.named_params("head")
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- forward ------------------------------------------------------------

    def forward(
        self,
        x: Tensor,
        *,
        features: dict | None = None,
        skip_gains: list[float] | None = None,
    ) -> Tensor:
        """Map a rainy image batch [b, in, h, w] to its derained estimate.

        h and w must be divisible by 2**levels.  ``features`` (if given)
        collects named intermediates; ``skip_gains`` rescales each skip
        connection (diagnostics - 1.0 everywhere is the identity).
        """
        b, c, h, w = x.shape
        L = self.cfg.levels
        div = 2 ** L
        if c != self.cfg.in_channels:
            raise ShapeError(f"expected {self.cfg.in_channels} input channels, got {c}")
        if h % div or w % div:
            raise ShapeError(
                f"spatial size {h}x{w} not divisible by {div} "
                f"(pad inputs before calling forward)"
            )
        if skip_gains is not None and len(skip_gains) != L:
            raise ShapeError(f"skip_gains needs {L} entries, got {len(skip_gains)}")

        def note(name, t):
            if features is not None:
                features[name] = t.data

        f = conv2d(x, self.embed)
        skips = []
        for i, level in enumerate(self.enc_levels):
            for blk in level:
                f = datb_forward(f, blk)
            note(f"enc{i}", f)
            skips.append(f)
            f = downsample(f, self.downs[i])
        for blk in self.bottleneck:
            f = datb_forward(f, blk)
        note("bottleneck", f)
        for j in reversed(range(L)):
            f = upsample(f, self.ups[j])
            skip = skips[j]
            if skip_gains is not None:
                skip = T.scale(skip, skip_gains[j])
            f = conv2d(T.concat([f, skip], axis=1), self.fuses[j])
            note(f"dec{j}_in", f)
            for blk in self.dec_levels[j]:
                f = datb_forward(f, blk)
            note(f"dec{j}", f)
        res = conv2d(f, self.head)
        note("residual", res)
        return T.add(x, res)
