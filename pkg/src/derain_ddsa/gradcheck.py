"""Finite-difference verification of every differentiable building block.

Each case builds a small instance of one layer, computes analytic gradients
of a fixed random projection of the output, and compares them entry by entry
against central differences.  Per-layer cases check every entry at a 1e-4
relative tolerance; the whole-model case samples the largest-magnitude
gradient entries per parameter at 1e-3 (central differences bottom out
around 1e-9 absolute, so entries whose gradient sits at that floor are
compared absolutely instead of relatively).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor
from . import tensor as T
from . import nn
from .attention import ddsa_forward, ddsa_init
from .sefn import sefn_forward, sefn_init
from .model import DerainModel, ModelConfig, datb_forward, datb_init

PER_LAYER_TOL = 1e-4
FULL_MODEL_TOL = 1e-3


@dataclass
class GradCheckResult:
    name: str
    entries_checked: int
    max_rel_err: float
    tolerance: float
    ok: bool


def fd_check(
    name: str,
    forward: Callable[[], Tensor],
    leaves: list[Tensor],
    tolerance: float,
    *,
    h: float = 1e-5,
    sample: int | None = None,
    seed: int = 0,
    abs_floor: float = 1e-7,
) -> GradCheckResult:
    """Compare analytic gradients of ``forward`` wrt ``leaves`` against FD.

    ``forward`` must close over ``leaves`` (all requiring grad) and rebuild
    its output from their current data each call.  ``sample`` limits the
    check to that many entries per leaf, chosen by descending gradient
    magnitude so the comparison stays above the FD noise floor.
    """
    for leaf in leaves:
        leaf.grad = None
    with T.Tape():
        out = forward()
        cot = np.random.default_rng(seed).standard_normal(out.data.shape)
        loss = T.reduce_sum(T.mul(out, Tensor(cot)))
        T.backward(loss)
    grads = []
    for leaf in leaves:
        if leaf.grad is None:
            raise RuntimeError(f"{name}: a leaf received no gradient")
        grads.append(leaf.grad.copy())

    def value() -> float:
        with T.no_grad():
            return float(np.sum(forward().data * cot))

    max_rel = 0.0
    checked = 0
    for leaf, grad in zip(leaves, grads):
        flat = leaf.data.reshape(-1)
        gf = grad.reshape(-1)
        if sample is None or flat.size <= sample:
            idxs = range(flat.size)
        else:
            idxs = np.argsort(-np.abs(gf), kind="stable")[:sample]
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = value()
            flat[i] = orig - h
            fm = value()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            diff = abs(gf[i] - numeric)
            rel = 0.0 if diff < abs_floor else diff / (abs(numeric) + 1e-8)
            max_rel = max(max_rel, rel)
            checked += 1
    return GradCheckResult(name, checked, max_rel, tolerance, max_rel < tolerance)


def _params_of(obj, prefix: str) -> list[Tensor]:
    return [p for _, p in obj.named_params(prefix)]


def _cases(seed: int):
    """Yield (name, forward, leaves, tolerance, sample) for the whole suite."""
    rng = np.random.default_rng(seed)

    x = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    y = Tensor(rng.standard_normal((2, 4, 2)), requires_grad=True)
    yield "tensor.matmul", (lambda x=x, y=y: T.matmul(x, y)), [x, y], PER_LAYER_TOL, None

    s = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
    mask = np.zeros((3, 6), bool)
    mask[0, 2] = mask[2, 0] = mask[2, 5] = True

    def softmax_case(s=s, mask=mask):
        masked = T.record_op(
            "apply_mask", (s,), np.where(mask, T.MASKED, s.data),
            lambda g: (np.where(mask, 0.0, g),),
        )
        return T.softmax_rows(masked)

    yield "tensor.softmax_rows(masked)", softmax_case, [s], PER_LAYER_TOL, None

    m = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    yield "tensor.reduce_max", (lambda m=m: T.reduce_max(m, axis=1)), [m], PER_LAYER_TOL, None

    conv = nn.conv2d_init(rng, 3, 4, 3)
    cx = Tensor(rng.standard_normal((1, 3, 5, 5)), requires_grad=True)
    yield ("nn.conv2d(dense-3x3)", (lambda cx=cx, conv=conv: nn.conv2d(cx, conv)),
           [cx, conv.weight, conv.bias], PER_LAYER_TOL, None)

    dw = nn.conv2d_init(rng, 4, 4, 3, stride=2, groups=4)
    dx = Tensor(rng.standard_normal((1, 4, 6, 6)), requires_grad=True)
    yield ("nn.conv2d(depthwise-stride2)", (lambda dx=dx, dw=dw: nn.conv2d(dx, dw)),
           [dx, dw.weight, dw.bias], PER_LAYER_TOL, None)

    ln = nn.layer_norm_init(4)
    lx = Tensor(rng.standard_normal((2, 4, 3, 3)), requires_grad=True)
    yield ("nn.layer_norm", (lambda lx=lx, ln=ln: nn.layer_norm(lx, ln)),
           [lx, ln.gamma, ln.beta], PER_LAYER_TOL, None)

    gx = Tensor(rng.standard_normal((2, 3, 2, 4)), requires_grad=True)
    yield "nn.gelu", (lambda gx=gx: nn.gelu(gx)), [gx], PER_LAYER_TOL, None

    sx = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
    sg = Tensor(rng.standard_normal((1, 1, 4, 4)), requires_grad=True)
    yield ("nn.sigmoid-gate", (lambda sx=sx, sg=sg: nn.mul_gate(sx, nn.sigmoid(sg))),
           [sx, sg], PER_LAYER_TOL, None)

    spx = Tensor(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
    yield ("nn.softplus", (lambda spx=spx: nn.softplus(spx)), [spx],
           PER_LAYER_TOL, None)

    down = nn.downsample_init(rng, 4)
    up = nn.upsample_init(rng, 8)
    rx = Tensor(rng.standard_normal((1, 4, 4, 4)), requires_grad=True)
    yield ("nn.resample(down+up)",
           (lambda rx=rx, down=down, up=up: nn.upsample(nn.downsample(rx, down), up)),
           [rx, down.conv.weight, up.conv.weight], PER_LAYER_TOL, None)

    attn_s = ddsa_init(rng, 4, 2, k_ratio=0.6)
    ax = Tensor(rng.standard_normal((1, 4, 4, 4)), requires_grad=True)
    yield ("attention.ddsa(spatial)", (lambda ax=ax, a=attn_s: ddsa_forward(ax, a)),
           [ax] + _params_of(attn_s, "a"), PER_LAYER_TOL, None)

    attn_c = ddsa_init(rng, 4, 2, k_ratio=0.6, attention_axis="channel",
                       learnable_weights=True)
    acx = Tensor(rng.standard_normal((1, 4, 4, 4)), requires_grad=True)
    yield ("attention.ddsa(channel,learnable)",
           (lambda acx=acx, a=attn_c: ddsa_forward(acx, a)),
           [acx] + _params_of(attn_c, "a"), PER_LAYER_TOL, None)

    ffn = sefn_init(rng, 6)
    fx = Tensor(rng.standard_normal((1, 6, 4, 4)), requires_grad=True)
    yield ("sefn.forward", (lambda fx=fx, f=ffn: sefn_forward(fx, f)),
           [fx] + _params_of(ffn, "f"), PER_LAYER_TOL, None)

    bcfg = ModelConfig(base_channels=6, depths=(1, 1), heads=(1, 2))
    block = datb_init(rng, 6, 2, bcfg)
    bx = Tensor(rng.standard_normal((1, 6, 4, 4)), requires_grad=True)
    yield ("model.block(topk-active)", (lambda bx=bx, b=block: datb_forward(bx, b)),
           [bx] + _params_of(block, "b"), PER_LAYER_TOL, None)

    # Hard top-k selection is piecewise-smooth: a finite-difference probe can
    # flip which scores cross the keep-threshold, and at 16x16 (256 scores per
    # row) the gaps between order statistics are smaller than the induced
    # perturbation, so FD would measure the jump, not the gradient.  Masked
    # selection is therefore FD-checked where gaps dwarf the probe step (the
    # DDSA and block cases above, 16 scores per row); the whole-model case
    # keeps every score so the composition is smooth at the test point.
    full_cfg = ModelConfig(base_channels=6, depths=(1, 1), heads=(1, 2),
                           k_ratio=1.0)
    model = DerainModel(full_cfg, seed=seed + 1)
    mx = Tensor(rng.standard_normal((1, 3, 16, 16)), requires_grad=True)
    leaves = [mx] + [p for _, p in model.named_parameters()]
    yield ("model.full(16x16)", (lambda mx=mx, m=model: m.forward(mx)),
           leaves, FULL_MODEL_TOL, 6)


def run_suite(seed: int = 0) -> list[GradCheckResult]:
    """Run every case; per-layer cases check all entries, the full model samples."""
    return [
        fd_check(name, forward, leaves, tol, sample=sample, seed=seed)
        for name, forward, leaves, tol, sample in _cases(seed)
    ]
