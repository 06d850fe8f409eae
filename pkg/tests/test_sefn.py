"""Tests for the feed-forward block: width rule, MLP reduction, branch
hierarchy, spatial gate, and gradients."""
import dataclasses

import numpy as np
import pytest

import derain_ddsa.nn as nn
import derain_ddsa.sefn as sefn
import derain_ddsa.tensor as T
from fd_oracle import check_grads, weighted_sum


def test_hidden_width_rule():
    assert sefn.sefn_hidden(12) == 33          # 3 * round(10.64)
    assert sefn.sefn_hidden(6) == 15           # 3 * round(5.32)
    assert sefn.sefn_hidden(48) == 129         # 3 * round(42.56)
    assert sefn.sefn_hidden(12) % 3 == 0
    with pytest.raises(T.ShapeError):
        sefn.sefn_hidden(1, expansion=0.1)


def test_forward_preserves_shape():
    rng = np.random.default_rng(0)
    x = T.Tensor(rng.standard_normal((2, 6, 8, 8)))
    p = sefn.sefn_init(np.random.default_rng(1), 6)
    assert sefn.sefn_forward(x, p).shape == (2, 6, 8, 8)


def test_plain_mlp_reduction_is_exact():
    """Both flags off must equal project(gelu(expand(x))) bitwise."""
    rng = np.random.default_rng(2)
    x = T.Tensor(rng.standard_normal((1, 6, 5, 5)))
    p = sefn.sefn_init(np.random.default_rng(3), 6,
                       use_multiscale=False, use_spatial_attention=False)
    got = sefn.sefn_forward(x, p).data
    want = nn.conv2d(nn.gelu(nn.conv2d(x, p.expand)), p.project).data
    assert np.array_equal(got, want)


def test_flags_change_output():
    rng = np.random.default_rng(4)
    x = T.Tensor(rng.standard_normal((1, 6, 8, 8)))
    init_rng = lambda: np.random.default_rng(5)
    full = sefn.sefn_init(init_rng(), 6)
    no_ms = sefn.sefn_init(init_rng(), 6, use_multiscale=False)
    no_sa = sefn.sefn_init(init_rng(), 6, use_spatial_attention=False)
    outs = [sefn.sefn_forward(x, p).data for p in (full, no_ms, no_sa)]
    assert not np.allclose(outs[0], outs[1])
    assert not np.allclose(outs[0], outs[2])


def test_branch_hierarchy_feeds_forward():
    """Group 1 features must reach branch 2 and branch 3 outputs."""
    rng = np.random.default_rng(6)
    p = sefn.sefn_init(np.random.default_rng(7), 6)
    x = rng.standard_normal((1, 6, 6, 6))
    base = sefn.sefn_forward(T.Tensor(x), p).data

    # zero the expand rows that produce group 1 -> changes must reach the
    # other branches through the y1 -> y2 -> y3 chain, not just group 1
    group = sefn.sefn_hidden(6) // 3
    w = p.expand.weight.data.copy()
    b = p.expand.bias.data.copy()
    w[:group] = 0.0
    b[:group] = 0.0
    p2 = dataclasses.replace(
        p, expand=dataclasses.replace(
            p.expand,
            weight=T.Tensor(w, requires_grad=True),
            bias=T.Tensor(b, requires_grad=True),
        )
    )
    out = sefn.sefn_forward(T.Tensor(x), p2).data
    assert not np.allclose(out, base)

    # gradients reach both depthwise branches
    leaf = T.Tensor(x, requires_grad=True)
    with T.Tape():
        T.backward(weighted_sum(sefn.sefn_forward(leaf, p)))
    assert np.abs(p.branch2.weight.grad).max() > 0.0
    assert np.abs(p.branch3.weight.grad).max() > 0.0


def test_spatial_gate_is_single_channel_in_unit_interval():
    rng = np.random.default_rng(8)
    p = sefn.sefn_init(np.random.default_rng(9), 6)
    y = T.Tensor(rng.standard_normal((2, 15, 7, 7)) * 3.0)
    gate = sefn.spatial_gate_map(y, p.gate)
    assert gate.shape == (2, 1, 7, 7)
    assert np.all(gate.data > 0.0) and np.all(gate.data < 1.0)


def test_sefn_gradients_vs_fd():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((1, 6, 5, 5))
    p = sefn.sefn_init(np.random.default_rng(11), 6)
    named = p.named_params("f")
    arrays = [x] + [t.data.copy() for _, t in named]

    def build(xt, ew, eb, b2w, b2b, b3w, b3b, gw, gb, pw, pb):
        params = dataclasses.replace(
            p,
            expand=dataclasses.replace(p.expand, weight=ew, bias=eb),
            branch2=dataclasses.replace(p.branch2, weight=b2w, bias=b2b),
            branch3=dataclasses.replace(p.branch3, weight=b3w, bias=b3b),
            gate=dataclasses.replace(p.gate, weight=gw, bias=gb),
            project=dataclasses.replace(p.project, weight=pw, bias=pb),
        )
        return weighted_sum(sefn.sefn_forward(xt, params))

    check_grads(build, arrays)


def test_named_params_order():
    p = sefn.sefn_init(np.random.default_rng(12), 6)
    names = [n for n, _ in p.named_params("ffn")]
    assert names == [
        "ffn.expand.weight", "ffn.expand.bias",
        "ffn.branch2.weight", "ffn.branch2.bias",
        "ffn.branch3.weight", "ffn.branch3.bias",
        "ffn.gate.weight", "ffn.gate.bias",
        "ffn.project.weight", "ffn.project.bias",
    ]
    plain = sefn.sefn_init(np.random.default_rng(13), 6,
                           use_multiscale=False, use_spatial_attention=False)
    assert [n for n, _ in plain.named_params("ffn")] == [
        "ffn.expand.weight", "ffn.expand.bias",
        "ffn.project.weight", "ffn.project.bias",
    ]
