"""Tests for dual self-attention: top-k masking algebra, branch mixing,
equivalences between configurations, and gradients vs finite differences."""
import dataclasses
import math

import numpy as np
import pytest

import derain_ddsa.attention as att
import derain_ddsa.nn as nn
import derain_ddsa.tensor as T
from fd_oracle import check_grads, weighted_sum


# ---------------------------------------------------------------------------
# top-k masking
# ---------------------------------------------------------------------------

def test_top_k_count():
    assert att.top_k_count(10, 0.7) == 7
    assert att.top_k_count(10, 0.65) == 7      # ceil
    assert att.top_k_count(10, 1.0) == 10
    assert att.top_k_count(3, 0.01) == 1       # never less than one
    for bad in (0.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            att.top_k_count(10, bad)


def test_topk_mask_counts_equal_ceil_without_ties():
    rng = np.random.default_rng(0)
    scores = rng.standard_normal((2, 3, 8, 20))  # continuous -> no ties
    for k_ratio in (0.1, 0.3, 0.5, 0.7, 0.95):
        mask = att.topk_row_mask(scores, k_ratio)
        want = math.ceil(k_ratio * 20)
        assert np.all(mask.sum(axis=-1) == want)


def test_topk_mask_keeps_all_threshold_ties():
    row = np.array([[5.0, 5.0, 3.0, 1.0]])
    mask = att.topk_row_mask(row, 0.25)  # k = 1, two entries tie at 5
    assert mask.sum() == 2
    assert list(mask[0]) == [True, True, False, False]


def test_topk_masks_nest_with_growing_ratio():
    rng = np.random.default_rng(1)
    scores = rng.standard_normal((2, 1, 16, 16))
    prev = None
    for k_ratio in (0.3, 0.5, 0.7, 1.0):
        mask = att.topk_row_mask(scores, k_ratio)
        if prev is not None:
            assert np.all(prev <= mask), f"mask at {k_ratio} lost entries"
        prev = mask
    assert prev.all()  # k_ratio = 1 keeps everything


def test_apply_topk_mask_sentinel_and_gradients():
    rng = np.random.default_rng(2)
    scores = rng.standard_normal((2, 4, 10)) * 2.0
    out = att.apply_topk_mask(T.Tensor(scores), 0.4)
    mask = att.topk_row_mask(scores, 0.4)
    assert np.all(out.data[~mask] == T.MASKED)
    assert np.array_equal(out.data[mask], scores[mask])

    def build(s):
        return weighted_sum(T.softmax_rows(att.apply_topk_mask(s, 0.4)))

    check_grads(build, [scores])


# ---------------------------------------------------------------------------
# scores and branch algebra
# ---------------------------------------------------------------------------

def test_scaled_scores_identity_example():
    eye = np.eye(2).reshape(1, 1, 2, 2)
    p = att.scaled_scores(T.Tensor(eye), T.Tensor(eye)).data
    assert np.allclose(p, eye / math.sqrt(2.0), rtol=0, atol=1e-15)


def test_both_branches_row_stochastic():
    rng = np.random.default_rng(3)
    scores = T.Tensor(rng.standard_normal((2, 2, 16, 16)) * 3.0)
    dense = T.softmax_rows(scores).data
    sparse = T.softmax_rows(att.apply_topk_mask(scores, 0.7)).data
    for p in (dense, sparse):
        assert np.max(np.abs(p.sum(axis=-1) - 1.0)) < 1e-9
        assert np.all(p >= 0.0)
    kept = att.topk_row_mask(scores.data, 0.7)
    assert np.all(sparse[~kept] == 0.0)


def _tiny_ddsa(seed=0, **kw):
    rng = np.random.default_rng(seed)
    return att.ddsa_init(rng, 4, 2, **kw)


def test_k_ratio_one_equals_dense_only():
    rng = np.random.default_rng(4)
    x = T.Tensor(rng.standard_normal((1, 4, 6, 6)))
    full = _tiny_ddsa(k_ratio=1.0)
    dense = dataclasses.replace(full, use_sparse=False, branch_weights=(1.0, 0.0))
    out_full = att.ddsa_forward(x, full).data
    out_dense = att.ddsa_forward(x, dense).data
    assert np.max(np.abs(out_full - out_dense)) <= 1e-9


def test_zero_sparse_weight_equals_dense_branch_exactly():
    rng = np.random.default_rng(5)
    x = T.Tensor(rng.standard_normal((1, 4, 6, 6)))
    full = _tiny_ddsa(k_ratio=0.6, branch_weights=(0.7, 0.0))
    dense = dataclasses.replace(full, use_sparse=False)
    assert np.array_equal(
        att.ddsa_forward(x, full).data, att.ddsa_forward(x, dense).data
    )


def test_sparse_only_branch_runs():
    rng = np.random.default_rng(6)
    x = T.Tensor(rng.standard_normal((1, 4, 6, 6)))
    p = _tiny_ddsa(use_dense=False, branch_weights=(0.0, 1.0))
    out = att.ddsa_forward(x, p)
    assert out.shape == x.shape


def test_permutation_equivariance_of_dual_attention():
    rng = np.random.default_rng(7)
    q, k, v = (rng.standard_normal((1, 2, 12, 4)) for _ in range(3))
    perm = rng.permutation(12)
    out = att.dual_attention(T.Tensor(q), T.Tensor(k), T.Tensor(v), k_ratio=0.5).data
    out_p = att.dual_attention(
        T.Tensor(q[:, :, perm]), T.Tensor(k[:, :, perm]), T.Tensor(v[:, :, perm]),
        k_ratio=0.5,
    ).data
    assert np.allclose(out_p, out[:, :, perm], rtol=0, atol=1e-12)


def test_zero_fill_variant_changes_result():
    rng = np.random.default_rng(8)
    x = T.Tensor(rng.standard_normal((1, 4, 6, 6)))
    sentinel = _tiny_ddsa(k_ratio=0.5)
    zfill = dataclasses.replace(sentinel, sparse_zero_fill=True)
    a = att.ddsa_forward(x, sentinel).data
    b = att.ddsa_forward(x, zfill).data
    assert not np.allclose(a, b)


def test_channel_axis_variant():
    rng = np.random.default_rng(9)
    x = T.Tensor(rng.standard_normal((2, 4, 6, 6)))
    spatial = _tiny_ddsa(k_ratio=0.7)
    channel = dataclasses.replace(spatial, attention_axis="channel")
    a = att.ddsa_forward(x, spatial)
    b = att.ddsa_forward(x, channel)
    assert a.shape == x.shape and b.shape == x.shape
    assert not np.allclose(a.data, b.data)


def test_ddsa_forward_shape_and_determinism():
    rng = np.random.default_rng(10)
    x = T.Tensor(rng.standard_normal((2, 6, 8, 8)))
    p = att.ddsa_init(np.random.default_rng(11), 6, 2)
    a = att.ddsa_forward(x, p).data
    b = att.ddsa_forward(x, p).data
    assert a.shape == (2, 6, 8, 8)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# initialization and configuration errors
# ---------------------------------------------------------------------------

def test_ddsa_init_validation():
    rng = np.random.default_rng(12)
    with pytest.raises(T.ShapeError):
        att.ddsa_init(rng, 5, 2)  # channels not divisible by heads
    with pytest.raises(ValueError):
        att.ddsa_init(rng, 4, 2, use_dense=False, use_sparse=False)
    with pytest.raises(ValueError):
        att.ddsa_init(rng, 4, 2, attention_axis="diagonal")
    with pytest.raises(ValueError):
        att.ddsa_init(rng, 4, 2, k_ratio=0.0)


def test_learnable_gains_positive_and_trained():
    p = _tiny_ddsa(learnable_weights=True)
    # softplus(raw) recovers the requested initial weights
    assert abs(math.log1p(math.exp(p.dense_gain.data.item())) - 0.5) < 1e-12
    rng = np.random.default_rng(13)
    x = T.Tensor(rng.standard_normal((1, 4, 6, 6)))
    with T.Tape():
        out = att.ddsa_forward(x, p)
        loss = weighted_sum(out)
        T.backward(loss)
    assert p.dense_gain.grad is not None and p.dense_gain.grad.item() != 0.0
    assert p.sparse_gain.grad is not None and p.sparse_gain.grad.item() != 0.0
    # even a very negative raw gain keeps the effective weight positive
    assert nn.softplus(T.Tensor(-5.0)).data.item() > 0.0


def test_named_params_stable_and_complete():
    p = _tiny_ddsa(learnable_weights=True)
    names = [name for name, _ in p.named_params("att")]
    assert names == [
        "att.qkv_point.weight", "att.qkv_point.bias",
        "att.qkv_depth.weight", "att.qkv_depth.bias",
        "att.out_proj.weight", "att.out_proj.bias",
        "att.dense_gain", "att.sparse_gain",
    ]


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def test_ddsa_gradients_vs_fd():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((1, 4, 4, 4))
    p = att.ddsa_init(np.random.default_rng(15), 4, 2, k_ratio=0.6)
    tensors = [x] + [t.data.copy() for _, t in p.named_params("a")]

    def build(xt, pw, pb, dw, db, ow, ob):
        params = dataclasses.replace(
            p,
            qkv_point=dataclasses.replace(p.qkv_point, weight=pw, bias=pb),
            qkv_depth=dataclasses.replace(p.qkv_depth, weight=dw, bias=db),
            out_proj=dataclasses.replace(p.out_proj, weight=ow, bias=ob),
        )
        return weighted_sum(att.ddsa_forward(xt, params))

    check_grads(build, tensors)


def test_dual_attention_gradients_channel_tokens():
    rng = np.random.default_rng(16)
    q, k, v = (rng.standard_normal((1, 1, 4, 9)) for _ in range(3))

    def build(qt, kt, vt):
        return weighted_sum(att.dual_attention(qt, kt, vt, k_ratio=0.5))

    check_grads(build, [q, k, v])
