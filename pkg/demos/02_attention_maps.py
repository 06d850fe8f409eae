"""Inside dynamic dual self-attention: dense rows, sparse rows, and top-k.

Run:  python3 demos/02_attention_maps.py
"""
import numpy as np

from derain_ddsa import tensor as T
from derain_ddsa.attention import (
    apply_topk_mask, ddsa_forward, ddsa_init, scaled_scores, top_k_count,
    topk_row_mask,
)
from derain_ddsa.tensor import Tensor, no_grad

rng = np.random.default_rng(0)

print("=== 1. One attention row, dense vs top-k sparse ===")
n = 10
scores = Tensor(rng.standard_normal((1, n)) * 2.0)
with no_grad():
    dense = T.softmax_rows(scores)
    mask = topk_row_mask(scores.data, 0.4)
    sparse = T.softmax_rows(apply_topk_mask(scores, 0.4))

k = top_k_count(n, 0.4)
print(f"n = {n} candidates, k_ratio = 0.4 -> keep ceil(0.4*{n}) = {k}")
print("idx   score   dense-weight   sparse-weight")
for i in range(n):
    tag = "kept" if mask[0, i] else "dropped"
    print(f"{i:3d}  {scores.data[0,i]: 6.2f}      {dense.data[0,i]:.4f}"
          f"       {sparse.data[0,i]:.4f}   {tag}")
print(f"dense row sum  = {dense.data.sum():.12f}")
print(f"sparse row sum = {sparse.data.sum():.12f}")
print("The sparse branch re-normalizes over the survivors; dropped entries")
print("are exactly zero, so weight concentrates on the strongest matches.")

print()
print("=== 2. Nesting: smaller k keeps a subset of larger k ===")
row = rng.standard_normal((1, 20))
kept_sets = {}
for ratio in (0.3, 0.5, 0.7, 1.0):
    kept = set(np.flatnonzero(topk_row_mask(np.asarray(row), ratio)[0]))
    kept_sets[ratio] = kept
    print(f"  k_ratio {ratio:.1f}: keeps {len(kept):2d} of 20")
assert kept_sets[0.3] <= kept_sets[0.5] <= kept_sets[0.7] <= kept_sets[1.0]
print("  0.3 ⊆ 0.5 ⊆ 0.7 ⊆ 1.0 confirmed.")

print()
print("=== 3. The full dual block mixes both branches ===")
c, heads, hw = 8, 2, 6
params = ddsa_init(rng, c, heads, k_ratio=0.5)
x = Tensor(rng.standard_normal((1, c, hw, hw)) * 0.5)
with no_grad():
    y = ddsa_forward(x, params)
print(f"input  [1, {c}, {hw}, {hw}] -> output {list(y.data.shape)}")
print(f"output std {y.data.std():.4f} (1x1 out-projection of 0.5*dense + 0.5*sparse)")

print()
print("=== 4. Where does a pixel look?  ASCII attention map ===")
q = Tensor(rng.standard_normal((1, 1, hw * hw, 4)))
kk = Tensor(rng.standard_normal((1, 1, hw * hw, 4)))
with no_grad():
    att = T.softmax_rows(apply_topk_mask(scaled_scores(q, kk), 0.3))
center = (hw // 2) * hw + hw // 2
amap = att.data[0, 0, center].reshape(hw, hw)
shades = " .:-=+*#%@"
print(f"attention of the center pixel over the {hw}x{hw} grid "
      f"(k_ratio 0.3 -> {top_k_count(hw*hw, 0.3)} of {hw*hw} kept):")
for r in range(hw):
    line = "".join(
        shades[min(int(amap[r, cc] / (amap.max() + 1e-12) * (len(shades) - 1)),
                   len(shades) - 1)]
        for cc in range(hw)
    )
    print(f"   |{line}|")
print("Blank cells were pruned by the top-k mask; the block attends only to")
print("the strongest correlations, which is what keeps rain streaks from")
print("polluting every pixel's context.")
