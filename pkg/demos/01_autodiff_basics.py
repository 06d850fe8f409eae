"""A tour of the autodiff tape: record, differentiate, verify.

Run:  python3 demos/01_autodiff_basics.py
"""
import numpy as np

from derain_ddsa import tensor as T
from derain_ddsa.tensor import MASKED, Tape, Tensor, no_grad

print("=== 1. Tensors and the tape ===")
print("Gradients only flow while a Tape is active; outside it, ops are plain math.")
x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
w = Tensor(np.array([[0.5], [-1.0]]), requires_grad=True)

with Tape():
    h = T.matmul(x, w)            # [2, 1]
    loss = T.reduce_sum(T.power(h, 2.0))
    T.backward(loss)

print(f"x =\n{x.data}")
print(f"w = {w.data.ravel()},  h = {h.data.ravel()},  loss = {loss.data:.4f}")
print(f"dloss/dx =\n{x.grad}")
print(f"dloss/dw = {w.grad.ravel()}")

print()
print("=== 2. Checking a gradient by hand ===")
print("loss = sum((x @ w)^2), so dloss/dw = 2 * x^T @ (x @ w).")
manual = 2.0 * x.data.T @ h.data
print(f"manual  : {manual.ravel()}")
print(f"autodiff: {w.grad.ravel()}")
assert np.allclose(manual, w.grad)
print("match.")

print()
print("=== 3. Finite differences agree too ===")
h_step = 1e-6


def loss_at(wv):
    with no_grad():
        return float(np.sum((x.data @ wv) ** 2))


for i in range(2):
    wp = w.data.copy(); wp[i, 0] += h_step
    wm = w.data.copy(); wm[i, 0] -= h_step
    fd = (loss_at(wp) - loss_at(wm)) / (2 * h_step)
    print(f"  dloss/dw[{i}]  autodiff {w.grad[i,0]: .6f}   central-diff {fd: .6f}")

print()
print("=== 4. Masked softmax: the sentinel that becomes exact zero ===")
print(f"MASKED is a finite sentinel ({MASKED:g}); softmax turns it into exactly 0,")
print("so masked attention weights are really zero, not merely tiny.")
scores = Tensor(np.array([[2.0, MASKED, 0.0, MASKED]]), requires_grad=True)
with Tape():
    probs = T.softmax_rows(scores)
    T.backward(T.reduce_sum(T.mul(probs, Tensor(np.array([[1.0, 0.0, 0.0, 0.0]])))))
print(f"softmax([2, MASKED, 0, MASKED]) = {probs.data.ravel()}")
print(f"row sum = {probs.data.sum():.17f}")
print(f"gradient at masked positions stays zero: {scores.grad.ravel()}")

print()
print("=== 5. One tape, one backward ===")
with Tape() as tape:
    y = T.reduce_sum(T.exp(Tensor(np.array([0.0, 1.0]), requires_grad=True)))
    T.backward(y)
try:
    T.backward(y)
except RuntimeError as exc:
    print(f"second backward on the same tape raises: {exc}")

print()
print("Everything the network does - convolutions, attention, the training")
print("loss - is built from ops recorded exactly like these.")
