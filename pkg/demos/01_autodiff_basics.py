"""Reverse-mode autodiff on plain numpy arrays.

Builds a tiny computation on the tape, pulls gradients back through it, and
cross-checks against central finite differences.
"""
import numpy as np

from attrikit import Tensor, backward, gather, log_softmax, matmul, relu, tape, value_and_grad

rng = np.random.default_rng(0)

# forward pass under an explicit tape
W = rng.normal(size=(3, 4))
x_val = rng.uniform(0.5, 1.5, size=4)      # keep the relu active

with tape():
    x = Tensor(x_val, requires_grad=True)
    logits = matmul(Tensor(W), relu(x))
    loss = gather(log_softmax(logits), 1)
    backward(loss)

print("loss          ", float(loss.data))
print("dloss/dx      ", x.grad)

# the same thing through the convenience wrapper
def f(t):
    return gather(log_softmax(matmul(Tensor(W), relu(t))), 1)

val, grad = value_and_grad(f, x_val)
print("wrapper grad  ", grad)

# finite-difference cross-check
h = 1e-6
fd = np.zeros_like(x_val)
for j in range(x_val.size):
    xp, xm = x_val.copy(), x_val.copy()
    xp[j] += h
    xm[j] -= h
    fd[j] = (value_and_grad(f, xp)[0] - value_and_grad(f, xm)[0]) / (2 * h)
print("fd grad       ", fd)
print("max abs diff  ", np.max(np.abs(grad - fd)))
