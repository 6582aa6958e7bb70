#!/usr/bin/env python3
"""A tour of the tensor core: build a graph, run backward, check a gradient.

Everything in the library ultimately reduces to these few operations, so
this is the place to start reading.
"""

import numpy as np

from kkt import tensor as T

x = T.Tensor(np.array([[0.5, -1.0], [2.0, 0.3]]), requires_grad=True)
w = T.Tensor(np.array([[1.0, 0.0], [0.2, -0.7]]), requires_grad=True)

h = T.tanh(T.matmul(x, w))
probs = T.softmax_rows(h)
loss = T.sum_all(T.mul(probs, probs))

print("forward value:", float(loss.data))

loss.backward()
print("dloss/dx:\n", x.grad)
print("dloss/dw:\n", w.grad)

# Spot-check one entry of x.grad against a central finite difference.
eps = 1e-6
i, j = 1, 0
keep = x.data[i, j]


def f():
    h = T.tanh(T.matmul(x, w))
    p = T.softmax_rows(h)
    return float(T.sum_all(T.mul(p, p)).data)


x.data[i, j] = keep + eps
up = f()
x.data[i, j] = keep - eps
down = f()
x.data[i, j] = keep
numeric = (up - down) / (2 * eps)
print(f"analytic grad[{i},{j}] = {x.grad[i, j]:.10f}")
print(f"numeric  grad[{i},{j}] = {numeric:.10f}")

# Gradients accumulate across backward calls on leaves.
loss2 = T.sum_all(T.mul(x, x))
loss2.backward()
print("after a second backward, x.grad includes both contributions:\n", x.grad)

# Classification losses come from raw logits, stabilized internally.
logits = T.Tensor(np.array([2.0, -1.0, 0.5]), requires_grad=True)
nll = T.cross_entropy_from_logits(logits, 0)
nll.backward()
print("cross entropy:", float(nll.data), " gradient:", logits.grad)
