"""
A small reverse-mode autograd
=============================

Every layer of the tracker is built on :class:`evtrack.tensor.Tensor`, a
float64 array that remembers how it was computed. ``backward()`` walks that
record in reverse; ``grad_check`` compares the result against central
finite differences.
"""

import numpy as np

from evtrack.functional import AttentionConfig, conv2d, multi_head_attention, softmax
from evtrack.tensor import Tensor, grad_check, matmul, no_grad

rng = np.random.default_rng(0)

# gradients of a two-layer network
w1 = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
w2 = Tensor(rng.normal(size=(8, 1)), requires_grad=True)
x = Tensor(rng.normal(size=(16, 4)))
loss = (matmul(matmul(x, w1).relu(), w2) ** 2).mean()
loss.backward()
print(loss.item(), w1.grad.shape, w2.grad.shape)

# the analytic gradients agree with finite differences
print(grad_check(lambda: (matmul(matmul(x, w1).relu(), w2) ** 2).mean(), [w1, w2], n_samples=50))

# Broadcasting is deliberately narrow: scalars or equal shapes only,
# anything else goes through an explicit expand()
b = Tensor(np.ones(8))
print((matmul(x, w1) + b.expand((16, 8))).shape)

# %%
# The higher-level kernels (convolution, attention, softmax) are
# differentiable in the same way.

img = Tensor(rng.normal(size=(1, 2, 9, 9)), requires_grad=True)
k = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
print(grad_check(lambda: (conv2d(img, k, stride=2, pad=1) ** 2).sum(), [img, k]))

cfg = AttentionConfig.split(8, 2)
q = Tensor(rng.normal(size=(5, 8)), requires_grad=True)
ws = [Tensor(rng.normal(size=(8, 8)) / 3, requires_grad=True) for _ in range(4)]
print(grad_check(lambda: multi_head_attention(q, q, q, cfg, *ws).sum(), [q] + ws))

# inference code runs under no_grad and builds no graph
with no_grad():
    p = softmax(Tensor(rng.normal(size=10)))
print(p.requires_grad, p.data.sum())
