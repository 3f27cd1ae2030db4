"""A short tour of the numpy tensor engine underneath every model in icdxml.

Run: python3 demos/01_autodiff_tour.py
"""

import numpy as np

from icdxml import numerics as nx
from icdxml.numerics import Tensor, grad_check

rng = np.random.default_rng(0)

# Tensors record the ops applied to them; backward() walks that graph in reverse.
x = nx.parameter(rng.normal(size=(3, 4)))
w = nx.parameter(rng.normal(size=(4, 2)))
loss = (nx.tanh(x @ w) ** 2).mean()
loss.backward()
print("loss", float(loss.data))
print("dloss/dw\n", w.grad)

# The gradient of tanh(xw)^2 by hand, for comparison.
z = np.tanh(x.data @ w.data)
manual = x.data.T @ (2 * z * (1 - z**2)) / z.size
print("max |autodiff - manual| =", np.abs(manual - w.grad).max())

# grad_check compares autodiff with central differences in float64 and
# returns the worst per-coordinate relative error.
mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
targets = np.array([2, 4])


def attention_like(scores):
    p = nx.softmax(scores, mask=mask)
    return nx.masked_cross_entropy(nx.log_softmax(scores), targets) + (p * p).sum()


print("softmax + cross-entropy rel err:", grad_check(attention_like, rng.normal(size=(2, 5))))

# A linear layer followed by layer norm, checked over weight and gain together.
inp = Tensor(rng.normal(size=(6, 5)))
err = grad_check(lambda W, g: nx.layer_norm(nx.linear(inp, W), g, Tensor(np.zeros(3))).sum() ** 2,
                 [rng.normal(size=(5, 3)), rng.normal(1.0, 0.1, size=3)])
print("linear + layer norm rel err:", err)

# Masked positions get exactly zero probability, and rows still sum to one.
with nx.no_grad():
    p = nx.softmax(Tensor(rng.normal(size=(2, 5))), mask=mask).data
print("masked mass:", p[~mask].sum(), " row sums:", p.sum(axis=1))

# Computation runs in float32 by default; precision() switches a block to float64.
print("default dtype:", nx.default_dtype())
with nx.precision(np.float64):
    print("inside precision():", nx.tensor([1.0]).data.dtype)
