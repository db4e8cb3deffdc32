"""Reverse-mode gradients on the numpy tape, checked against finite differences.

Builds a small conv -> batchnorm -> relu -> pooled-sum graph, backpropagates,
and probes one weight with a central difference. Then shows what freezing
does: a leaf without requires_grad ends the backward pass with grad None.
"""

import numpy as np

from fecil import autodiff as ad
from fecil.autodiff import Tensor, backward

rng = np.random.default_rng(0)

x_data = rng.standard_normal((2, 5, 5, 1))
w_data = rng.standard_normal((3, 3, 1, 4)) * 0.5

# float64 keeps the finite-difference comparison honest; production code
# runs the same tape in float32.
x = Tensor(x_data, dtype=np.float64)
w = Tensor(w_data, requires_grad=True, dtype=np.float64)
gamma = Tensor(np.ones(4), requires_grad=True, dtype=np.float64)
beta = Tensor(np.zeros(4), requires_grad=True, dtype=np.float64)


def forward(weight):
    # fresh running-stat buffers each call: batchnorm updates them in place
    rm = Tensor(np.zeros(4), dtype=np.float64)
    rv = Tensor(np.ones(4), dtype=np.float64)
    h = ad.conv2d(x, weight, stride=1, pad=1)
    h = ad.relu(ad.batchnorm(h, gamma, beta, rm, rv, train=True))
    return ad.tsum(ad.global_avg_pool(h))


loss = forward(w)
backward(loss)
print(f"loss = {loss.item():.6f}")

# central difference on one entry of the conv kernel
h = 1e-5
orig = w.data[1, 1, 0, 2]
w.data[1, 1, 0, 2] = orig + h
up = forward(w).item()
w.data[1, 1, 0, 2] = orig - h
down = forward(w).item()
w.data[1, 1, 0, 2] = orig
numeric = (up - down) / (2 * h)
analytic = w.grad[1, 1, 0, 2]
print(f"dL/dw[1,1,0,2]: tape {analytic:.8f}  numeric {numeric:.8f}  "
      f"|diff| {abs(analytic - numeric):.2e}")

# a frozen leaf contributes its value but collects no gradient
w_frozen = Tensor(w_data, requires_grad=False, dtype=np.float64)
loss2 = forward(w_frozen)
backward(loss2)
print(f"frozen kernel grad is None: {w_frozen.grad is None}")
print(f"gamma still gets a gradient: {np.abs(gamma.grad).sum():.6f}")
