"""
Checking backpropagation against finite differences
===================================================

The network is small enough that every parameter can be nudged by hand.
A central difference with step 1e-4 should agree with the analytic gradient
to a few parts per million, except where the nudge pushes a ReLU input
across zero.
"""

import numpy as np

from strain_sense.cnn import init_network, loss_and_grads

rng = np.random.default_rng(7)
net = init_network(num_classes=4, growth_rate=2, seed=7)
print(net.param_count(), "parameters in", len(net.params), "tensors")

x = rng.random((4, 1, 10, 5))
y = np.array([0, 1, 2, 3])
loss, grads = loss_and_grads(net.copy(), x, y)
print("loss at init: %.4f (ln 4 = %.4f)" % (loss, np.log(4)))

###############################################################################
# Compare a handful of tensors entry by entry.

h = 1e-4
for name in ("A1.conv.w", "T.bn.gamma", "B3.conv.b", "fc.w"):
    p = net.params[name]
    num = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + h
        up = loss_and_grads(net.copy(), x, y)[0]
        p[idx] = old - h
        down = loss_and_grads(net.copy(), x, y)[0]
        p[idx] = old
        num[idx] = (up - down) / (2 * h)
    rel = np.abs(num - grads[name]) / np.maximum(np.maximum(np.abs(num), np.abs(grads[name])), 1e-6)
    print("%-12s max relative error %.1e" % (name, rel.max()))
