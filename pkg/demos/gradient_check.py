"""
Checking hand-written gradients
===============================

Every layer's backward pass is compared against central finite differences of
a random projection of its output.
"""
import numpy as np

from u2f import nn

rng = np.random.default_rng(0)

x = rng.uniform(-1, 1, (1, 2, 3, 4, 4))
w = rng.uniform(-1, 1, (3, 2, 3, 3, 3))
b = rng.uniform(-1, 1, 3)
report = nn.finite_difference_check(
    lambda x, w, b: nn.conv3d_forward(x, w, b, padding=1), nn.conv3d_backward, [x, w, b])
print(f"3x3x3 conv, padding 1:  max relative error {report.max_rel_error:.2e}")

gamma, beta = rng.uniform(0.5, 1.5, 2), rng.uniform(-1, 1, 2)
report = nn.finite_difference_check(
    lambda x, g, b: nn.batch_norm3d_forward(x, g, b, np.zeros(2), np.ones(2)),
    nn.batch_norm3d_backward, [x, gamma, beta])
print(f"batch norm (training):  max relative error {report.max_rel_error:.2e}")

# distinct, well separated values keep each window's maximum in place
pool_in = rng.permutation(96).reshape(1, 2, 4, 4, 3) * 0.01
report = nn.finite_difference_check(nn.max_pool3d_forward, nn.max_pool3d_backward, [pool_in])
print(f"2x2x2 max pool:         max relative error {report.max_rel_error:.2e}")

# a wrong backward is caught immediately
report = nn.finite_difference_check(nn.relu_forward, lambda m, g: g, [x])
print(f"relu with a broken backward: max relative error {report.max_rel_error:.2e}")
