"""Explicit hidden weights that make the last-layer features full rank.

Eight unit-norm inputs, two ReLU layers of width 8.  The features have rank
8, so the induced problem interpolates any targets, and training only the
readout drives the loss to zero.
"""

from __future__ import annotations

import numpy as np

from gradbasis import Dataset, LossKind, build_gradient_basis, hidden_activations, solve_induced
from gradbasis.constructions import augment, overparam_model
from gradbasis.harness import sphere_points
from gradbasis.linalg import numerical_rank
from gradbasis.training import OptimizerConfig, find_stationary

rng = np.random.default_rng(0)
X_raw = sphere_points(8, 4, delta=0.2, rng=rng)
spec, theta = overparam_model(X_raw, d_y=2, delta=0.2, eps=0.2, depth=2, width=8,
                              W_out=rng.standard_normal((2, 8)))
data = Dataset(augment(X_raw), rng.standard_normal((8, 2)))

h = hidden_activations(spec, theta, data.X)[-1]
print("feature rank:", numerical_rank(h), "of", data.m)
print("induced optimum:", solve_induced(build_gradient_basis(spec, theta, data), LossKind.squared()).optimal_value)

st = find_stationary(spec, data, LossKind.squared(), theta, OptimizerConfig(free_blocks=("W3",), grad_tol=1e-12))
print(f"readout-only training: L = {st.loss:.2e} after {st.iterations} steps")
