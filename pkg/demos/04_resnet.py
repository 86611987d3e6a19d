"""Residual model f(x) = W (x + R z(x)) with a rank-deficient readout.

A null vector of W lets R move freely without changing outputs.  The
resulting perturbed basis contains every linear model on [x, z(x)], which is
checked here by projecting random such models onto it.
"""

from __future__ import annotations

import numpy as np

from gradbasis import Dataset, ParamVector, ResNetForm, build_perturbed_basis, init_params, resnet_S_prime
from gradbasis.perturbation import span_containment

rng = np.random.default_rng(2)
spec = ResNetForm(3, (5, 4, 4), "relu")
theta = init_params(spec, rng)
mats = theta.blocks()
U, s, Vt = np.linalg.svd(mats["W"], full_matrices=False)
s[-1] = 0.0
mats["W"] = (U * s) @ Vt
theta = ParamVector.from_blocks(spec.layout(), mats)
data = Dataset(rng.standard_normal((12, 5)), rng.standard_normal((12, 3)))

pset = resnet_S_prime(spec, theta, data, epsilon=1e-2)
pb = build_perturbed_basis(spec, theta, data, pset)
Z = spec.z(mats, data.X)
worst = 0.0
for _ in range(20):
    target = data.X @ rng.standard_normal((5, 3)) + Z @ rng.standard_normal((4, 3))
    worst = max(worst, span_containment(pb.phi_tilde, target.reshape(-1)))
print(f"{len(pset)} directions; worst projection residual over 20 draws: {worst:.1e}")
