"""Output-space picture: the loss at a stationary point is the distance-like
minimum over the tangent subspace, and Jacobian rank never drops nearby."""

from __future__ import annotations

import numpy as np

from gradbasis import Dataset, Feedforward, LossKind, build_gradient_basis, init_params
from gradbasis.geometry import projection_optimality, rank_semicontinuity_probe, tangent_space
from gradbasis.training import OptimizerConfig, find_stationary

rng = np.random.default_rng(4)
spec = Feedforward((3, 3, 3, 2), "identity")
data = Dataset(rng.standard_normal((8, 3)), rng.standard_normal((8, 2)))

origin = np.zeros(spec.layout().size)
probe = rank_semicontinuity_probe(spec, origin, data, radius=1e-2, n_samples=10)
print("rank at the origin:", probe.base_rank, "nearby ranks:", sorted(set(probe.ranks)))

st = find_stationary(spec, data, LossKind.squared(), init_params(spec, rng), OptimizerConfig(grad_tol=1e-10))
ts = tangent_space(spec, st.theta, data)
print("tangent rank at the trained point:", ts.rank, "anchor residual:", f"{ts.anchor_residual():.1e}")
rep = projection_optimality(spec, st.theta, data, LossKind.squared(), build_gradient_basis(spec, st.theta, data))
q = rep.quantities
print(f"dist at anchor {q['dist_anchor']:.6f}, output-space min {q['min_output_space']:.6f}, "
      f"coefficient-space min {q['min_coefficient_space']:.6f}")
