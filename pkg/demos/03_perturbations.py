"""Output-invariant perturbations and the chain of optimal values.

With fewer samples than hidden units, the activations entering a layer have
a left null space.  Moving weights along it leaves every training output
unchanged but changes the Jacobian, so the enlarged basis can only lower the
convex optimum.
"""

from __future__ import annotations

import numpy as np

from gradbasis import (
    Dataset,
    Feedforward,
    LossKind,
    build_gradient_basis,
    build_perturbed_basis,
    init_params,
    lemma1_check,
    nullspace_perturbations,
    solve_induced,
    solve_perturbed,
)
from gradbasis.perturbation import union, with_zero
from gradbasis.training import loss_L

rng = np.random.default_rng(1)
spec = Feedforward((4, 6, 5, 2), "relu")
data = Dataset(rng.standard_normal((3, 4)), rng.standard_normal((3, 2)))
theta = init_params(spec, rng)
sq = LossKind.squared()

sets = {}
for layer in (1, 2, 3):
    s = nullspace_perturbations(spec, theta, data, layer, epsilon=1e-2)
    sets[layer] = s
    print(f"W{layer}: {len(s)} directions, worst output change {np.max(s.invariance_residuals, initial=0):.1e}")

L = loss_L(spec, theta, data, sq)
ind = solve_induced(build_gradient_basis(spec, theta, data), sq).optimal_value
pert = solve_perturbed(build_perturbed_basis(spec, theta, data, with_zero(union(*sets.values()))), sq).optimal_value
print(f"L = {L:.4f} >= induced {ind:.4f} >= perturbed {pert:.4f}")

pa = build_perturbed_basis(spec, theta, data, with_zero(sets[2]))
pb = build_perturbed_basis(spec, theta, data, with_zero(sets[3]))
ok, info = lemma1_check(pa, pb)
print("union spans the sum of both spaces:", ok, {k: info[k] for k in ("dim_A", "dim_B", "dim_union")})
