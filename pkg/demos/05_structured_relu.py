"""A ReLU network with a planted block of always-active units.

The units J stay linear near theta and only read from each other, and the
readout restricted to them is rank deficient.  The chain construction then
perturbs several layers at once so that linear probes on every hidden layer
from t up enter the perturbed basis.
"""

from __future__ import annotations

import numpy as np

from gradbasis import Dataset, build_perturbed_basis, hidden_activations, linear_chain_S
from gradbasis.constructions import augment, detect_induced_structure, structured_relu_instance
from gradbasis.gradient_basis import feature_design
from gradbasis.perturbation import span_containment

rng = np.random.default_rng(3)
X = augment(rng.standard_normal((12, 3)))
spec, theta = structured_relu_instance((4, 6, 6, 6, 2), t=1, X=X, rng=rng)
data = Dataset(X, rng.standard_normal((12, 2)))

st = detect_induced_structure(spec, theta, X, t=1, n=2, probe_radius=1e-2)
print("certified:", st.certified, "J:", {l: list(v) for l, v in st.J.items()})
hs = hidden_activations(spec, theta, X)
for l in range(1, spec.H + 1):
    s = linear_chain_S(spec, theta, data, 1e-2, l, structure=st)
    pb = build_perturbed_basis(spec, theta, data, s)
    res = span_containment(pb.phi_tilde, feature_design(hs[l].T, 2))
    print(f"l = {l}: {len(s):3d} directions (K = {s.meta['K']}), probe residual {res:.1e}")
