"""Train a random-feature model, then compare its loss with the convex problem
its own Jacobian induces.  At a stationary point the two agree."""

from __future__ import annotations

import argparse

import numpy as np

from gradbasis import BasisFunction, Dataset, LossKind, init_params, verify_theorem1
from gradbasis.training import OptimizerConfig, find_stationary


def main(seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    spec = BasisFunction(3, 1, "rff", n_features=8, seed=seed)
    data = Dataset(rng.standard_normal((16, 3)), rng.standard_normal((16, 1)))
    for loss in (LossKind.squared(), LossKind.smoothed_hinge(3)):
        Y = data.Y if loss.variant == "squared" else np.sign(data.Y)
        d = Dataset(data.X, Y)
        st = find_stationary(spec, d, loss, init_params(spec, rng), OptimizerConfig(grad_tol=1e-10))
        rep = verify_theorem1(spec, st.theta, d, loss)
        q = rep.quantities
        print(f"{loss.variant:>15}: L = {q['L']:.6e}  inf = {q['inf_L_theta']:.6e}  "
              f"gap = {q['gap']:+.1e}  tol = {rep.tolerances['tol_thm']:.1e}  passed = {rep.passed}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    main(ap.parse_args().seed)
