from __future__ import annotations

import numpy as np
import pytest

from gradbasis.errors import InvalidInput, PreconditionFailed
from gradbasis.geometry import dist, projection_optimality, rank_semicontinuity_probe, tangent_space
from gradbasis.gradient_basis import build_gradient_basis, objective
from gradbasis.losses import LossKind
from gradbasis.models import BasisFunction, Dataset, Feedforward, init_params, output_map
from gradbasis.perturbation import build_perturbed_basis, nullspace_perturbations, with_zero
from gradbasis.training import LOCAL_MIN, OptimizerConfig, find_stationary

SQ = LossKind.squared()


def test_dist_matches_direct_sum(rng):
    data = Dataset(rng.standard_normal((4, 2)), rng.standard_normal((4, 3)), lam=[0.1, 0.2, 0.3, 0.4])
    f = rng.standard_normal(12)
    direct = sum(data.lam[i] * np.sum((f[3 * i:3 * i + 3] - data.Y[i]) ** 2) for i in range(4))
    assert dist(f, data, SQ) == pytest.approx(direct)
    with pytest.raises(InvalidInput):
        dist(f[:5], data, SQ)


def test_tangent_space_contains_anchor(rng):
    spec = Feedforward((3, 5, 2), "relu")
    data = Dataset(rng.standard_normal((4, 3)), rng.standard_normal((4, 2)))
    ts = tangent_space(spec, init_params(spec, rng), data)
    assert ts.rank == 8
    assert ts.anchor_residual() < 1e-12


def test_rank_only_grows_near_the_origin_of_a_deep_linear_net(rng):
    spec = Feedforward((3, 3, 3, 2), "identity")
    data = Dataset(rng.standard_normal((5, 3)), rng.standard_normal((5, 2)))
    probe = rank_semicontinuity_probe(spec, np.zeros(spec.layout().size), data, radius=1e-2, n_samples=10)
    assert probe.base_rank == 0
    assert probe.violations == 0 and min(probe.ranks) > 0
    assert not probe.constant_rank


def test_rank_probe_at_generic_point(rng):
    spec = Feedforward((3, 4, 2), "relu")
    data = Dataset(rng.standard_normal((6, 3)), rng.standard_normal((6, 2)))
    probe = rank_semicontinuity_probe(spec, init_params(spec, rng), data, n_samples=10)
    assert probe.violations == 0 and probe.to_dict()["n_sampled"] + probe.skipped == 10


def trained_basis_model(rng, loss, d_x=2):
    spec = BasisFunction(d_x, 1)
    X = rng.standard_normal((12, d_x))
    Y = np.sign(X[:, :1] + 0.8 * rng.standard_normal((12, 1)))
    data = Dataset(X, Y)
    rep = find_stationary(spec, data, loss, np.zeros(d_x), OptimizerConfig(grad_tol=1e-11, max_iters=50000))
    return spec, rep.theta, data


def test_projection_optimality_against_grid_search(rng):
    loss = LossKind.smoothed_hinge(2)
    spec, theta, data = trained_basis_model(rng, loss)
    basis = build_gradient_basis(spec, theta, data)
    rep = projection_optimality(spec, theta, data, loss, basis)
    assert rep.passed, rep.to_dict()
    # brute-force minimum over a fine grid of coefficients around the optimum
    c = theta.data
    g = np.linspace(-0.05, 0.05, 101)
    grid = min(objective(basis.phi, c + np.array([a, b]), data, loss) for a in g for b in g)
    assert rep.quantities["min_output_space"] <= grid + 1e-12
    assert grid - rep.quantities["min_output_space"] < 1e-6


def test_projection_optimality_perturbed_needs_local_min(rng):
    spec = Feedforward((3, 5, 2), "relu")
    data = Dataset(rng.standard_normal((3, 3)), rng.standard_normal((3, 2)))
    rep = find_stationary(spec, data, SQ, init_params(spec, rng), OptimizerConfig(grad_tol=1e-10, max_iters=50000))
    s = with_zero(nullspace_perturbations(spec, rep.theta, data, 2))
    pb = build_perturbed_basis(spec, rep.theta, data, s)
    out = projection_optimality(spec, rep.theta, data, SQ, pb, classification=LOCAL_MIN)
    assert out.check == "projection_optimality_perturbed" and out.verdicts["coordinates_agree"]
    with pytest.raises(PreconditionFailed):
        projection_optimality(spec, rep.theta, data, SQ, pb, classification="SaddleCandidate")


def test_projection_optimality_rejects_nonstationary(rng):
    spec = BasisFunction(2, 1)
    data = Dataset(rng.standard_normal((5, 2)), rng.standard_normal(5))
    theta = np.ones(2)
    with pytest.raises(PreconditionFailed):
        projection_optimality(spec, theta, data, SQ, build_gradient_basis(spec, theta, data))
    assert output_map(spec, theta, data).shape == (5,)
