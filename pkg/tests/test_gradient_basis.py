from __future__ import annotations

import numpy as np
import pytest

from gradbasis.constructions import augment, overparam_model
from gradbasis.errors import InvalidInput, PreconditionFailed
from gradbasis.gradient_basis import (
    CLOSED_FORM,
    ITERATIVE,
    build_gradient_basis,
    feasibility_gap,
    feature_design,
    objective,
    probe_value,
    solve_convex,
    solve_induced,
    verify_theorem1,
)
from gradbasis.harness import sphere_points
from gradbasis.losses import LossKind
from gradbasis.models import BasisFunction, Dataset, Feedforward, SkipConnected, hidden_activations, init_params
from gradbasis.training import OptimizerConfig, find_stationary
from helpers import normal_equations

SQ = LossKind.squared()
CE = LossKind.cross_entropy()


def test_closed_form_matches_normal_equations(rng):
    phi = rng.standard_normal((10, 4)) @ rng.standard_normal((4, 7))
    data = Dataset(rng.standard_normal((5, 2)), rng.standard_normal((5, 2)), lam=rng.uniform(0.1, 1, 5))
    res = solve_convex(phi, data, SQ)
    assert res.solver == CLOSED_FORM and res.attained
    oracle = normal_equations(phi, data.Y.reshape(-1), data.row_weights)
    assert res.optimal_value == pytest.approx(oracle, abs=1e-10)


def test_iterative_solver_reaches_the_closed_form_value_on_a_smooth_loss(rng):
    # softmax loss on the full design has an attained optimum with noisy soft labels
    X = rng.standard_normal((12, 3))
    Y = rng.dirichlet(np.ones(2), 12)
    data = Dataset(X, Y)
    phi = feature_design(X, 2)
    res = solve_convex(phi, data, CE)
    assert res.solver == ITERATIVE and res.attained and res.grad_residual <= 1e-10
    # first-order optimality checked independently by perturbing alpha
    for _ in range(10):
        v = rng.standard_normal(phi.shape[1]) * 1e-4
        assert objective(phi, res.alpha + v, data, CE) >= res.optimal_value - 1e-14


def test_cross_entropy_on_separable_data_reports_unattained(rng):
    X = np.array([[1.0], [2.0], [-1.0], [-2.0]])
    Y = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    data = Dataset(X, Y)
    # the infimum 0 is approached but never reached
    res = solve_convex(feature_design(X, 2), data, CE, max_iters=30, grad_tol=1e-300)
    assert not res.attained
    assert res.decrease_rate > 0
    assert res.optimal_value < 1e-2


def test_feature_design_layout(rng):
    F = rng.standard_normal((4, 3))
    A = rng.standard_normal((2, 3))
    D = feature_design(F, 2)
    assert np.allclose(D @ A.reshape(-1, order="F"), (F @ A.T).reshape(-1))


def test_basis_function_model_is_its_own_gradient_basis(rng):
    spec = BasisFunction(3, 2, "poly2")
    X = rng.standard_normal((6, 3))
    data = Dataset(X, rng.standard_normal((6, 2)))
    basis = build_gradient_basis(spec, init_params(spec, rng), data)
    assert np.allclose(basis.phi, feature_design(spec.features(X), 2))
    assert np.allclose(basis.phi @ basis.witness, basis.anchor)


def test_gap_is_nonnegative_at_random_points(rng):
    for spec in (Feedforward((3, 4, 2), "relu"), SkipConnected((3, 4, 3, 2), "tanh", (1,))):
        data = Dataset(rng.standard_normal((6, 3)), rng.standard_normal((6, 2)))
        for _ in range(5):
            assert feasibility_gap(spec, init_params(spec, rng), data, SQ) >= -1e-12


def test_overparameterized_model_interpolates(rng):
    X_raw = sphere_points(6, 4, 0.2, rng)
    spec, theta = overparam_model(X_raw, 2, delta=0.2, eps=0.1, depth=2, width=8)
    data = Dataset(augment(X_raw), rng.standard_normal((6, 2)))
    assert solve_induced(build_gradient_basis(spec, theta, data), SQ).optimal_value <= 1e-12


def test_probe_value_equals_least_squares(rng):
    X = rng.standard_normal((10, 3))
    data = Dataset(X, rng.standard_normal((10, 1)))
    B = np.linalg.lstsq(X, data.Y, rcond=None)[0]
    assert probe_value([X[:, :2], X[:, 2:]], data, SQ).optimal_value == pytest.approx(
        float(np.mean((X @ B - data.Y) ** 2)), abs=1e-12)


@pytest.mark.parametrize("loss", [SQ, CE, LossKind.smoothed_hinge(3)], ids=lambda k: k.variant)
def test_theorem1_at_trained_basis_model(rng, loss):
    d_y = 1 if loss.variant == "smoothed_hinge" else 2
    spec = BasisFunction(3, d_y, "affine")
    X = rng.standard_normal((16, 3))
    if loss.variant == "cross_entropy":
        Y = rng.dirichlet(np.ones(2), 16)
    elif loss.variant == "smoothed_hinge":
        Y = rng.choice([-1.0, 1.0], (16, 1))
    else:
        Y = rng.standard_normal((16, 2))
    data = Dataset(X, Y)
    rep = find_stationary(spec, data, loss, np.zeros(spec.layout().size), OptimizerConfig(grad_tol=1e-10, max_iters=50000))
    out = verify_theorem1(spec, rep.theta, data, loss)
    assert out.passed, out.to_dict()


def test_skip_readouts_cover_every_skipped_layer(rng):
    # the readout columns of the basis already contain a linear probe on each h_l
    spec = SkipConnected((3, 4, 3, 2), "tanh", (1,))
    data = Dataset(rng.standard_normal((10, 3)), rng.standard_normal((10, 2)))
    theta = init_params(spec, rng)
    ind = solve_induced(build_gradient_basis(spec, theta, data), SQ).optimal_value
    hs = hidden_activations(spec, theta, data.X)
    for l in spec.skip:
        assert ind <= probe_value([hs[l].T], data, SQ).optimal_value + 1e-12


def test_theorem1_requires_stationarity(rng):
    spec = BasisFunction(3, 1)
    data = Dataset(rng.standard_normal((5, 3)), rng.standard_normal(5))
    with pytest.raises(PreconditionFailed):
        verify_theorem1(spec, np.ones(3), data, SQ)


def test_solver_input_errors(rng):
    data = Dataset(rng.standard_normal((3, 2)), rng.standard_normal((3, 1)))
    with pytest.raises(InvalidInput):
        solve_convex(np.ones((4, 2)), data, SQ)
    with pytest.raises(InvalidInput):
        solve_convex(np.ones((3, 2)), data, LossKind.smoothed_hinge(2), alpha0=np.ones(3))
