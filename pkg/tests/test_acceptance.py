"""Acceptance criteria, one test each, run at their stated tolerances.

The terminal summary prints one ``criterion n: PASS/FAIL`` line per test
(see ``conftest.py``).
"""

from __future__ import annotations

import shutil
from pathlib import Path

import numpy as np
import pytest

from gradbasis.constructions import augment, detect_induced_structure, overparam_model, structured_relu_instance
from gradbasis.gradient_basis import build_gradient_basis, feature_design, solve_induced, verify_theorem1
from gradbasis.harness import default_config, run_scenario, run_suite, sphere_points
from gradbasis.linalg import numerical_rank
from gradbasis.losses import LossKind, loss_grad, loss_value
from gradbasis.models import (
    BasisFunction,
    Dataset,
    Feedforward,
    ParamVector,
    ResNetForm,
    SkipConnected,
    hidden_activations,
    init_params,
    kink_distance,
    param_jacobian,
)
from gradbasis.perturbation import (
    build_perturbed_basis,
    lemma1_check,
    linear_chain_S,
    nullspace_perturbations,
    resnet_S_prime,
    solve_perturbed,
    span_containment,
    union,
    with_zero,
)
from gradbasis.training import LOCAL_MIN, OptimizerConfig, classify_stationary, find_stationary, loss_L
from helpers import fd_jacobian

SQ = LossKind.squared()
CONFIGS = Path(__file__).resolve().parent.parent / "configs"


# --------------------------------------------------------------------------
# 1


@pytest.mark.acceptance(1, "gradient-basis equality for a basis-function model, 10/10 seeds")
def test_criterion_01_basis_function_equality():
    passed = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        spec = BasisFunction(3, 1, "rff", n_features=8, seed=seed)
        assert spec.layout().size == 8
        data = Dataset(rng.standard_normal((16, 3)), rng.standard_normal((16, 1)))
        st = find_stationary(spec, data, SQ, init_params(spec, rng), OptimizerConfig(grad_tol=1e-10, max_iters=50000))
        assert st.grad_inf_norm <= 1e-8
        rep = verify_theorem1(spec, st.theta, data, SQ)
        passed += rep.passed
    assert passed == 10


# --------------------------------------------------------------------------
# 2


@pytest.mark.acceptance(2, "overparameterized construction: rank 8, inf = 0, trained L <= 1e-6")
def test_criterion_02_overparameterization():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        X_raw = sphere_points(8, 4, 0.2, rng)
        assert np.max(X_raw @ X_raw.T - 2 * np.eye(8)) <= 0.8
        spec, theta = overparam_model(X_raw, 2, delta=0.2, eps=0.2, depth=2, width=8)
        X = augment(X_raw)
        data = Dataset(X, rng.standard_normal((8, 2)))
        assert numerical_rank(hidden_activations(spec, theta, X)[-1]) == 8
        mats = theta.blocks()
        mats["W3"] = rng.standard_normal((2, 8))
        theta = ParamVector.from_blocks(spec.layout(), mats)
        assert solve_induced(build_gradient_basis(spec, theta, data), SQ).optimal_value <= 1e-9
        st = find_stationary(spec, data, SQ, theta, OptimizerConfig(free_blocks=("W3",), grad_tol=1e-12, max_iters=50000))
        assert st.classification == "CriticalPoint"
        assert st.loss <= 1e-6


# --------------------------------------------------------------------------
# 3


@pytest.mark.acceptance(3, "deep linear local minima match the least-squares optimum (1e-4 rel)")
def test_criterion_03_deep_linear_least_squares():
    n_local = 0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        spec = Feedforward((4, 6, 6, 3), "identity")
        X = rng.standard_normal((32, 4))
        data = Dataset(X, rng.standard_normal((32, 3)))
        st = find_stationary(spec, data, SQ, init_params(spec, rng), OptimizerConfig(grad_tol=1e-10, max_iters=50000))
        if st.classification != "CriticalPoint":
            continue
        if classify_stationary(spec, st.theta, data, SQ).classification != LOCAL_MIN:
            continue
        n_local += 1
        B = np.linalg.lstsq(X, data.Y, rcond=None)[0]
        ls = float(np.mean(np.sum((X @ B - data.Y) ** 2, axis=1)))
        assert abs(st.loss - ls) <= 1e-4 * ls
    assert n_local >= 10


# --------------------------------------------------------------------------
# 4


def _zoo(rng):
    return [
        (BasisFunction(3, 2, "poly2"), 4),
        (Feedforward((3, 5, 2), "relu"), 3),
        (Feedforward((3, 4, 4, 2), "identity"), 3),
        (Feedforward((3, 5, 4, 1), ("tanh", "relu")), 3),
        (SkipConnected((3, 5, 4, 2), "relu", (1,)), 3),
        (ResNetForm(2, (3, 4, 3), "relu"), 4),
        (ResNetForm(2, (3, 4, 3), "relu", inner_params=tuple(rng.standard_normal(24))), 4),
    ]


def _all_families(spec, theta, data, eps):
    fams = [nullspace_perturbations(spec, theta, data, name, eps) for name in spec.layout().names]
    if isinstance(spec, ResNetForm):
        fams.append(resnet_S_prime(spec, theta, data, eps))
    return [f for f in fams if len(f)]


@pytest.mark.acceptance(4, "perturbed <= induced <= L + 1e-12 at 200 random points")
def test_criterion_04_inequality_chain():
    rng = np.random.default_rng(4)
    zoo = _zoo(rng)
    violations = 0
    n = 0
    while n < 200:
        spec, m = zoo[n % len(zoo)]
        data = Dataset(rng.standard_normal((m, spec.d_x)), rng.standard_normal((m, spec.d_y)))
        theta = init_params(spec, rng)
        if kink_distance(spec, theta, data) <= 1e-6:
            continue
        eps = (1e-3, 1e-2, 1e-1)[n % 3]
        fams = _all_families(spec, theta, data, eps)
        L = loss_L(spec, theta, data, SQ)
        ind = solve_induced(build_gradient_basis(spec, theta, data), SQ).optimal_value
        pset = with_zero(union(*fams)) if fams else None
        assert pset is None or pset.certified
        pert = ind if pset is None else solve_perturbed(build_perturbed_basis(spec, theta, data, pset), SQ).optimal_value
        violations += not (pert <= ind + 1e-12 and ind <= L + 1e-12)
        n += 1
    assert violations == 0


# --------------------------------------------------------------------------
# 5


@pytest.mark.acceptance(5, "every constructed direction is output-invariant; null-space family sizes exact")
def test_criterion_05_certification():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(10):
        spec = Feedforward((4, 6, 5, 2), "relu")
        m = int(rng.integers(2, 6))
        data = Dataset(rng.standard_normal((m, 4)), rng.standard_normal((m, 2)))
        theta = init_params(spec, rng)
        hs = hidden_activations(spec, theta, data.X)
        for l in (1, 2, 3):
            s = nullspace_perturbations(spec, theta, data, l, 1e-2)
            assert len(s) == spec.widths[l - 1] - numerical_rank(hs[l - 1])
            assert s.meta["dropped"] == 0
            worst = max(worst, float(np.max(s.invariance_residuals, initial=0.0)))
    for _ in range(5):
        spec, theta = _rank_deficient_resnet(rng)
        data = Dataset(rng.standard_normal((10, 5)), rng.standard_normal((10, 3)))
        s = resnet_S_prime(spec, theta, data, 1e-2)
        assert len(s) == 3 * 4 + 1
        worst = max(worst, float(np.max(s.invariance_residuals)))
    for seed in range(5):
        spec, theta, data = _structured(np.random.default_rng(50 + seed))
        for l in range(1, spec.H + 1):
            s = linear_chain_S(spec, theta, data, 1e-2, l, 1)
            worst = max(worst, float(np.max(s.invariance_residuals)))
    assert worst <= 1e-10


# --------------------------------------------------------------------------
# 6


def _rank_deficient_resnet(rng, trainable=True):
    inner = None if trainable else tuple(rng.standard_normal(36) / 2)
    spec = ResNetForm(3, (5, 4, 4), "relu", inner_params=inner)
    theta = init_params(spec, rng)
    mats = theta.blocks()
    U, s, Vt = np.linalg.svd(mats["W"], full_matrices=False)
    s[-1] = 0.0
    mats["W"] = (U * s) @ Vt
    return spec, ParamVector.from_blocks(spec.layout(), mats)


@pytest.mark.acceptance(6, "ResNet: perturbed basis contains linear models on [x, z]; planted local minima fit")
def test_criterion_06_resnet_containment():
    rng = np.random.default_rng(6)
    for trainable in (True, False):
        spec, theta = _rank_deficient_resnet(rng, trainable)
        data = Dataset(rng.standard_normal((12, 5)), rng.standard_normal((12, 3)))
        pb = build_perturbed_basis(spec, theta, data, resnet_S_prime(spec, theta, data, 1e-2))
        Z = spec.z(theta.blocks(), data.X)
        for _ in range(20):
            aw, ar = rng.standard_normal((3, 5)), rng.standard_normal((3, 4))
            target = (data.X @ aw.T + Z @ ar.T).reshape(-1)
            assert span_containment(pb.phi_tilde, target) <= 1e-8

    rep = run_scenario(default_config("resnet_thm3", seeds=[0, 1, 2]), write=False)
    n_local = 0
    for s in rep["seeds"]:
        if s["theta_summary"].get("classification") == LOCAL_MIN:
            n_local += 1
            assert s["theta_summary"]["loss"] <= 1e-6
            thm3 = [r for r in s["reports"] if r["check"] == "theorem3"]
            assert thm3 and all(r["passed"] for r in thm3)
    assert n_local >= 1


# --------------------------------------------------------------------------
# 7


def _structured(rng, widths=(4, 6, 6, 6, 2), t=1, m=12):
    X = augment(rng.standard_normal((m, widths[0] - 1)))
    spec, theta = structured_relu_instance(widths, t, X, rng)
    return spec, theta, Dataset(X, rng.standard_normal((m, widths[-1])))


@pytest.mark.acceptance(7, "structured ReLU: chain family spans linear probes on every h^(l), l = t..H")
def test_criterion_07_structured_containment():
    worst = 0.0
    for seed in range(5):
        for widths, t in (((4, 6, 6, 6, 2), 1), ((3, 5, 5, 5, 5, 2), 0)):
            rng = np.random.default_rng(70 + seed)
            spec, theta, data = _structured(rng, widths, t)
            st = detect_induced_structure(spec, theta, data.X, t, spec.d_y, probe_radius=1e-2)
            assert st.certified, st.violations
            hs = hidden_activations(spec, theta, data.X)
            for l in range(t, spec.H + 1):
                pb = build_perturbed_basis(spec, theta, data, linear_chain_S(spec, theta, data, 1e-2, l, t, st))
                for _ in range(5):
                    a = rng.standard_normal((spec.d_y, spec.widths[l]))
                    worst = max(worst, span_containment(pb.phi_tilde, (hs[l].T @ a.T).reshape(-1)))
                worst = max(worst, span_containment(pb.phi_tilde, feature_design(hs[l].T, spec.d_y)))
    assert worst <= 1e-8


# --------------------------------------------------------------------------
# 8


@pytest.mark.acceptance(8, "union of two certified families spans the sum of their spaces (20 pairs)")
def test_criterion_08_lemma1():
    rng = np.random.default_rng(8)
    done = 0
    while done < 20:
        kind = done % 3
        if kind == 0:
            spec = Feedforward((4, 6, 5, 2), "relu")
            data = Dataset(rng.standard_normal((3, 4)), rng.standard_normal((3, 2)))
            theta = init_params(spec, rng)
            a = nullspace_perturbations(spec, theta, data, 1 + done % 2, 1e-2)
            b = nullspace_perturbations(spec, theta, data, 3, 1e-2)
        elif kind == 1:
            spec, theta = _rank_deficient_resnet(rng)
            data = Dataset(rng.standard_normal((4, 5)), rng.standard_normal((4, 3)))
            a = resnet_S_prime(spec, theta, data, 1e-2)
            b = nullspace_perturbations(spec, theta, data, "R", 1e-2)
        else:
            spec, theta, data = _structured(rng, m=5)
            a = linear_chain_S(spec, theta, data, 1e-2, 1, 1)
            b = linear_chain_S(spec, theta, data, 1e-2, 2, 1)
        if not (len(a) and len(b)) or kink_distance(spec, theta, data) <= 1e-6:
            continue
        pa = build_perturbed_basis(spec, theta, data, a)
        pb = build_perturbed_basis(spec, theta, data, b)
        ok, info = lemma1_check(pa, pb, tol=1e-9)
        assert ok, info
        done += 1


# --------------------------------------------------------------------------
# 9


@pytest.mark.acceptance(9, "Jacobians match finite differences (100 triples); loss chord test 200/200")
def test_criterion_09_derivatives():
    rng = np.random.default_rng(9)
    zoo = [s for s, _ in _zoo(rng)] + [Feedforward((3, 4, 2), "sigmoid")]
    checked = 0
    while checked < 100:
        spec = zoo[checked % len(zoo)]
        theta = init_params(spec, rng).data
        x = rng.standard_normal((1, spec.d_x))
        if kink_distance(spec, theta, x) <= 1e-4:
            continue
        J = param_jacobian(spec, theta, x)
        fd = fd_jacobian(spec, theta, x)
        assert np.max(np.abs(J - fd)) <= 1e-5 * max(1.0, np.max(np.abs(J)))
        checked += 1

    kinds = [LossKind.squared(), LossKind.cross_entropy(), LossKind.smoothed_hinge(2), LossKind.smoothed_hinge(3)]
    for kind in kinds:
        ok = 0
        for _ in range(200):
            d = 1 if kind.variant == "smoothed_hinge" else 3
            q1, q2 = rng.standard_normal(d) * 3, rng.standard_normal(d) * 3
            y = rng.choice([-1.0, 1.0], 1) if d == 1 else (rng.dirichlet(np.ones(d)) if kind.variant == "cross_entropy"
                                                          else rng.standard_normal(d))
            t = rng.uniform()
            mid = loss_value(kind, t * q1 + (1 - t) * q2, y)
            chord = t * loss_value(kind, q1, y) + (1 - t) * loss_value(kind, q2, y)
            # first-order condition too: l(q2) >= l(q1) + <grad l(q1), q2 - q1>
            tangent = loss_value(kind, q1, y) + loss_grad(kind, q1, y) @ (q2 - q1)
            ok += mid <= chord + 1e-12 * max(1.0, chord) and loss_value(kind, q2, y) >= tangent - 1e-10
        assert ok == 200


# --------------------------------------------------------------------------
# 10, 11


@pytest.fixture(scope="module")
def suite_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("suite")
    outs = []
    for k in range(2):
        out = root / f"run{k}"
        reports = run_suite(CONFIGS, out)
        outs.append((out, reports))
    yield outs
    shutil.rmtree(root, ignore_errors=True)


@pytest.mark.acceptance(10, "projection optimum equals the convex solve within 1e-9; no rank drops in the suite")
def test_criterion_10_geometry(suite_runs):
    _, reports = suite_runs[0]
    n_proj = n_rank = 0
    for rep in reports:
        for s in rep["seeds"]:
            for r in s["reports"]:
                if r["check"].startswith("projection_optimality"):
                    if not r["verdicts"].get("ran", True):
                        continue
                    n_proj += 1
                    assert r["quantities"]["coordinate_diff"] <= 1e-9
                if r["check"] == "rank_semicontinuity":
                    n_rank += 1
                    assert r["passed"]
    assert n_proj > 0 and n_rank > 0


@pytest.mark.acceptance(11, "the suite is deterministic: two runs give byte-identical CSV summaries")
def test_criterion_11_determinism(suite_runs):
    (a, ra), (b, rb) = suite_runs
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()
    assert all(r["passed"] for r in ra)
