"""Output-space view: the map ``theta -> f_X(theta)``, tangent spaces, rank probes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, NondifferentiablePoint, PreconditionFailed
from .gradient_basis import GradientBasis, solve_convex, theorem_tolerance
from .linalg import SubspaceBasis, column_space, numerical_rank
from .losses import LossKind
from .models import KINK_TOL, Dataset, ModelSpec, as_theta, assumption2_witness, kink_distance, output_map, param_jacobian
from .perturbation import PerturbedBasis
from .report import VerificationReport
from .training import LOCAL_MIN, classify_stationary, grad_L

__all__ = [
    "TangentSpace",
    "RankProbe",
    "output_map",
    "dist",
    "tangent_space",
    "rank_semicontinuity_probe",
    "projection_optimality",
]


def dist(f, data: Dataset, loss: LossKind) -> float:
    """``sum_i lam_i l(f_i, y_i)`` for a stacked output vector ``f``."""
    f = np.asarray(f, dtype=float).ravel()
    if f.size != data.m * data.d_y:
        raise InvalidInput(f"output vector has length {f.size}, data needs {data.m * data.d_y}")
    return float(data.lam @ loss.values(f.reshape(data.m, data.d_y), data.Y))


@dataclass(frozen=True)
class TangentSpace:
    anchor: np.ndarray
    basis: SubspaceBasis
    rank: int

    def anchor_residual(self) -> float:
        """Relative distance of the anchor from the spanned subspace."""
        a = self.anchor
        return float(np.linalg.norm(self.basis.residual(a)) / max(1.0, np.linalg.norm(a)))


def tangent_space(spec: ModelSpec, theta, data: Dataset, rtol: float | None = None) -> TangentSpace:
    x = as_theta(spec, theta)
    Q = column_space(param_jacobian(spec, x, data), rtol)
    return TangentSpace(output_map(spec, x, data), Q, Q.dim)


@dataclass
class RankProbe:
    base_rank: int
    ranks: list = field(default_factory=list)
    skipped: int = 0
    violations: int = 0
    constant_rank: bool = True

    def to_dict(self) -> dict:
        return {
            "base_rank": self.base_rank,
            "min_rank": min(self.ranks, default=self.base_rank),
            "max_rank": max(self.ranks, default=self.base_rank),
            "n_sampled": len(self.ranks),
            "skipped": self.skipped,
            "violations": self.violations,
            "constant_rank": self.constant_rank,
        }


def _ball(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    v = rng.standard_normal(n)
    return v * (radius * rng.uniform() ** (1.0 / n) / np.linalg.norm(v))


def rank_semicontinuity_probe(spec: ModelSpec, theta, data: Dataset, radius: float = 1e-3, n_samples: int = 20,
                              seed: int = 0, rtol: float = 1e-10) -> RankProbe:
    """Sample ``theta'`` uniformly in a ball and compare Jacobian ranks with ``theta``.

    A violation is a sample whose rank is below the rank at ``theta``.
    Points within ``1e-14`` of a ReLU kink are skipped.  ``constant_rank`` is
    a sampled heuristic only.
    """
    if radius <= 0 or n_samples < 0:
        raise InvalidInput("radius must be positive and n_samples nonnegative")
    x = as_theta(spec, theta)
    base = numerical_rank(param_jacobian(spec, x, data), rtol)
    rng = np.random.default_rng(seed)
    out = RankProbe(base)
    for _ in range(n_samples):
        xp = x + _ball(rng, x.size, radius)
        if kink_distance(spec, xp, data) <= KINK_TOL:
            out.skipped += 1
            continue
        try:
            r = numerical_rank(param_jacobian(spec, xp, data), rtol)
        except NondifferentiablePoint:
            out.skipped += 1
            continue
        out.ranks.append(r)
        out.violations += int(r < base)
    out.constant_rank = all(r == base for r in out.ranks)
    return out


def projection_optimality(spec: ModelSpec, theta, data: Dataset, loss: LossKind,
                          basis: GradientBasis | PerturbedBasis, grad_tol: float = 1e-8,
                          classification: str | None = None, rtol: float | None = None) -> VerificationReport:
    """Check that ``f_X(theta)`` minimizes ``dist`` over the spanned affine subspace.

    The minimum is computed in output coordinates ``f = Q c`` with ``Q`` an
    orthonormal basis of the spanned subspace, independently of the
    coefficient-space solve, and the two optimal values are reported side by
    side.  The perturbed case additionally needs a local minimum.
    """
    x = as_theta(spec, theta)
    gi = float(np.max(np.abs(grad_L(spec, x, data, loss)), initial=0.0))
    if gi > grad_tol:
        raise PreconditionFailed(f"not stationary: ||grad L||_inf = {gi:.3e} > {grad_tol:.1e}")
    perturbed = isinstance(basis, PerturbedBasis)
    if perturbed:
        if classification is None:
            classification = classify_stationary(spec, x, data, loss, grad_tol=grad_tol).classification
        if classification != LOCAL_MIN:
            raise PreconditionFailed(f"theta is classified {classification}, not {LOCAL_MIN}")
        phi, alpha0 = basis.phi_tilde, basis.feasible_start()
    else:
        phi, alpha0 = basis.phi, assumption2_witness(spec, x)
    anchor = output_map(spec, x, data)
    Q = column_space(phi, rtol).basis
    out_res = solve_convex(Q, data, loss, Q.T @ anchor)
    coef_res = solve_convex(phi, data, loss, alpha0)
    L = dist(anchor, data, loss)
    kappa = float(np.linalg.norm(coef_res.alpha - alpha0))
    tol = theorem_tolerance(L, kappa, gi)
    diff = abs(out_res.optimal_value - coef_res.optimal_value)
    return VerificationReport(
        check="projection_optimality_" + ("perturbed" if perturbed else "tangent"),
        loss=L,
        quantities={"dist_anchor": L, "min_output_space": out_res.optimal_value,
                    "min_coefficient_space": coef_res.optimal_value, "coordinate_diff": diff,
                    "gap": L - out_res.optimal_value, "subspace_dim": int(Q.shape[1])},
        tolerances={"tol_thm": tol, "coordinate": 1e-9},
        verdicts={"optimal": L - out_res.optimal_value <= tol, "coordinates_agree": diff <= 1e-9},
        diagnostics={"output_space": out_res.summary(), "coefficient_space": coef_res.summary(),
                     "classification": classification},
    )
