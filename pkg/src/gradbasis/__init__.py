"""Gradient-basis analysis of critical points in small neural models.

The core objects are the gradient basis at a parameter point (the Jacobian
of the stacked training outputs), the convex problem it induces, and
output-invariant perturbations that enlarge it.  Verifiers compare these
convex optima with the training loss at stationary points.
"""

from __future__ import annotations

from .errors import (
    Diverged,
    GradBasisError,
    InvalidInput,
    NondifferentiablePoint,
    PreconditionFailed,
    StructureNotCertified,
    Unsupported,
)
from .geometry import TangentSpace, dist, projection_optimality, rank_semicontinuity_probe, tangent_space
from .gradient_basis import (
    ConvexSolveResult,
    GradientBasis,
    build_gradient_basis,
    feature_design,
    probe_value,
    solve_convex,
    solve_induced,
    verify_theorem1,
)
from .losses import LossKind, loss_grad, loss_value
from .models import (
    BasisFunction,
    Dataset,
    Feedforward,
    ParamVector,
    ResNetForm,
    SkipConnected,
    assumption2_witness,
    forward,
    forward_batch,
    hidden_activations,
    init_params,
    output_map,
    param_jacobian,
)
from .perturbation import (
    PerturbationSet,
    PerturbedBasis,
    build_perturbed_basis,
    certify,
    lemma1_check,
    linear_chain_S,
    nullspace_perturbations,
    resnet_S_prime,
    solve_perturbed,
    span_containment,
    verify_theorem2,
    verify_theorem3,
    verify_theorem4,
)
from .report import VerificationReport
from .training import OptimizerConfig, StationaryReport, classify_stationary, find_stationary, grad_L, loss_L

__version__ = "0.1.0"
