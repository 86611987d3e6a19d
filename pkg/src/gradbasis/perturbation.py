"""Output-invariant perturbations and the perturbable gradient basis.

A direction ``S`` is admissible at ``(theta, eps)`` when ``||S||_2 <= 1`` and
``f_X(theta + eps S) = f_X(theta)``.  Admissibility is never assumed: every
direction is certified by a forward pass before its Jacobian enters a basis.
Only constructive families are produced here; random directions would almost
never be admissible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .constructions import InducedStructure, chain_blocks, chain_product, detect_induced_structure
from .errors import InvalidInput, NondifferentiablePoint, PreconditionFailed
from .gradient_basis import (
    ConvexSolveResult,
    build_gradient_basis,
    feature_design,
    probe_value,
    solve_convex,
    solve_induced,
    theorem_tolerance,
    NEG_GAP_SLACK,
)
from .linalg import column_space, left_null_space, null_space, numerical_rank, subspace_residuals
from .losses import LossKind
from .models import (
    Dataset,
    Feedforward,
    ModelSpec,
    ParamVector,
    ResNetForm,
    as_theta,
    assumption2_witness,
    hidden_activations,
    output_map,
    param_jacobian,
)
from .report import VerificationReport
from .training import LOCAL_MIN, classify_stationary, grad_L, loss_L

ZERO = "Zero"
LEFT_NULL = "LeftNullSpace"
RESNET = "ResNetProof"
LINEAR_CHAIN = "LinearChainProof"
USER = "UserSupplied"
UNION = "Union"

NORM_SLACK = 1e-12
DEFAULT_EPSILONS = (1e-3, 1e-2, 1e-1)


def invariance_tol(anchor: np.ndarray) -> float:
    """``1e-10 * max(1, ||f_X(theta)||_inf)``."""
    return 1e-10 * max(1.0, float(np.max(np.abs(anchor), initial=0.0)))


@dataclass
class PerturbationSet:
    """Certified directions (rows of ``directions``) at a fixed ``epsilon``."""

    epsilon: float
    directions: np.ndarray
    invariance_residuals: np.ndarray
    provenance: str
    tol_inv: float
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.directions.shape[0]

    @property
    def contains_zero(self) -> bool:
        return bool(np.any(np.all(self.directions == 0.0, axis=1)))

    @property
    def certified(self) -> bool:
        norms_ok = np.all(np.linalg.norm(self.directions, axis=1) <= 1.0 + NORM_SLACK)
        return bool(norms_ok and np.all(self.invariance_residuals <= self.tol_inv))

    def summary(self) -> dict:
        return {
            "provenance": self.provenance,
            "epsilon": self.epsilon,
            "size": len(self),
            "max_invariance_residual": float(np.max(self.invariance_residuals, initial=0.0)),
            "tol_inv": self.tol_inv,
            **{k: v for k, v in self.meta.items() if isinstance(v, (int, float, str))},
        }


def invariance_residuals(spec: ModelSpec, theta, data: Dataset, epsilon: float, directions) -> np.ndarray:
    """``max_i ||f(x_i; theta + eps S_j) - f(x_i; theta)||_inf`` for each row ``S_j``."""
    x = as_theta(spec, theta)
    D = np.atleast_2d(np.asarray(directions, dtype=float)).reshape(-1, x.size)
    base = output_map(spec, x, data)
    return np.array([float(np.max(np.abs(output_map(spec, x + epsilon * S, data) - base), initial=0.0)) for S in D])


def certify(spec: ModelSpec, theta, data: Dataset, epsilon: float, directions, provenance: str = USER,
            meta: dict | None = None) -> PerturbationSet:
    """Certify every direction; raise PreconditionFailed on the first failure."""
    if not epsilon >= 0 or not math.isfinite(epsilon):
        raise InvalidInput("epsilon must be a finite nonnegative number")
    x = as_theta(spec, theta)
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    if D.size == 0:
        D = np.zeros((0, x.size))
    if D.shape[1] != x.size:
        raise InvalidInput(f"directions have {D.shape[1]} columns, theta has {x.size} entries")
    if not np.all(np.isfinite(D)):
        raise InvalidInput("directions have non-finite entries")
    norms = np.linalg.norm(D, axis=1)
    big = np.flatnonzero(norms > 1.0 + NORM_SLACK)
    if big.size:
        raise PreconditionFailed(f"direction {big[0]} has norm {norms[big[0]]:.6g} > 1")
    res = invariance_residuals(spec, x, data, epsilon, D)
    tol = invariance_tol(output_map(spec, x, data))
    bad = np.flatnonzero(res > tol)
    if bad.size:
        raise PreconditionFailed(
            f"direction {bad[0]} changes the outputs by {res[bad[0]]:.3e} > tol_inv {tol:.1e}; not output-invariant"
        )
    return PerturbationSet(float(epsilon), D, res, provenance, tol, dict(meta or {}))


def zero_set(spec: ModelSpec, theta, data: Dataset, epsilon: float) -> PerturbationSet:
    return certify(spec, theta, data, epsilon, np.zeros((1, spec.layout().size)), ZERO)


def _dedupe(D: np.ndarray) -> np.ndarray:
    if D.shape[0] == 0:
        return D
    _, idx = np.unique(D, axis=0, return_index=True)
    return D[np.sort(idx)]


def union(*sets: PerturbationSet) -> PerturbationSet:
    """Union of certified sets at a common epsilon (duplicates removed)."""
    if not sets:
        raise InvalidInput("union of no sets")
    eps = sets[0].epsilon
    if any(s.epsilon != eps for s in sets):
        raise InvalidInput("sets were built at different epsilons")
    D = _dedupe(np.vstack([s.directions for s in sets]))
    # residuals follow the kept rows
    allD = np.vstack([s.directions for s in sets])
    allR = np.concatenate([s.invariance_residuals for s in sets])
    R = np.array([allR[np.flatnonzero(np.all(allD == d, axis=1))[0]] for d in D])
    return PerturbationSet(eps, D, R, UNION, min(s.tol_inv for s in sets),
                           {"parts": ",".join(s.provenance for s in sets)})


def with_zero(pset: PerturbationSet) -> PerturbationSet:
    if pset.contains_zero:
        return pset
    D = np.vstack([np.zeros((1, pset.directions.shape[1])), pset.directions])
    R = np.concatenate([[0.0], pset.invariance_residuals])
    return PerturbationSet(pset.epsilon, D, R, pset.provenance, pset.tol_inv, dict(pset.meta))


# --------------------------------------------------------------------------
# constructive families


def _block_name(spec: ModelSpec, layer) -> str:
    if isinstance(layer, str):
        name = layer
    else:
        name = f"W{int(layer)}"
    if name not in spec.layout():
        raise InvalidInput(f"model has no weight block {name!r}; blocks are {spec.layout().names}")
    return name


def nullspace_perturbations(spec: ModelSpec, theta, data: Dataset, layer, epsilon: float = 1e-2,
                            max_dirs: int | None = None, rtol: float | None = None) -> PerturbationSet:
    """Rank-one row perturbations ``e_r w^T`` of one weight block with ``w^T h = 0``.

    ``h`` is the activation matrix entering the block (``d_in x m``) and the
    ``w`` range over an orthonormal basis of its left null space.  Direction
    ``j`` is placed on row ``j mod rows`` of the block.  Returns an empty set
    when ``h`` has full row rank.
    """
    if not epsilon > 0:
        raise InvalidInput("epsilon must be positive")
    x = as_theta(spec, theta)
    layout = spec.layout()
    name = _block_name(spec, layer)
    h = spec.weight_inputs(layout.split(x), data.X)[name]
    N = left_null_space(h, rtol).basis
    blk = layout[name]
    k = N.shape[1] if max_dirs is None else min(N.shape[1], int(max_dirs))
    D = np.zeros((k, x.size))
    sl = layout.slice(name)
    for j in range(k):
        M = np.zeros((blk.rows, blk.cols))
        M[j % blk.rows, :] = N[:, j]
        D[j, sl] = M.reshape(-1, order="F")
    # drop anything the forward pass does not confirm
    res = invariance_residuals(spec, x, data, epsilon, D) if k else np.zeros(0)
    tol = invariance_tol(output_map(spec, x, data))
    keep = res <= tol
    meta = {"block": name, "null_dim": int(N.shape[1]), "dropped": int(np.count_nonzero(~keep)),
            "incoming_rank": int(h.shape[0] - N.shape[1])}
    return PerturbationSet(float(epsilon), D[keep], res[keep], f"{LEFT_NULL}({name})", tol, meta)


def resnet_S_prime(spec: ResNetForm, theta, data: Dataset, epsilon: float = 1e-2,
                   rtol: float | None = None) -> PerturbationSet:
    """Perturbations of ``R`` along a null vector of ``W``.

    If ``rank(W) >= d_y`` the family is ``{0}``.  Otherwise, with ``a`` a unit
    null vector of ``W``, the family is ``{0}`` together with ``R``-block
    directions ``a b^T`` for ``b = ((r + 1) / d_y) e_c``, ``r < d_y``,
    ``c < d_z``.  ``W a = 0`` makes every direction exactly output-invariant.
    """
    if not isinstance(spec, ResNetForm):
        raise InvalidInput("resnet_S_prime needs a ResNetForm model")
    if spec.d_y > min(spec.d_x, spec.d_z):
        raise PreconditionFailed(f"need d_y <= min(d_x, d_z); got d_y={spec.d_y}, d_x={spec.d_x}, d_z={spec.d_z}")
    x = as_theta(spec, theta)
    layout = spec.layout()
    W = layout.get(x, "W")
    rank = numerical_rank(W, rtol)
    if rank >= spec.d_y:
        return certify(spec, x, data, epsilon, np.zeros((1, x.size)), RESNET, {"rank_W": rank})
    a = null_space(W, rtol).basis[:, 0]
    sl = layout.slice("R")
    dirs = [np.zeros(x.size)]
    for r in range(spec.d_y):
        for c in range(spec.d_z):
            b = np.zeros(spec.d_z)
            b[c] = (r + 1) / spec.d_y
            S = np.zeros(x.size)
            S[sl] = np.outer(a, b).reshape(-1, order="F")
            dirs.append(S)
    return certify(spec, x, data, epsilon, np.array(dirs), RESNET, {"rank_W": rank})


def linear_chain_plan(spec: Feedforward, theta, structure: InducedStructure, l: int, rtol: float | None = None) -> dict:
    """Which layers the chain construction perturbs for layer ``l``.

    Returns ``{"trivial": True}`` when ``rank(P_{l+2}) >= d_y``; otherwise the
    rank-restoring index ``l_star``, the perturbed layers ``l+1..l_star-2`` and
    the unit null vectors ``a[l']`` of ``P_{l'+1}``.
    """
    H, d_y = spec.H, spec.d_y
    A = chain_blocks(spec, theta, structure)
    P = {lo: chain_product(A, lo, H, d_y) for lo in range(structure.t + 2, H + 3)}
    if l == H or numerical_rank(P[l + 2], rtol) >= d_y:
        return {"trivial": True}
    l_star = next(lp for lp in range(l + 3, H + 3) if numerical_rank(P[lp], rtol) >= d_y)
    layers = list(range(l + 1, l_star - 1))
    a = {lp: null_space(P[lp + 1], rtol).basis[:, 0] for lp in layers}
    return {"trivial": False, "l_star": l_star, "layers": layers, "a": a}


def linear_chain_S(spec: Feedforward, theta, data: Dataset, epsilon: float = 1e-2, l: int = 0, t: int = 0,
                   structure: InducedStructure | None = None, rtol: float | None = None) -> PerturbationSet:
    """Chain-of-null-vector perturbations through the linear units ``J``.

    With ``K`` perturbed layers ``l+1..l*-2``, layer ``l' >= l+2`` receives
    ``a_{l'} b_{l'}^T`` on its ``J x J`` block with ``b_{l'} = a_{l'-1} / sqrt(K)``,
    and layer ``l+1`` receives ``a_{l+1} e_c^T / sqrt(K)`` on its ``J`` rows.
    For each ``c`` the family holds every direction obtained by zeroing a
    subset of these ``K`` layer terms, so alternating sums over subsets
    isolate the product term that reaches the features ``h^(l)``.
    """
    if not isinstance(spec, Feedforward):
        raise InvalidInput("linear_chain_S needs a Feedforward model")
    x = as_theta(spec, theta)
    # J units must stay linear on the whole ball of radius eps, not just the probe ball
    if structure is None or structure.epsilon_probe < epsilon:
        t = t if structure is None else structure.t
        structure = detect_induced_structure(spec, x, data.X, t, spec.d_y, probe_radius=epsilon)
    structure.require()
    t = structure.t
    if not t <= l <= spec.H:
        raise InvalidInput(f"layer l must lie in {t}..{spec.H}")
    plan = linear_chain_plan(spec, x, structure, l, rtol)
    zero = np.zeros((1, x.size))
    if plan["trivial"]:
        return certify(spec, x, data, epsilon, zero, f"{LINEAR_CHAIN}({l})", {"K": 0})
    layout = spec.layout()
    J = structure.J
    layers, a = plan["layers"], plan["a"]
    K = len(layers)
    d_l = spec.widths[l]
    terms = {}
    for c in range(d_l):
        per = []
        for lp in layers:
            blk = layout[f"W{lp}"]
            M = np.zeros((blk.rows, blk.cols))
            if lp == l + 1:
                M[list(J[lp]), c] = a[lp] / math.sqrt(K)
            else:
                M[np.ix_(J[lp], J[lp - 1])] = np.outer(a[lp], a[lp - 1] / math.sqrt(K))
            S = np.zeros(x.size)
            S[layout.slice(f"W{lp}")] = M.reshape(-1, order="F")
            per.append(S)
        terms[c] = per
    dirs = [zero[0]]
    for c in range(d_l):
        for mask in range(1, 2**K):
            dirs.append(sum(terms[c][k] for k in range(K) if mask >> k & 1))
    D = _dedupe(np.array(dirs))
    return certify(spec, x, data, epsilon, D, f"{LINEAR_CHAIN}({l})", {"K": K, "l_star": plan["l_star"]})


def load_directions_csv(path) -> np.ndarray:
    """Read one direction per row; a non-numeric first row is treated as a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise InvalidInput(f"{path}: no directions")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        D = np.array([[float(c) for c in r] for r in rows])
    except ValueError as e:
        raise InvalidInput(f"{path}: {e}") from None
    return np.atleast_2d(D)


def user_perturbations(spec: ModelSpec, theta, data: Dataset, epsilon: float, source) -> PerturbationSet:
    """Certify user-supplied directions (array or CSV path); uncertified input raises."""
    D = load_directions_csv(source) if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__") else source
    return certify(spec, theta, data, epsilon, D, USER)


# --------------------------------------------------------------------------
# perturbed basis and its convex problem


@dataclass(frozen=True)
class PerturbedBasis:
    """Jacobians at ``theta + eps S_j`` side by side: block ``j`` is columns ``j*d : (j+1)*d``."""

    phi_tilde: np.ndarray
    theta: ParamVector
    pset: PerturbationSet
    data: Dataset = field(repr=False)
    spec: ModelSpec = field(repr=False)

    @property
    def d_theta(self) -> int:
        return self.theta.data.size

    def feasible_start(self) -> np.ndarray:
        """Witness in the block of the zero direction, zeros elsewhere (all zeros if 0 is absent)."""
        alpha = np.zeros(self.phi_tilde.shape[1])
        zero = np.flatnonzero(np.all(self.pset.directions == 0.0, axis=1))
        if zero.size:
            j = zero[0]
            alpha[j * self.d_theta:(j + 1) * self.d_theta] = assumption2_witness(self.spec, self.theta)
        return alpha


def _embed_zero_block(pb: PerturbedBasis, alpha: np.ndarray) -> np.ndarray:
    """Place induced-problem coefficients in the zero-direction block (warm start)."""
    a = np.zeros(pb.phi_tilde.shape[1])
    zero = np.flatnonzero(np.all(pb.pset.directions == 0.0, axis=1))
    if zero.size:
        j = zero[0]
        a[j * pb.d_theta:(j + 1) * pb.d_theta] = alpha
    return a


def _recertify(spec, x, data, pset: PerturbationSet) -> None:
    if not pset.certified:
        raise PreconditionFailed(f"perturbation set {pset.provenance} is not certified")
    res = invariance_residuals(spec, x, data, pset.epsilon, pset.directions)
    bad = np.flatnonzero(res > pset.tol_inv)
    if bad.size:
        raise PreconditionFailed(f"direction {bad[0]} of {pset.provenance} fails the invariance check at this theta")


def build_perturbed_basis(spec: ModelSpec, theta, data: Dataset, pset: PerturbationSet) -> PerturbedBasis:
    x = as_theta(spec, theta)
    if len(pset) == 0:
        raise InvalidInput("perturbation set is empty")
    _recertify(spec, x, data, pset)
    blocks = []
    for j, S in enumerate(pset.directions):
        try:
            blocks.append(param_jacobian(spec, x + pset.epsilon * S, data))
        except NondifferentiablePoint as e:
            raise NondifferentiablePoint(e.sample, e.layer, e.unit, e.block,
                                         f"at perturbed point of direction {j} ({pset.provenance})") from None
    return PerturbedBasis(np.hstack(blocks), ParamVector(spec.layout(), x.copy()), pset, data, spec)


def solve_perturbed(pbasis: PerturbedBasis, loss: LossKind, alpha0: np.ndarray | None = None,
                    max_iters: int = 100_000) -> ConvexSolveResult:
    _recertify(pbasis.spec, pbasis.theta.data, pbasis.data, pbasis.pset)
    if alpha0 is None:
        alpha0 = pbasis.feasible_start()
    return solve_convex(pbasis.phi_tilde, pbasis.data, loss, alpha0, max_iters=max_iters)


SPAN_RTOL = 1e-12


def span_containment(phi: np.ndarray, targets: np.ndarray, rtol: float = SPAN_RTOL) -> float:
    """Largest relative residual of a target column after projection onto ``range(phi)``.

    The rank cutoff is a fixed ``1e-12`` relative to the largest singular
    value.  Differences between Jacobians at nearby perturbed points scale
    like ``eps^K`` and would fall under the size-scaled default cutoff.
    """
    Q = column_space(phi, rtol)
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    if T.shape[0] != phi.shape[0]:
        T = T.T
    if T.shape[1] == 0:
        return 0.0
    r = np.linalg.norm(Q.residual(T), axis=0) / np.maximum(1.0, np.linalg.norm(T, axis=0))
    return float(np.max(r))


def lemma1_check(pA: PerturbedBasis, pB: PerturbedBasis, tol: float = 1e-9) -> tuple[bool, dict]:
    """Union-set basis spans exactly ``range(phi_A) + range(phi_B)``."""
    if pA.pset.epsilon != pB.pset.epsilon or not np.array_equal(pA.theta.data, pB.theta.data):
        raise InvalidInput("both bases must be built at the same theta and epsilon")
    U = build_perturbed_basis(pA.spec, pA.theta, pA.data, union(pA.pset, pB.pset))
    both = np.hstack([pA.phi_tilde, pB.phi_tilde])
    r1, r2 = subspace_residuals(U.phi_tilde, both)
    info = {
        "res_union_in_sum": r1,
        "res_sum_in_union": r2,
        "dim_A": column_space(pA.phi_tilde).dim,
        "dim_B": column_space(pB.phi_tilde).dim,
        "dim_union": column_space(U.phi_tilde).dim,
    }
    return bool(r1 <= tol and r2 <= tol), info


# --------------------------------------------------------------------------
# theorem checks


def _stationary_context(spec, x, data, loss, grad_tol):
    g = grad_L(spec, x, data, loss)
    gi = float(np.max(np.abs(g), initial=0.0))
    if gi > grad_tol:
        raise PreconditionFailed(f"not stationary: ||grad L||_inf = {gi:.3e} > {grad_tol:.1e}")
    L = loss_L(spec, x, data, loss)
    basis = build_gradient_basis(spec, x, data)
    ind = solve_induced(basis, loss)
    kappa = float(np.linalg.norm(ind.alpha - basis.witness))
    return L, gi, ind, kappa


def _require_local_min(spec, x, data, loss, classification, grad_tol):
    if classification is None:
        classification = classify_stationary(spec, x, data, loss, grad_tol=grad_tol).classification
    if classification != LOCAL_MIN:
        raise PreconditionFailed(f"theta is classified {classification}, not {LOCAL_MIN}")
    return classification


def verify_theorem2(spec: ModelSpec, theta, data: Dataset, loss: LossKind, epsilon: float,
                    family: list[PerturbationSet], classification: str | None = None, require_local_min: bool = True,
                    grad_tol: float = 1e-8) -> VerificationReport:
    """Inequality chain ``L >= inf L_theta >= v_S`` and, at a local minimum, its equality.

    Each set is solved with the zero direction added, and so is their union.
    Every perturbed solve starts from the induced optimum placed in the
    zero-direction block, so its value can only improve on ``inf L_theta``.
    Away from a local minimum (``require_local_min=False``) only the chain is
    checked.
    """
    x = as_theta(spec, theta)
    local = True
    if require_local_min:
        classification = _require_local_min(spec, x, data, loss, classification, grad_tol)
    elif classification is None:
        classification = "unchecked"
    local = classification == LOCAL_MIN
    L, gi, ind, kappa = _stationary_context(spec, x, data, loss, grad_tol) if local else _chain_context(spec, x, data, loss)
    tol = theorem_tolerance(L, kappa, gi)
    slack = NEG_GAP_SLACK * max(1.0, L)
    sets = [with_zero(s) for s in family if s.epsilon == epsilon]
    if len(sets) != len(family):
        raise InvalidInput("every set in the family must be built at the given epsilon")
    sets.append(with_zero(union(*sets)) if sets else zero_set(spec, x, data, epsilon))
    values, diag = {}, {}
    chain_ok = ind.optimal_value <= L + slack
    eq_ok = L - ind.optimal_value <= tol
    for k, s in enumerate(sets):
        key = f"{k}:{s.provenance}" if k < len(sets) - 1 else "union"
        pb = build_perturbed_basis(spec, x, data, s)
        res = solve_perturbed(pb, loss, _embed_zero_block(pb, ind.alpha))
        values[key] = res.optimal_value
        diag[key] = {"set": s.summary(), "solver": res.summary()}
        chain_ok &= res.optimal_value <= ind.optimal_value + slack
        if local:
            eq_ok &= res.optimal_value >= L - tol
    verdicts = {"chain": bool(chain_ok)}
    if local:
        verdicts["equality"] = bool(eq_ok)
    return VerificationReport(
        check="theorem2",
        loss=L,
        quantities={"L": L, "inf_L_theta": ind.optimal_value, "kappa": kappa, "grad_inf_norm": gi,
                    "epsilon": epsilon, "v": values, "min_v": min(values.values())},
        tolerances={"tol_thm": tol, "chain_slack": slack},
        verdicts=verdicts,
        diagnostics={"classification": classification, "sets": diag, "induced": ind.summary()},
    )


def _chain_context(spec, x, data, loss):
    gi = float(np.max(np.abs(grad_L(spec, x, data, loss)), initial=0.0))
    basis = build_gradient_basis(spec, x, data)
    ind = solve_induced(basis, loss)
    kappa = float(np.linalg.norm(ind.alpha - basis.witness))
    return loss_L(spec, x, data, loss), gi, ind, kappa


def verify_theorem3(spec: ResNetForm, theta, data: Dataset, loss: LossKind, epsilon: float = 1e-2,
                    classification: str | None = None, grad_tol: float = 1e-8) -> VerificationReport:
    """``L(theta) <= inf`` of the joint linear model on ``[x; z(x)]`` at a local minimum."""
    if not isinstance(spec, ResNetForm):
        raise InvalidInput("verify_theorem3 needs a ResNetForm model")
    x = as_theta(spec, theta)
    if spec.d_y > min(spec.d_x, spec.d_z):
        raise PreconditionFailed(f"need d_y <= min(d_x, d_z); got d_y={spec.d_y}, d_x={spec.d_x}, d_z={spec.d_z}")
    classification = _require_local_min(spec, x, data, loss, classification, grad_tol)
    L, gi, ind, kappa = _stationary_context(spec, x, data, loss, grad_tol)
    tol = theorem_tolerance(L, kappa, gi)
    Z = spec.z(spec.layout().split(x), data.X)
    probe = probe_value([data.X, Z], data, loss)
    pset = resnet_S_prime(spec, x, data, epsilon)
    pb = build_perturbed_basis(spec, x, data, pset)
    pert = solve_perturbed(pb, loss)
    contain = span_containment(pb.phi_tilde, feature_design(np.hstack([data.X, Z]), data.d_y))
    return VerificationReport(
        check="theorem3",
        loss=L,
        quantities={"L": L, "inf_L_theta": ind.optimal_value, "probe_xz": probe.optimal_value,
                    "inf_L_tilde": pert.optimal_value, "gap": L - probe.optimal_value, "kappa": kappa,
                    "grad_inf_norm": gi, "epsilon": epsilon, "span_residual": contain},
        tolerances={"tol_thm": tol, "span": 1e-8},
        verdicts={"L_le_probe": L - probe.optimal_value <= tol, "span_containment": contain <= 1e-8},
        diagnostics={"classification": classification, "set": pset.summary(), "probe": probe.summary(),
                     "perturbed": pert.summary()},
    )


def verify_theorem4(spec: Feedforward, theta, data: Dataset, loss: LossKind, epsilon: float = 1e-2, t: int = 0,
                    structure: InducedStructure | None = None, classification: str | None = None,
                    grad_tol: float = 1e-8) -> VerificationReport:
    """``L(theta) <=`` best multi-layer linear probe on ``h^(t), ..., h^(H)`` at a local minimum."""
    if not isinstance(spec, Feedforward):
        raise InvalidInput("verify_theorem4 needs a Feedforward model")
    x = as_theta(spec, theta)
    if structure is None:
        structure = detect_induced_structure(spec, x, data.X, t, spec.d_y)
    structure.require()
    t = structure.t
    classification = _require_local_min(spec, x, data, loss, classification, grad_tol)
    L, gi, ind, kappa = _stationary_context(spec, x, data, loss, grad_tol)
    tol = theorem_tolerance(L, kappa, gi)
    hs = hidden_activations(spec, x, data.X)
    feats = [hs[l].T for l in range(t, spec.H + 1)]
    probe = probe_value(feats, data, loss)
    spans = {}
    sets = []
    for l in range(t, spec.H + 1):
        s = linear_chain_S(spec, x, data, epsilon, l, t, structure)
        sets.append(s)
        pb = build_perturbed_basis(spec, x, data, s)
        spans[str(l)] = span_containment(pb.phi_tilde, feature_design(hs[l].T, data.d_y))
    U = union(*sets)
    pert = solve_perturbed(build_perturbed_basis(spec, x, data, U), loss)
    return VerificationReport(
        check="theorem4",
        loss=L,
        quantities={"L": L, "inf_L_theta": ind.optimal_value, "probe_multi_layer": probe.optimal_value,
                    "inf_L_tilde": pert.optimal_value, "gap": L - probe.optimal_value, "kappa": kappa,
                    "grad_inf_norm": gi, "epsilon": epsilon, "span_residual": spans},
        tolerances={"tol_thm": tol, "span": 1e-8},
        verdicts={"L_le_probe": L - probe.optimal_value <= tol,
                  "span_containment": max(spans.values()) <= 1e-8},
        diagnostics={"classification": classification, "structure": structure.to_dict(),
                     "sets": [s.summary() for s in sets], "probe": probe.summary(), "perturbed": pert.summary()},
    )
