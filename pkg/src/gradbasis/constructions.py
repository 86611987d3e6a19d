"""Explicit weight constructions and the locally induced linear structure.

Two things live here.  ``overparam_weights`` builds hidden layers whose
last-layer features have full rank on a given input set, which makes the
induced convex problem interpolate.  ``detect_induced_structure`` finds unit
sets ``J^(l)`` that act linearly in a neighbourhood of ``theta`` and read
only from each other, the structure the linear-chain perturbation family
needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, StructureNotCertified
from .models import IDENTITY, RELU, Feedforward, ParamVector, _act, as_theta, kink_distance

# --------------------------------------------------------------------------
# overparameterized hidden layers


def check_sphere_inputs(X_raw: np.ndarray, delta: float, tol: float = 1e-9) -> None:
    """Raise InvalidInput unless rows are unit norm with pairwise inner products ``< 1 - delta``."""
    X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
    norms = np.linalg.norm(X_raw, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
    if bad.size:
        raise InvalidInput(f"input {bad[0]} has norm {norms[bad[0]]:.6g}, expected 1")
    G = X_raw @ X_raw.T
    np.fill_diagonal(G, -np.inf)
    i, j = np.unravel_index(np.argmax(G), G.shape)
    if X_raw.shape[0] > 1 and G[i, j] >= 1.0 - delta:
        raise InvalidInput(f"inputs {min(i, j)} and {max(i, j)} have inner product {G[i, j]:.6g} >= 1 - delta")


def overparam_weights(X_raw, delta: float, eps: float, depth: int, width: int, coupling: float = 0.1) -> dict:
    """Hidden weights ``W1..W{depth}`` giving full-rank last hidden features.

    Inputs are augmented with a constant 1, so ``W1`` has ``d_x + 1`` columns.
    Row ``i <= m`` of ``W1`` is ``[x_i^T, eps - 1]``, so sample ``i`` activates
    unit ``i`` with value ``eps`` and no other of the first ``m`` units.  Rows
    beyond ``m`` are ``[0, ..., 0, -1]`` and deeper layers are
    ``I + coupling * (11^T - I)``; both choices keep every preactivation away
    from the ReLU kink while preserving rank ``m``.

    Returns a dict of weight matrices keyed ``W1..W{depth}``.
    """
    X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
    m, d = X_raw.shape
    if width < m:
        raise InvalidInput(f"width {width} is smaller than the number of samples {m}")
    if depth < 1:
        raise InvalidInput("depth must be >= 1")
    if not 0 < eps <= delta:
        raise InvalidInput("need 0 < eps <= delta")
    if not 0 < coupling < 1:
        raise InvalidInput("coupling must lie in (0, 1)")
    check_sphere_inputs(X_raw, delta)
    W1 = np.zeros((width, d + 1))
    W1[:m, :d] = X_raw
    W1[:m, d] = eps - 1.0
    W1[m:, d] = -1.0
    mats = {"W1": W1}
    deep = np.eye(width) + coupling * (np.ones((width, width)) - np.eye(width))
    for l in range(2, depth + 1):
        mats[f"W{l}"] = deep.copy()
    return mats


def augment(X_raw) -> np.ndarray:
    """Append a constant-1 column."""
    X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
    return np.hstack([X_raw, np.ones((X_raw.shape[0], 1))])


def overparam_model(X_raw, d_y: int, delta: float, eps: float, depth: int, width: int,
                    W_out: np.ndarray | None = None) -> tuple[Feedforward, ParamVector]:
    """ReLU network on augmented inputs with ``overparam_weights`` hidden layers.

    The readout defaults to zeros; pair the result with ``augment(X_raw)``.
    """
    X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
    mats = overparam_weights(X_raw, delta, eps, depth, width)
    spec = Feedforward((X_raw.shape[1] + 1,) + (width,) * depth + (d_y,), (RELU,) * depth)
    mats[f"W{depth + 1}"] = np.zeros((d_y, width)) if W_out is None else np.asarray(W_out, dtype=float)
    return spec, ParamVector.from_blocks(spec.layout(), mats)


# --------------------------------------------------------------------------
# induced partial linear structure


@dataclass
class InducedStructure:
    """Unit sets ``J[l]`` for ``l = t+1..H+1`` (``J[H+1]`` is every output).

    ``margins[l]`` is the certified distance of each ``J[l]`` unit from its
    kink (``inf`` for identity units).
    """

    t: int
    n: int
    J: dict
    epsilon_probe: float
    certified: bool
    violations: list = field(default_factory=list)
    margins: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "n": self.n,
            "J": {str(l): list(map(int, v)) for l, v in self.J.items()},
            "epsilon_probe": self.epsilon_probe,
            "certified": self.certified,
            "violations": list(self.violations),
        }

    def require(self) -> InducedStructure:
        if not self.certified:
            raise StructureNotCertified("; ".join(self.violations) or "structure not certified")
        return self


def _forward_all(spec: Feedforward, mats: dict, X: np.ndarray):
    pre, hs = spec._chain.forward(mats, X)
    return pre, hs


def _linear_units(spec: Feedforward, mats: dict, X: np.ndarray, radius: float):
    """Per layer, a boolean mask of units certified linear on the ball of given radius.

    For a ReLU unit the sound margin test is ``pre_ik > bound_ik`` for every
    sample, where ``bound`` bounds how far the preactivation can move when
    every weight block moves by at most ``radius`` in spectral norm:
    ``bound_l = (||W_l,k|| + r) D_{l-1} + r ||h_{l-1}||`` with
    ``D_l = (||W_l||_2 + r) D_{l-1} + r ||h_{l-1}||`` and ``D_0 = 0``.
    """
    pre, hs = _forward_all(spec, mats, X)
    m = X.shape[0]
    D = np.zeros(m)
    masks, margins = {}, {}
    for l in range(1, spec.H + 1):
        W = mats[f"W{l}"]
        hnorm = np.linalg.norm(hs[l - 1], axis=1)
        rows = np.linalg.norm(W, axis=1)
        bound = np.outer(D, rows + radius) + (radius * hnorm)[:, None]
        act = spec.activations[l - 1]
        if act == IDENTITY:
            masks[l] = np.ones(W.shape[0], dtype=bool)
            margins[l] = np.full(W.shape[0], math.inf)
        elif act == RELU:
            slack = np.min(pre[l] - bound, axis=0)
            masks[l] = slack > 0
            margins[l] = slack
        else:
            masks[l] = np.zeros(W.shape[0], dtype=bool)
            margins[l] = np.full(W.shape[0], -math.inf)
        D = (np.linalg.norm(W, 2) + radius) * D + radius * hnorm
    return masks, margins, pre


def detect_induced_structure(spec: Feedforward, theta, X, t: int, n: int, probe_radius: float = 1e-3,
                             n_samples: int = 20, seed: int = 0) -> InducedStructure:
    """Greedy top-down search for the index sets ``J^(t+1), ..., J^(H+1)``.

    ``J^(H+1)`` is all outputs.  Going down, ``J^(l)`` collects every unit of
    layer ``l`` that passes the margin certificate and whose outgoing weights
    into units outside ``J^(l+1)`` are exactly zero.  The result is certified
    when every set has at least ``n`` units and the ``J`` units stay on the
    linear side of the kink at ``n_samples`` points drawn uniformly from the
    ball of radius ``probe_radius`` around ``theta``.
    """
    if not isinstance(spec, Feedforward):
        raise InvalidInput("induced structure is defined for feedforward networks only")
    H = spec.H
    if not 0 <= t <= H:
        raise InvalidInput(f"t must lie in 0..{H}")
    if n < 1:
        raise InvalidInput("n must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x = as_theta(spec, theta)
    layout = spec.layout()
    mats = layout.split(x)
    violations = []
    for l in range(t + 1, H + 1):
        act = spec.activations[l - 1]
        if act not in (IDENTITY, RELU):
            violations.append(f"layer {l}: activation {act!r} is unsupported (only identity/relu certify)")
    masks, margins, _ = _linear_units(spec, mats, X, probe_radius)

    J = {H + 1: tuple(range(spec.d_y))}
    for l in range(H, t, -1):
        Wn = mats[f"W{l + 1}"]
        outside = np.setdiff1d(np.arange(Wn.shape[0]), J[l + 1])
        zero_out = np.all(Wn[outside, :] == 0.0, axis=0) if outside.size else np.ones(Wn.shape[1], dtype=bool)
        J[l] = tuple(int(k) for k in np.flatnonzero(masks[l] & zero_out))
    J = dict(sorted(J.items()))
    for l, units in J.items():
        if len(units) < n:
            violations.append(f"layer {l}: |J| = {len(units)} < n = {n}")

    # sampled neighbourhood points
    rng = np.random.default_rng(seed)
    for s in range(n_samples):
        v = rng.standard_normal(x.size)
        v *= probe_radius * rng.uniform() ** (1.0 / x.size) / np.linalg.norm(v)
        pre, _ = _forward_all(spec, layout.split(x + v), X)
        for l in range(t + 1, H + 1):
            if spec.activations[l - 1] != RELU or not J[l]:
                continue
            idx = list(J[l])
            if np.any(pre[l][:, idx] <= 0):
                violations.append(f"sample {s}: a J unit of layer {l} leaves the linear region")
                break

    return InducedStructure(
        t=t, n=n, J=J, epsilon_probe=probe_radius, certified=not violations, violations=violations,
        margins={l: margins[l][list(J[l])] for l in J if l <= H},
    )


def chain_blocks(spec: Feedforward, theta, structure: InducedStructure) -> dict:
    """``A^(l) = W^(l)[J^(l), J^(l-1)]`` for ``l = t+2..H+1``."""
    mats = spec.layout().split(as_theta(spec, theta))
    J = structure.J
    return {l: mats[f"W{l}"][np.ix_(J[l], J[l - 1])] for l in range(structure.t + 2, spec.H + 2)}


def chain_product(A: dict, lo: int, H: int, d_y: int) -> np.ndarray:
    """``P_lo = A^(H+1) ... A^(lo)``; identity when ``lo = H + 2``."""
    P = np.eye(d_y)
    for l in range(H + 1, lo - 1, -1):
        P = P @ A[l]
    return P


def block_recursion_output(spec: Feedforward, theta, X, structure: InducedStructure, l: int) -> np.ndarray:
    """Outputs recomputed from layer ``l`` with ``J`` units treated as linear.

    ``h_J`` propagates through the ``A``/``C`` blocks without activation,
    the remaining units through ``B`` with their activation.  Agrees with the
    ordinary forward pass wherever the structure holds.
    """
    H = spec.H
    if not structure.t <= l <= H:
        raise InvalidInput(f"layer must lie in {structure.t}..{H}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mats = spec.layout().split(as_theta(spec, theta))
    _, hs = _forward_all(spec, mats, X)
    J = structure.J
    h = hs[l].T
    W = mats[f"W{l + 1}"]
    j = list(J[l + 1])
    nj = [k for k in range(W.shape[0]) if k not in J[l + 1]]
    hJ = W[j, :] @ h
    hN = _act_cols(spec, l + 1, W[nj, :] @ h)
    for lp in range(l + 2, H + 2):
        W = mats[f"W{lp}"]
        jp = list(J[lp])
        njp = [k for k in range(W.shape[0]) if k not in J[lp]]
        jprev = list(J[lp - 1])
        nprev = [k for k in range(W.shape[1]) if k not in J[lp - 1]]
        newJ = W[np.ix_(jp, jprev)] @ hJ + W[np.ix_(jp, nprev)] @ hN
        if lp <= H:
            hN = _act_cols(spec, lp, W[np.ix_(njp, nprev)] @ hN)
        hJ = newJ
    return hJ.T


def _act_cols(spec: Feedforward, l: int, Z: np.ndarray) -> np.ndarray:
    if l > spec.H:
        return Z
    return _act(spec.activations[l - 1], Z)


def structured_relu_instance(widths, t: int, X, rng: np.random.Generator, margin: float = 1.0,
                             rank_deficient: bool = True, max_tries: int = 50) -> tuple[Feedforward, ParamVector]:
    """ReLU network with a planted partial linear structure of size ``d_y``.

    The last input coordinate of ``X`` must be the constant 1.  Unit 0 of
    every hidden layer up to ``t`` copies that constant.  From layer ``t+1``
    on, units ``0..d_y-1`` form ``J``: their weights onto the previous
    always-positive unit are raised until every preactivation clears
    ``margin``, and units outside ``J`` read nothing from ``J``.  With
    ``rank_deficient`` the readout has rank ``d_y - 1``, which forces the
    nontrivial branch of the linear-chain perturbation construction.
    """
    widths = tuple(int(w) for w in widths)
    H = len(widths) - 2
    d_y = widths[-1]
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(X[:, -1] == 1.0):
        raise InvalidInput("last input coordinate must be the constant 1")
    if not 0 <= t <= H:
        raise InvalidInput(f"t must lie in 0..{H}")
    if min(widths[t + 1:H + 1], default=d_y) <= d_y:
        raise InvalidInput("hidden layers above t need more than d_y units")
    spec = Feedforward(widths, (RELU,) * H)
    for _ in range(max_tries):
        mats = {}
        h = X
        on = widths[0] - 1
        for l in range(1, H + 1):
            d_in, d_out = widths[l - 1], widths[l]
            W = rng.standard_normal((d_out, d_in)) / math.sqrt(d_in)
            if l <= t:
                W[0, :] = 0.0
                W[0, on] = 1.0
            else:
                J = np.arange(d_y)
                if l >= t + 2:
                    W[d_y:, :d_y] = 0.0
                rest = h @ W[J].T - np.outer(h[:, on], W[J, on])
                W[J, on] = np.max((margin - rest) / h[:, [on]], axis=0)
            mats[f"W{l}"] = W
            h = np.maximum(h @ W.T, 0.0)
            on = 0
        Wout = rng.standard_normal((d_y, widths[-2])) / math.sqrt(widths[-2])
        if rank_deficient:
            U, s, Vt = np.linalg.svd(Wout, full_matrices=False)
            s[-1] = 0.0
            Wout = (U * s) @ Vt
        mats[f"W{H + 1}"] = Wout
        theta = ParamVector.from_blocks(spec.layout(), mats)
        if kink_distance(spec, theta, X) > 1e-6:
            return spec, theta
    raise InvalidInput("could not draw a kink-free structured instance")
