"""Model zoo with exact forward passes and parameter Jacobians.

Every model is last-layer linear, so the witness ``g(theta)``
(coefficients that rebuild ``f_X(theta)`` from the gradient basis) is explicit.

Conventions
-----------
* Matrix parameters are vectorized column-major: ``vec(M)[c * rows + r] = M[r, c]``.
* Data matrices are sample-major: ``X`` is ``m x d_x`` and outputs are ``m x d_y``.
* Jacobian rows are grouped by sample, then output coordinate
  (row ``i * d_y + r``), matching the stacked output map ``f_X``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInput, NondifferentiablePoint, Unsupported

IDENTITY = "identity"
RELU = "relu"
TANH = "tanh"
SIGMOID = "sigmoid"
ACTIVATIONS = (IDENTITY, RELU, TANH, SIGMOID)

KINK_TOL = 1e-14


# --------------------------------------------------------------------------
# parameter layout


@dataclass(frozen=True)
class Block:
    name: str
    rows: int
    cols: int

    @property
    def size(self) -> int:
        return self.rows * self.cols


class ParamLayout:
    """Ordered named matrix blocks packed into one flat vector."""

    def __init__(self, blocks: Sequence[Block]):
        self.blocks = tuple(blocks)
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise InvalidInput(f"duplicate block names in layout: {names}")
        self.offsets = {}
        off = 0
        for b in self.blocks:
            self.offsets[b.name] = off
            off += b.size
        self.size = off
        self._by_name = {b.name: b for b in self.blocks}

    def __eq__(self, other):
        return isinstance(other, ParamLayout) and self.blocks == other.blocks

    def __hash__(self):
        return hash(self.blocks)

    def __repr__(self):
        inner = ", ".join(f"{b.name}:{b.rows}x{b.cols}" for b in self.blocks)
        return f"ParamLayout({inner})"

    def __getitem__(self, name: str) -> Block:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(b.name for b in self.blocks)

    def slice(self, name: str) -> slice:
        off = self.offsets[name]
        return slice(off, off + self._by_name[name].size)

    def get(self, data: np.ndarray, name: str) -> np.ndarray:
        b = self._by_name[name]
        return np.reshape(data[self.slice(name)], (b.rows, b.cols), order="F")

    def split(self, data: np.ndarray) -> dict[str, np.ndarray]:
        return {b.name: self.get(data, b.name) for b in self.blocks}

    def flatten(self, mats: dict[str, np.ndarray]) -> np.ndarray:
        out = np.zeros(self.size)
        for b in self.blocks:
            M = np.asarray(mats[b.name], dtype=float)
            if M.shape != (b.rows, b.cols):
                raise InvalidInput(f"block {b.name} expects shape {(b.rows, b.cols)}, got {M.shape}")
            out[self.slice(b.name)] = M.reshape(-1, order="F")
        return out

    def mask(self, names: Sequence[str]) -> np.ndarray:
        """Boolean vector selecting the entries of the named blocks."""
        m = np.zeros(self.size, dtype=bool)
        for n in names:
            if n not in self:
                raise InvalidInput(f"unknown block {n!r}; layout has {self.names}")
            m[self.slice(n)] = True
        return m


@dataclass(frozen=True)
class ParamVector:
    """Flat parameter vector together with its block layout."""

    layout: ParamLayout
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float).ravel()
        if data.shape[0] != self.layout.size:
            raise InvalidInput(f"theta has length {data.shape[0]}, layout needs {self.layout.size}")
        object.__setattr__(self, "data", data)

    def block(self, name: str) -> np.ndarray:
        return self.layout.get(self.data, name)

    def blocks(self) -> dict[str, np.ndarray]:
        return self.layout.split(self.data)

    @classmethod
    def from_blocks(cls, layout: ParamLayout, mats: dict[str, np.ndarray]) -> ParamVector:
        return cls(layout, layout.flatten(mats))

    def replace(self, data) -> ParamVector:
        return ParamVector(self.layout, data)

    def __len__(self):
        return self.layout.size


@dataclass(frozen=True)
class Dataset:
    """Training set: inputs ``X`` (m x d_x), targets ``Y`` (m x d_y), weights ``lam``."""

    X: np.ndarray
    Y: np.ndarray
    lam: np.ndarray | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        m = X.shape[0]
        if m < 1:
            raise InvalidInput("dataset needs at least one sample")
        if Y.shape[0] != m:
            raise InvalidInput(f"X has {m} rows but Y has {Y.shape[0]}")
        lam = np.full(m, 1.0 / m) if self.lam is None else np.asarray(self.lam, dtype=float).ravel()
        if lam.shape[0] != m or np.any(~(lam > 0)):
            raise InvalidInput("sample weights must be m strictly positive numbers")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InvalidInput("dataset has non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "lam", lam)

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def d_y(self) -> int:
        return self.Y.shape[1]

    @property
    def row_weights(self) -> np.ndarray:
        """Sample weights repeated per output coordinate (sample-major)."""
        return np.repeat(self.lam, self.d_y)


# --------------------------------------------------------------------------
# activations


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == IDENTITY:
        return z
    if name == RELU:
        return np.maximum(z, 0.0)
    if name == TANH:
        return np.tanh(z)
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _act_deriv(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if name == IDENTITY:
        return np.ones_like(z)
    if name == RELU:
        # derivative at exactly 0 taken as 0; callers flag the point separately
        return (z > 0).astype(float)
    if name == TANH:
        return 1.0 - h * h
    return h * (1.0 - h)


def _outer_vec(h: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Per-sample ``vec(delta_i h_i^T)`` (column-major) as an ``m x (rows*cols)`` array."""
    m = h.shape[0]
    return np.einsum("ic,ir->icr", h, delta).reshape(m, -1)


class _Chain:
    """Stack of dense layers ``h_l = act_l(W_l h_{l-1})`` without biases."""

    def __init__(self, widths: Sequence[int], activations: Sequence[str], prefix: str = ""):
        self.widths = tuple(int(w) for w in widths)
        self.activations = tuple(activations)
        if len(self.activations) != len(self.widths) - 1:
            raise InvalidInput("need one activation per layer of the chain")
        if any(w < 1 for w in self.widths):
            raise InvalidInput("layer widths must be >= 1")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise InvalidInput(f"unknown activation {a!r}")
        self.prefix = prefix

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    def name(self, l: int) -> str:
        return f"{self.prefix}W{l}"

    def blocks(self) -> list[Block]:
        return [Block(self.name(l), self.widths[l], self.widths[l - 1]) for l in range(1, self.depth + 1)]

    def forward(self, mats: dict, X: np.ndarray) -> tuple[list, list]:
        pre = [None]
        hs = [X]
        h = X
        for l in range(1, self.depth + 1):
            z = h @ mats[self.name(l)].T
            h = _act(self.activations[l - 1], z)
            pre.append(z)
            hs.append(h)
        return pre, hs

    def backward(self, mats: dict, pre: list, hs: list, dh: dict) -> dict[str, np.ndarray]:
        """Per-sample gradients of each weight block given injected dL/dh_l seeds."""
        grads = {}
        g = dh.get(self.depth)
        for l in range(self.depth, 0, -1):
            if g is None:
                g = np.zeros_like(hs[l])
            delta = g * _act_deriv(self.activations[l - 1], pre[l], hs[l])
            grads[self.name(l)] = _outer_vec(hs[l - 1], delta)
            g = delta @ mats[self.name(l)]
            if l - 1 in dh:
                g = g + dh[l - 1]
        return grads

    def relu_preacts(self, pre: list) -> list[tuple[int, np.ndarray]]:
        return [(l, pre[l]) for l in range(1, self.depth + 1) if self.activations[l - 1] == RELU]


# --------------------------------------------------------------------------
# model specifications


class ModelSpec:
    """Common interface; concrete variants below."""

    d_x: int
    d_y: int

    def layout(self) -> ParamLayout:
        raise NotImplementedError

    def _forward(self, mats: dict, X: np.ndarray):
        """Return ``(outputs m x d_y, trace)``."""
        raise NotImplementedError

    def _vjp(self, mats: dict, trace, seeds: np.ndarray) -> np.ndarray:
        """Per-sample gradients ``m x d_theta`` of ``sum_r seeds[i, r] f_r(x_i)``."""
        raise NotImplementedError

    def _relu_preacts(self, trace) -> list[tuple[str, int, np.ndarray]]:
        return []

    def witness_blocks(self) -> tuple[str, ...]:
        raise NotImplementedError

    def weight_inputs(self, mats: dict, X: np.ndarray) -> dict[str, np.ndarray]:
        """Map block name -> incoming activation matrix (d_in x m) the block multiplies."""
        raise NotImplementedError

    def hidden_trace(self, mats: dict, X: np.ndarray) -> list[np.ndarray]:
        raise Unsupported(f"{type(self).__name__} has no hidden layers")

    def to_dict(self) -> dict:
        raise NotImplementedError


def _feature_map(name: str, X: np.ndarray, n_features: int, seed: int) -> np.ndarray:
    if name == "identity":
        return X
    if name == "affine":
        return np.hstack([X, np.ones((X.shape[0], 1))])
    if name == "poly2":
        return np.hstack([np.ones((X.shape[0], 1)), X, X * X])
    if name == "rff":
        rng = np.random.default_rng(seed)
        Om = rng.standard_normal((X.shape[1], n_features))
        b = rng.uniform(0.0, 2 * math.pi, n_features)
        return math.sqrt(2.0 / n_features) * np.cos(X @ Om + b)
    raise InvalidInput(f"unknown feature map {name!r}")


@dataclass(frozen=True)
class BasisFunction(ModelSpec):
    """Linear model ``f(x) = W phi(x)`` over a fixed feature map."""

    d_x: int
    d_y: int = 1
    feature: str = "identity"
    n_features: int = 0
    seed: int = 0

    @property
    def n_phi(self) -> int:
        return {"identity": self.d_x, "affine": self.d_x + 1, "poly2": 1 + 2 * self.d_x}.get(
            self.feature, self.n_features
        )

    def features(self, X: np.ndarray) -> np.ndarray:
        return _feature_map(self.feature, X, self.n_features, self.seed)

    def layout(self):
        return ParamLayout([Block("W", self.d_y, self.n_phi)])

    def _forward(self, mats, X):
        phi = self.features(X)
        return phi @ mats["W"].T, phi

    def _vjp(self, mats, phi, seeds):
        return _outer_vec(phi, seeds)

    def witness_blocks(self):
        return ("W",)

    def weight_inputs(self, mats, X):
        return {"W": self.features(X).T}

    def to_dict(self):
        return {"variant": "basis", "d_x": self.d_x, "d_y": self.d_y, "feature": self.feature,
                "n_features": self.n_features, "seed": self.seed}


@dataclass(frozen=True)
class Feedforward(ModelSpec):
    """``f(x) = W_{H+1} h_H``, ``h_l = act_l(W_l h_{l-1})``, ``h_0 = x`` (no biases)."""

    widths: tuple
    activations: tuple

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        acts = self.activations
        if isinstance(acts, str):
            acts = (acts,) * (len(self.widths) - 2)
        object.__setattr__(self, "activations", tuple(acts))
        if len(self.widths) < 2:
            raise InvalidInput("feedforward net needs at least input and output widths")
        self._chain  # validates

    @property
    def _chain(self) -> _Chain:
        return _Chain(self.widths[:-1], self.activations)

    @property
    def H(self) -> int:
        return len(self.widths) - 2

    @property
    def d_x(self):
        return self.widths[0]

    @property
    def d_y(self):
        return self.widths[-1]

    def layout(self):
        return ParamLayout(self._chain.blocks() + [Block(f"W{self.H + 1}", self.d_y, self.widths[-2])])

    def _forward(self, mats, X):
        pre, hs = self._chain.forward(mats, X)
        return hs[-1] @ mats[f"W{self.H + 1}"].T, (pre, hs)

    def _vjp(self, mats, trace, seeds):
        pre, hs = trace
        out = f"W{self.H + 1}"
        grads = self._chain.backward(mats, pre, hs, {self.H: seeds @ mats[out]})
        grads[out] = _outer_vec(hs[self.H], seeds)
        return np.hstack([grads[n] for n in self.layout().names])

    def _relu_preacts(self, trace):
        return [("", l, z) for l, z in self._chain.relu_preacts(trace[0])]

    def witness_blocks(self):
        return (f"W{self.H + 1}",)

    def weight_inputs(self, mats, X):
        _, hs = self._chain.forward(mats, X)
        return {f"W{l}": hs[l - 1].T for l in range(1, self.H + 2)}

    def hidden_trace(self, mats, X):
        return self._chain.forward(mats, X)[1]

    def to_dict(self):
        return {"variant": "feedforward", "widths": list(self.widths), "activations": list(self.activations)}


@dataclass(frozen=True)
class SkipConnected(ModelSpec):
    """``f(x) = sum_{l in skip} V_l h_l(x)`` with ``H`` always in ``skip``.

    Readout blocks are named ``V{l}``; hidden blocks ``W1..WH``.
    """

    widths: tuple
    activations: tuple
    skip: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        acts = self.activations
        if isinstance(acts, str):
            acts = (acts,) * (len(self.widths) - 2)
        object.__setattr__(self, "activations", tuple(acts))
        H = len(self.widths) - 2
        if H < 1:
            raise InvalidInput("skip-connected net needs at least one hidden layer")
        skip = sorted(set(int(l) for l in self.skip) | {H})
        if skip[0] < 1 or skip[-1] > H:
            raise InvalidInput(f"skip indices must lie in 1..{H}")
        object.__setattr__(self, "skip", tuple(skip))
        self._chain

    @property
    def _chain(self) -> _Chain:
        return _Chain(self.widths[:-1], self.activations)

    @property
    def H(self):
        return len(self.widths) - 2

    @property
    def d_x(self):
        return self.widths[0]

    @property
    def d_y(self):
        return self.widths[-1]

    def layout(self):
        readouts = [Block(f"V{l}", self.d_y, self.widths[l]) for l in self.skip]
        return ParamLayout(readouts + self._chain.blocks())

    def _forward(self, mats, X):
        pre, hs = self._chain.forward(mats, X)
        out = sum(hs[l] @ mats[f"V{l}"].T for l in self.skip)
        return out, (pre, hs)

    def _vjp(self, mats, trace, seeds):
        pre, hs = trace
        grads = self._chain.backward(mats, pre, hs, {l: seeds @ mats[f"V{l}"] for l in self.skip})
        for l in self.skip:
            grads[f"V{l}"] = _outer_vec(hs[l], seeds)
        return np.hstack([grads[n] for n in self.layout().names])

    def _relu_preacts(self, trace):
        return [("", l, z) for l, z in self._chain.relu_preacts(trace[0])]

    def witness_blocks(self):
        return tuple(f"V{l}" for l in self.skip)

    def weight_inputs(self, mats, X):
        _, hs = self._chain.forward(mats, X)
        out = {f"W{l}": hs[l - 1].T for l in range(1, self.H + 1)}
        out.update({f"V{l}": hs[l].T for l in self.skip})
        return out

    def hidden_trace(self, mats, X):
        return self._chain.forward(mats, X)[1]

    def to_dict(self):
        return {"variant": "skip", "widths": list(self.widths), "activations": list(self.activations),
                "skip": list(self.skip)}


@dataclass(frozen=True)
class ResNetForm(ModelSpec):
    """``f(x) = W (x + R z(x; u))`` with ``z`` a dense sub-network ``d_x -> d_z``.

    ``inner_widths`` runs from ``d_x`` to ``d_z``; its last layer is linear.
    When ``inner_params`` (a flat vector for the inner net) is given, ``z`` is a
    fixed feature map and ``theta = vec([W, R])``; otherwise ``u`` is trainable
    and stored in blocks ``u.W1, u.W2, ...``.
    """

    d_y: int
    inner_widths: tuple
    inner_activations: tuple = ()
    inner_params: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "inner_widths", tuple(int(w) for w in self.inner_widths))
        acts = self.inner_activations
        L = len(self.inner_widths) - 1
        if isinstance(acts, str):
            acts = (acts,) * (L - 1)
        acts = tuple(acts)
        if len(acts) == L - 1:
            acts = acts + (IDENTITY,)
        object.__setattr__(self, "inner_activations", acts)
        if L < 1:
            raise InvalidInput("inner residual net needs at least one layer")
        if self.inner_params is not None:
            p = tuple(float(v) for v in np.asarray(self.inner_params, dtype=float).ravel())
            size = sum(b.size for b in self._inner.blocks())
            if len(p) != size:
                raise InvalidInput(f"inner_params has length {len(p)}, inner net needs {size}")
            object.__setattr__(self, "inner_params", p)

    @property
    def _inner(self) -> _Chain:
        return _Chain(self.inner_widths, self.inner_activations, prefix="u.")

    @property
    def d_x(self):
        return self.inner_widths[0]

    @property
    def d_z(self):
        return self.inner_widths[-1]

    @property
    def trainable_inner(self) -> bool:
        return self.inner_params is None

    def layout(self):
        blocks = [Block("W", self.d_y, self.d_x), Block("R", self.d_x, self.d_z)]
        if self.trainable_inner:
            blocks += self._inner.blocks()
        return ParamLayout(blocks)

    def inner_mats(self, mats: dict) -> dict:
        if self.trainable_inner:
            return mats
        return ParamLayout(self._inner.blocks()).split(np.asarray(self.inner_params))

    def z(self, mats: dict, X: np.ndarray) -> np.ndarray:
        return self._inner.forward(self.inner_mats(mats), X)[1][-1]

    def _forward(self, mats, X):
        inner = self.inner_mats(mats)
        pre, hs = self._inner.forward(inner, X)
        z = hs[-1]
        s = X + z @ mats["R"].T
        return s @ mats["W"].T, (pre, hs, s, inner)

    def _vjp(self, mats, trace, seeds):
        pre, hs, s, inner = trace
        z = hs[-1]
        grads = {"W": _outer_vec(s, seeds)}
        ds = seeds @ mats["W"]
        grads["R"] = _outer_vec(z, ds)
        if self.trainable_inner:
            grads.update(self._inner.backward(inner, pre, hs, {self._inner.depth: ds @ mats["R"]}))
        return np.hstack([grads[n] for n in self.layout().names])

    def _relu_preacts(self, trace):
        return [("u", l, z) for l, z in self._inner.relu_preacts(trace[0])]

    def witness_blocks(self):
        return ("W",)

    def weight_inputs(self, mats, X):
        inner = self.inner_mats(mats)
        _, hs = self._inner.forward(inner, X)
        z = hs[-1]
        out = {"W": (X + z @ mats["R"].T).T, "R": z.T}
        if self.trainable_inner:
            out.update({self._inner.name(l): hs[l - 1].T for l in range(1, self._inner.depth + 1)})
        return out

    def hidden_trace(self, mats, X):
        return self._inner.forward(self.inner_mats(mats), X)[1]

    def to_dict(self):
        d = {"variant": "resnet", "d_y": self.d_y, "inner_widths": list(self.inner_widths),
             "inner_activations": list(self.inner_activations)}
        if self.inner_params is not None:
            d["inner_params"] = list(self.inner_params)
        return d


def spec_from_dict(d: dict) -> ModelSpec:
    """Inverse of ``ModelSpec.to_dict``."""
    d = dict(d)
    variant = d.pop("variant")
    if variant == "basis":
        return BasisFunction(**d)
    if variant == "feedforward":
        return Feedforward(tuple(d["widths"]), tuple(d["activations"]) if not isinstance(d["activations"], str) else d["activations"])
    if variant == "skip":
        acts = d["activations"]
        return SkipConnected(tuple(d["widths"]), acts if isinstance(acts, str) else tuple(acts), tuple(d.get("skip", ())))
    if variant == "resnet":
        acts = d.get("inner_activations", ())
        return ResNetForm(int(d["d_y"]), tuple(d["inner_widths"]),
                          acts if isinstance(acts, str) else tuple(acts), d.get("inner_params"))
    raise InvalidInput(f"unknown model variant {variant!r}")


# --------------------------------------------------------------------------
# public operations


def as_theta(spec: ModelSpec, theta) -> np.ndarray:
    """Flat float vector for ``theta`` (ParamVector or array), validated against ``spec``."""
    layout = spec.layout()
    if isinstance(theta, ParamVector):
        if theta.layout != layout:
            raise InvalidInput(f"theta layout {theta.layout} does not match model layout {layout}")
        return theta.data
    data = np.asarray(theta, dtype=float).ravel()
    if data.shape[0] != layout.size:
        raise InvalidInput(f"theta has length {data.shape[0]}, model needs {layout.size}")
    return data


def init_params(spec: ModelSpec, rng: np.random.Generator, scale: float = 1.0) -> ParamVector:
    """Gaussian initialization with variance ``scale / fan_in`` per block."""
    layout = spec.layout()
    mats = {b.name: rng.standard_normal((b.rows, b.cols)) * math.sqrt(scale / b.cols) for b in layout.blocks}
    return ParamVector.from_blocks(layout, mats)


def _inputs(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[None, :] if X.ndim == 1 else X


def forward_batch(spec: ModelSpec, theta, X) -> np.ndarray:
    """Outputs for every row of ``X`` as an ``m x d_y`` array."""
    data = as_theta(spec, theta)
    X = _inputs(X)
    if X.shape[1] != spec.d_x:
        raise InvalidInput(f"inputs have dimension {X.shape[1]}, model expects {spec.d_x}")
    return spec._forward(spec.layout().split(data), X)[0]


def forward(spec: ModelSpec, theta, x) -> np.ndarray:
    """Model output ``f(x; theta)`` for a single input vector."""
    return forward_batch(spec, theta, np.asarray(x, dtype=float)[None, :])[0]


def output_map(spec: ModelSpec, theta, data: Dataset) -> np.ndarray:
    """Stacked outputs ``f_X(theta)`` of length ``m * d_y`` (sample-major)."""
    return forward_batch(spec, theta, data.X).reshape(-1)


def hidden_activations(spec: ModelSpec, theta, X) -> list[np.ndarray]:
    """Hidden representations ``h_l(X)`` as ``d_l x m`` matrices, ``l = 0..H``.

    For ``ResNetForm`` this is the trace of the inner residual network,
    ending with ``z(X; u)``.
    """
    data = as_theta(spec, theta)
    return [h.T for h in spec.hidden_trace(spec.layout().split(data), _inputs(X))]


def _preacts(spec: ModelSpec, theta, X):
    mats = spec.layout().split(as_theta(spec, theta))
    _, trace = spec._forward(mats, _inputs(X))
    return spec._relu_preacts(trace)


def kink_distance(spec: ModelSpec, theta, data: Dataset | np.ndarray) -> float:
    """Smallest ``|preactivation|`` over all ReLU units and samples (inf if none)."""
    X = data.X if isinstance(data, Dataset) else data
    best = math.inf
    for _, _, z in _preacts(spec, theta, X):
        if z.size:
            best = min(best, float(np.min(np.abs(z))))
    return best


def _check_kinks(trace_preacts, tol=KINK_TOL):
    for block, layer, z in trace_preacts:
        hit = np.argwhere(np.abs(z) <= tol)
        if hit.size:
            i, k = hit[0]
            raise NondifferentiablePoint(int(i), int(layer), int(k), block)


def param_jacobian(spec: ModelSpec, theta, data: Dataset | np.ndarray) -> np.ndarray:
    """Exact Jacobian ``d f_X / d theta`` of shape ``(m * d_y) x d_theta``.

    Computed by one batched reverse pass per output coordinate.  Raises
    :class:`NondifferentiablePoint` if any ReLU preactivation is within
    ``1e-14`` of zero.
    """
    X = data.X if isinstance(data, Dataset) else _inputs(data)
    mats = spec.layout().split(as_theta(spec, theta))
    out, trace = spec._forward(mats, X)
    _check_kinks(spec._relu_preacts(trace))
    m, d_y = out.shape
    J = np.empty((m, d_y, spec.layout().size))
    for r in range(d_y):
        seeds = np.zeros((m, d_y))
        seeds[:, r] = 1.0
        J[:, r, :] = spec._vjp(mats, trace, seeds)
    return J.reshape(m * d_y, -1)


def assumption2_witness(spec: ModelSpec, theta) -> np.ndarray:
    """Coefficients ``g(theta)``: readout-block entries of theta, zeros elsewhere."""
    data = as_theta(spec, theta)
    layout = spec.layout()
    return np.where(layout.mask(spec.witness_blocks()), data, 0.0)
