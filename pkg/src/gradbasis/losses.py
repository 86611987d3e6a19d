"""Convex, differentiable per-sample loss criteria ``q -> l(q, y)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput

SQUARED = "squared"
CROSS_ENTROPY = "cross_entropy"
SMOOTHED_HINGE = "smoothed_hinge"
_KINDS = (SQUARED, CROSS_ENTROPY, SMOOTHED_HINGE)


@dataclass(frozen=True)
class LossKind:
    """A loss criterion.

    ``variant`` is one of ``"squared"``, ``"cross_entropy"`` (softmax folded
    in, targets are probability vectors) or ``"smoothed_hinge"`` with integer
    power ``p >= 2`` and scalar outputs.
    """

    variant: str = SQUARED
    p: int = 2

    def __post_init__(self):
        if self.variant not in _KINDS:
            raise InvalidInput(f"unknown loss variant {self.variant!r}")
        if self.variant == SMOOTHED_HINGE and (int(self.p) != self.p or self.p < 2):
            raise InvalidInput("smoothed hinge needs an integer power p >= 2")

    @classmethod
    def squared(cls) -> LossKind:
        return cls(SQUARED)

    @classmethod
    def cross_entropy(cls) -> LossKind:
        return cls(CROSS_ENTROPY)

    @classmethod
    def smoothed_hinge(cls, p: int = 2) -> LossKind:
        return cls(SMOOTHED_HINGE, p)

    @classmethod
    def parse(cls, spec) -> LossKind:
        """Build from ``"squared"``, ``"cross_entropy"``, ``"smoothed_hinge:3"`` or a dict."""
        if isinstance(spec, LossKind):
            return spec
        if isinstance(spec, dict):
            return cls(spec.get("variant", SQUARED), int(spec.get("p", 2)))
        name, _, p = str(spec).partition(":")
        return cls(name, int(p) if p else 2)

    def to_dict(self) -> dict:
        d = {"variant": self.variant}
        if self.variant == SMOOTHED_HINGE:
            d["p"] = int(self.p)
        return d

    # batched evaluation over rows of Q (m x d_y) and Y (m x d_y)

    def values(self, Q: np.ndarray, Y: np.ndarray) -> np.ndarray:
        Q, Y = _check_pair(self, Q, Y)
        if self.variant == SQUARED:
            return np.sum((Q - Y) ** 2, axis=1)
        if self.variant == CROSS_ENTROPY:
            return -np.sum(Y * log_softmax(Q), axis=1)
        slack = np.maximum(0.0, 1.0 - Y[:, 0] * Q[:, 0])
        return slack**self.p

    def grads(self, Q: np.ndarray, Y: np.ndarray) -> np.ndarray:
        Q, Y = _check_pair(self, Q, Y)
        if self.variant == SQUARED:
            return 2.0 * (Q - Y)
        if self.variant == CROSS_ENTROPY:
            # d/dq of -sum_k y_k log softmax_k = sum(y) softmax - y
            return softmax(Q) * np.sum(Y, axis=1, keepdims=True) - Y
        slack = np.maximum(0.0, 1.0 - Y[:, 0] * Q[:, 0])
        return (-self.p * Y[:, 0] * slack ** (self.p - 1))[:, None]


def _check_pair(kind: LossKind, Q, Y) -> tuple[np.ndarray, np.ndarray]:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Q.shape != Y.shape:
        raise InvalidInput(f"output shape {Q.shape} does not match target shape {Y.shape}")
    if kind.variant == SMOOTHED_HINGE and Q.shape[1] != 1:
        raise InvalidInput("smoothed hinge loss requires d_y = 1")
    return Q, Y


def log_softmax(Q: np.ndarray) -> np.ndarray:
    Z = Q - np.max(Q, axis=-1, keepdims=True)
    return Z - np.log(np.sum(np.exp(Z), axis=-1, keepdims=True))


def softmax(Q: np.ndarray) -> np.ndarray:
    Z = np.exp(Q - np.max(Q, axis=-1, keepdims=True))
    return Z / np.sum(Z, axis=-1, keepdims=True)


def loss_value(kind: LossKind, q, y) -> float:
    """Loss of a single output vector ``q`` against target ``y``."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if not np.all(np.isfinite(q)):
        raise InvalidInput("output has non-finite entries")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return float(kind.values(q[None, :], y[None, :])[0])


def loss_grad(kind: LossKind, q, y) -> np.ndarray:
    """Gradient of ``q -> l(q, y)`` as a length-d_y array."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if not np.all(np.isfinite(q)):
        raise InvalidInput("output has non-finite entries")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return kind.grads(q[None, :], y[None, :])[0]
