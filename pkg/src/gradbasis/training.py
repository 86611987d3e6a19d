"""Locating and screening critical points of the training objective ``L``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import Diverged, InvalidInput, PreconditionFailed
from .losses import LossKind
from .models import Dataset, ModelSpec, ParamVector, as_theta, forward_batch, kink_distance, param_jacobian

CRITICAL_POINT = "CriticalPoint"
LOCAL_MIN = "LocalMinCandidate"
SADDLE = "SaddleCandidate"
NOT_CONVERGED = "NotConverged"

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class OptimizerConfig:
    """Gradient descent with Armijo backtracking.

    ``step_rule="bb"`` uses the Barzilai-Borwein step as the first trial step
    of each line search; ``"double"`` retries twice the previous step.  Either
    way every accepted step satisfies the sufficient-decrease test, except
    once the required decrease falls under the rounding level of ``L``; then
    the test is applied to the slopes at both ends of the step instead, and
    the value may rise by at most ``8 eps max(1, |L|)``.
    ``free_blocks`` restricts the descent to the named parameter blocks.
    """

    max_iters: int = 20000
    grad_tol: float = 1e-8
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    seed: int = 0
    step_rule: str = "bb"
    initial_step: float = 1.0
    free_blocks: tuple | None = None

    def __post_init__(self):
        if self.grad_tol <= 0:
            raise InvalidInput("grad_tol must be positive")
        if self.max_iters < 1:
            raise InvalidInput("max_iters must be >= 1")
        if not 0 < self.shrink < 1:
            raise InvalidInput("shrink factor must lie in (0, 1)")
        if self.step_rule not in ("bb", "double"):
            raise InvalidInput(f"unknown step rule {self.step_rule!r}")


@dataclass
class StationaryReport:
    theta: ParamVector
    grad_inf_norm: float
    hessian_min_eig_estimate: float
    classification: str
    kink_distance: float
    loss: float
    iterations: int = 0
    accepted_steps: int = 0
    history: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "grad_inf_norm": self.grad_inf_norm,
            "hessian_min_eig_estimate": self.hessian_min_eig_estimate,
            "classification": self.classification,
            "kink_distance": self.kink_distance,
            "loss": self.loss,
            "iterations": self.iterations,
            "accepted_steps": self.accepted_steps,
        }


def loss_L(spec: ModelSpec, theta, data: Dataset, loss: LossKind) -> float:
    """Weighted training objective ``sum_i lam_i l(f(x_i), y_i)``."""
    out = forward_batch(spec, theta, data.X)
    return float(data.lam @ loss.values(out, data.Y))


def grad_L(spec: ModelSpec, theta, data: Dataset, loss: LossKind) -> np.ndarray:
    """``dL/dtheta_k = sum_i lam_i dl(f(x_i)) . d_k f(x_i)``, assembled from the Jacobian."""
    out = forward_batch(spec, theta, data.X)
    dl = loss.grads(out, data.Y) * data.lam[:, None]
    return param_jacobian(spec, theta, data).T @ dl.reshape(-1)


def _free_mask(spec: ModelSpec, free_blocks) -> np.ndarray:
    layout = spec.layout()
    if free_blocks is None:
        return np.ones(layout.size, dtype=bool)
    return layout.mask(free_blocks)


def find_stationary(spec: ModelSpec, data: Dataset, loss: LossKind, theta0, cfg: OptimizerConfig = OptimizerConfig(),
                    callback: Callable | None = None) -> StationaryReport:
    """Run gradient descent until ``||grad L||_inf <= grad_tol`` or ``max_iters``.

    Returns a report classified ``CriticalPoint`` on convergence, otherwise
    ``NotConverged``; no second-order information is computed here.
    """
    layout = spec.layout()
    x = as_theta(spec, theta0).copy()
    mask = _free_mask(spec, cfg.free_blocks)
    f = loss_L(spec, x, data, loss)
    if not math.isfinite(f):
        raise Diverged(f"initial loss is not finite ({f})")
    g = grad_L(spec, x, data, loss) * mask
    if not np.all(np.isfinite(g)):
        raise Diverged("initial gradient is not finite")

    t = cfg.initial_step
    x_prev = g_prev = None
    accepted = 0
    history = [f]
    it = 0
    gnorm = float(np.max(np.abs(g), initial=0.0))
    for it in range(cfg.max_iters):
        if gnorm <= cfg.grad_tol:
            break
        if cfg.step_rule == "bb" and x_prev is not None:
            s = x - x_prev
            yk = g - g_prev
            sy = float(s @ yk)
            t = float(s @ s) / sy if sy > 0 else 2.0 * t
        elif x_prev is not None:
            t = 2.0 * t
        gg = float(g @ g)
        gn = None
        while True:
            xn = x - t * g
            fn = loss_L(spec, xn, data, loss)
            if math.isfinite(fn):
                if fn <= f - cfg.sufficient_decrease * t * gg:
                    break
                noise = 8 * _EPS * max(1.0, abs(f))
                if cfg.sufficient_decrease * t * gg <= noise and fn <= f + noise:
                    # decrease below rounding level: judge it from the slopes (approximate Armijo)
                    gn = grad_L(spec, xn, data, loss) * mask
                    if float(gn @ g) >= (2 * cfg.sufficient_decrease - 1) * gg:
                        break
                    gn = None
            t *= cfg.shrink
            if t < 1e-300:
                xn = None
                break
        if xn is None:
            break
        x_prev, g_prev = x, g
        x, f = xn, fn
        g = grad_L(spec, x, data, loss) * mask if gn is None else gn
        if not np.all(np.isfinite(g)):
            raise Diverged(f"non-finite gradient at iteration {it}")
        gnorm = float(np.max(np.abs(g), initial=0.0))
        accepted += 1
        history.append(f)
        if callback is not None:
            callback(it, x, f, gnorm)
    converged = gnorm <= cfg.grad_tol
    return StationaryReport(
        theta=ParamVector(layout, x),
        grad_inf_norm=gnorm,
        hessian_min_eig_estimate=math.nan,
        classification=CRITICAL_POINT if converged else NOT_CONVERGED,
        kink_distance=kink_distance(spec, x, data),
        loss=f,
        iterations=it + 1 if not converged else it,
        accepted_steps=accepted,
        history=history,
    )


def hessian_vector_product(spec, theta, data, loss, v, h: float = 1e-5, mask=None) -> np.ndarray:
    """Central finite difference of the exact gradient along ``v``."""
    x = as_theta(spec, theta)
    gp = grad_L(spec, x + h * v, data, loss)
    gm = grad_L(spec, x - h * v, data, loss)
    hv = (gp - gm) / (2 * h)
    return hv if mask is None else hv * mask


def _lanczos_min_eig(matvec, n: int, steps: int, rng: np.random.Generator) -> float:
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    Q = [q]
    alphas, betas = [], []
    for j in range(min(steps, n)):
        w = matvec(Q[j])
        a = float(Q[j] @ w)
        alphas.append(a)
        # full reorthogonalization, twice for stability
        Qm = np.array(Q)
        w = w - Qm.T @ (Qm @ w)
        w = w - Qm.T @ (Qm @ w)
        b = float(np.linalg.norm(w))
        if b <= 1e-12 * max(1.0, abs(a)) or j == min(steps, n) - 1:
            break
        betas.append(b)
        Q.append(w / b)
    T = np.diag(alphas) + np.diag(betas[: len(alphas) - 1], 1) + np.diag(betas[: len(alphas) - 1], -1)
    return float(np.linalg.eigvalsh(T)[0])


def _power_min_eig(matvec, n: int, iters: int, rng: np.random.Generator) -> float:
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(min(iters, 200)):
        w = matvec(v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        lam = nw
        v = w / nw
    shift = 1.05 * lam
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    mu = 0.0
    for _ in range(iters):
        w = shift * v - matvec(v)
        mu_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        v = w / nw
        if abs(mu_new - mu) <= 1e-12 * max(1.0, abs(mu_new)):
            mu = mu_new
            break
        mu = mu_new
    return shift - mu


def classify_stationary(spec: ModelSpec, theta, data: Dataset, loss: LossKind, eig_tol: float = 1e-6,
                        grad_tol: float = 1e-8, h: float = 1e-5, method: str = "lanczos",
                        free_blocks: Sequence[str] | None = None, seed: int = 0,
                        max_steps: int = 200) -> StationaryReport:
    """Second-order screen at a stationary point.

    The minimum Hessian eigenvalue is estimated from finite-difference
    Hessian-vector products, either by Lanczos with full reorthogonalization
    (default) or by power iteration on the shifted operator ``s I - H``.
    ``LocalMinCandidate`` iff the estimate is ``>= -eig_tol``.
    """
    x = as_theta(spec, theta)
    mask = _free_mask(spec, free_blocks)
    g = grad_L(spec, x, data, loss) * mask
    gnorm = float(np.max(np.abs(g), initial=0.0))
    if gnorm > grad_tol:
        raise PreconditionFailed(f"not stationary: ||grad L||_inf = {gnorm:.3e} > {grad_tol:.1e}")
    idx = np.flatnonzero(mask)
    n = idx.size

    def matvec(v_sub):
        v = np.zeros(x.size)
        v[idx] = v_sub
        return hessian_vector_product(spec, x, data, loss, v, h)[idx]

    rng = np.random.default_rng(seed)
    if method == "lanczos":
        lam = _lanczos_min_eig(matvec, n, max_steps, rng)
    elif method == "power":
        lam = _power_min_eig(matvec, n, 20 * max_steps, rng)
    else:
        raise InvalidInput(f"unknown eigenvalue method {method!r}")
    return StationaryReport(
        theta=ParamVector(spec.layout(), x),
        grad_inf_norm=gnorm,
        hessian_min_eig_estimate=lam,
        classification=LOCAL_MIN if lam >= -eig_tol else SADDLE,
        kink_distance=kink_distance(spec, x, data),
        loss=loss_L(spec, x, data, loss),
    )
