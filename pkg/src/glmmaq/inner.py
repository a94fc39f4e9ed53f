"""Per-group joint log-likelihood and its mode/curvature adaptation.

For one group, the joint log-likelihood in the random effect u is

    l(u) = sum_j log f(y_j | eta_j) + log g(u),   eta_j = offset + x_j'beta + v_j'u.

``adapt`` maximizes l by Newton ascent with a step-halving line search
and returns the mode, the negative Hessian H there, and the lower
Cholesky factor L of H^{-1}. Those three quantities recenter and
rescale quadrature nodes: u = L z + mode.

Every supported family combination is concave in u (each response
log-density is concave in eta, eta is linear in u, and both
random-effect log-densities are concave), so the line search is a
safety net for floating-point corner cases, not a requirement for
convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Group
from .families import (
    ModelSpec,
    Parameters,
    ResponseFamily,
    raneff_logdensity,
    response_logdensity,
)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50
MAX_HALVINGS = 30


class AdaptationError(RuntimeError):
    """Mode search failed; carries the group id and the last iterate."""

    def __init__(self, message: str, group_id: str, last_iterate: np.ndarray):
        super().__init__(message)
        self.group_id = group_id
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class Adaptation:
    """Mode, curvature and scale of one group's joint log-likelihood."""

    mode: np.ndarray  # (p,)
    neg_hessian: np.ndarray  # (p, p), positive definite
    chol_inv: np.ndarray  # (p, p) lower triangular, L L' = H^{-1}
    logdet_L: float
    converged: bool
    iterations: int
    jittered: bool = False


def linear_predictor(group: Group, params: Parameters, u: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """eta for every observation of the group at random effect u."""
    eta = group.X @ params.beta if group.X.shape[1] else np.zeros(group.size)
    if spec.response_family is ResponseFamily.WEIBULL_PH:
        eta = eta + math.log(float(params.sigma["base_hazard"]))
    return eta + group.V @ np.asarray(u, dtype=float)


def group_joint_loglik(
    group: Group,
    u,
    params: Parameters,
    spec: ModelSpec,
    derivative_order: int = 0,
):
    """l(u), optionally with gradient and Hessian in u.

    Derivatives are assembled by the chain rule through eta: the
    gradient is V' (dlogf/deta) plus the random-effect gradient, the
    Hessian is V' diag(d2logf/deta2) V plus the random-effect Hessian.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    p = group.V.shape[1]
    if u.shape != (p,):
        raise ValueError(f"u must have length {p}, got shape {u.shape}")
    eta = linear_predictor(group, params, u, spec)
    resp = response_logdensity(spec, group.y, eta, params.sigma, derivative_order)
    rane = raneff_logdensity(spec, u, params.sigma, derivative_order)
    if derivative_order == 0:
        return float(np.sum(resp) + rane)
    value = float(np.sum(resp[0]) + rane[0])
    grad = group.V.T @ resp[1] + rane[1]
    if derivative_order == 1:
        return value, grad
    hess = (group.V * resp[2][:, None]).T @ group.V + rane[2]
    return value, grad, hess


def _chol_with_jitter(H: np.ndarray, group_id: str, mode: np.ndarray):
    """Cholesky factor of H, retrying once with a small diagonal bump."""
    try:
        return np.linalg.cholesky(H), False
    except np.linalg.LinAlgError:
        bump = 1e-8 * (1.0 + float(np.max(np.diag(H))))
        try:
            return np.linalg.cholesky(H + bump * np.eye(H.shape[0])), True
        except np.linalg.LinAlgError:
            raise AdaptationError(
                f"negative Hessian for group {group_id!r} is not positive definite",
                group_id,
                mode,
            ) from None


def adapt(
    group: Group,
    params: Parameters,
    spec: ModelSpec,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    start: np.ndarray | None = None,
) -> Adaptation:
    """Newton ascent to the group mode, then curvature factorization.

    Stops when the gradient's infinity norm drops to ``tol``. Each
    Newton step is halved (up to 30 times) until the objective
    increases. Raises AdaptationError on non-convergence or an
    indefinite curvature that one round of diagonal jitter cannot fix.
    """
    p = group.V.shape[1]
    u = np.zeros(p) if start is None else np.asarray(start, dtype=float).reshape(p).copy()
    jittered = False
    converged = False
    iterations = 0
    value, grad, hess = group_joint_loglik(group, u, params, spec, 2)
    for iterations in range(1, max_iter + 1):
        if np.max(np.abs(grad)) <= tol:
            converged = True
            iterations -= 1
            break
        chol, used_jitter = _chol_with_jitter(-hess, group.id, u)
        jittered = jittered or used_jitter
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
        scale = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = u + scale * step
            cand_value = group_joint_loglik(group, candidate, params, spec, 0)
            if cand_value > value:
                break
            scale *= 0.5
        else:
            # no ascent found: we are at numerical stationarity
            if np.max(np.abs(grad)) <= 100 * tol:
                converged = True
                break
            raise AdaptationError(
                f"line search failed for group {group.id!r}", group.id, u
            )
        u = u + scale * step
        value, grad, hess = group_joint_loglik(group, u, params, spec, 2)
    else:
        if np.max(np.abs(grad)) <= tol:
            converged = True
    if not converged:
        raise AdaptationError(
            f"mode search for group {group.id!r} did not converge in {max_iter} iterations",
            group.id,
            u,
        )
    H = -hess
    H = 0.5 * (H + H.T)
    chol_H, used_jitter = _chol_with_jitter(H, group.id, u)
    if used_jitter:
        jittered = True
        H = H + 1e-8 * (1.0 + float(np.max(np.diag(H)))) * np.eye(p)
    H_inv = np.linalg.inv(H)
    H_inv = 0.5 * (H_inv + H_inv.T)
    L = np.linalg.cholesky(H_inv)
    return Adaptation(
        mode=u,
        neg_hessian=H,
        chol_inv=L,
        logdet_L=float(np.sum(np.log(np.diag(L)))),
        converged=converged,
        iterations=iterations,
        jittered=jittered,
    )
