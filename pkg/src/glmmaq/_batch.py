"""Vectorized one-dimensional random-effect evaluator.

Mode searches and node evaluations for all groups at once, using flat
group-contiguous arrays. Only the p = 1 case is handled here; the
generic per-group path in :mod:`glmmaq.marglik` covers everything else.
Results agree with the per-group path to numerical tolerance (same
Newton tolerance, same log-space assembly) and the cross-check lives in
the test suite.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from .data import PackedData
from .families import (
    ModelSpec,
    Parameters,
    ResponseFamily,
    raneff_logdensity,
    response_logdensity,
)
from .inner import DEFAULT_MAX_ITER, DEFAULT_TOL, MAX_HALVINGS, AdaptationError
from .quadrature import QuadratureRule


class _Eval1D:
    """Joint log-likelihood of every group as a function of its scalar effect."""

    def __init__(self, packed: PackedData, params: Parameters, spec: ModelSpec):
        self.packed = packed
        self.params = params
        self.spec = spec
        self.M = packed.sizes.size
        offset = 0.0
        if spec.response_family is ResponseFamily.WEIBULL_PH:
            offset = math.log(float(params.sigma["base_hazard"]))
        n = packed.group_index.size
        self.base_eta = offset + (packed.X @ params.beta if packed.X.shape[1] else np.zeros(n))
        self.vflat = packed.V[:, 0]

    def _group_sums(self, per_obs: np.ndarray) -> np.ndarray:
        return np.bincount(self.packed.group_index, weights=per_obs, minlength=self.M)

    def value(self, u: np.ndarray) -> np.ndarray:
        eta = self.base_eta + self.vflat * u[self.packed.group_index]
        val = response_logdensity(self.spec, self.packed.y, eta, self.params.sigma, 0)
        rv = raneff_logdensity(self.spec, u[:, None], self.params.sigma, 0)
        return self._group_sums(val) + rv

    def value_grad_hess(self, u: np.ndarray):
        eta = self.base_eta + self.vflat * u[self.packed.group_index]
        val, d1, d2 = response_logdensity(self.spec, self.packed.y, eta, self.params.sigma, 2)
        rv, rg, rh = raneff_logdensity(self.spec, u[:, None], self.params.sigma, 2)
        value = self._group_sums(val) + rv
        grad = self._group_sums(self.vflat * d1) + rg[:, 0]
        hess = self._group_sums(self.vflat**2 * d2) + rh[:, 0, 0]
        return value, grad, hess

    def node_values(self, u_nodes: np.ndarray) -> np.ndarray:
        """l at an (M, n_nodes) grid of effects; returns (M, n_nodes)."""
        n_nodes = u_nodes.shape[1]
        eta = self.base_eta[:, None] + self.vflat[:, None] * u_nodes[self.packed.group_index]
        val = response_logdensity(self.spec, self.packed.y, eta, self.params.sigma, 0)
        sums = np.add.reduceat(val, self.packed.ptr[:-1], axis=0)
        rv = raneff_logdensity(
            self.spec, u_nodes.reshape(-1, 1), self.params.sigma, 0
        ).reshape(self.M, n_nodes)
        return sums + rv


def adapt_all(
    evaluator: _Eval1D,
    group_ids,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    warm: np.ndarray | None = None,
):
    """Newton-with-halving mode search for every group simultaneously.

    Returns (modes, neg_hess, iterations) where all three are (M,)
    arrays. Converged groups are frozen while the rest keep stepping.
    """
    M = evaluator.M
    u = np.zeros(M) if warm is None else np.asarray(warm, dtype=float).reshape(M).copy()
    value, grad, hess = evaluator.value_grad_hess(u)
    conv = np.abs(grad) <= tol
    iterations = np.zeros(M, dtype=int)
    for it in range(1, max_iter + 1):
        if conv.all():
            break
        H = np.maximum(-hess, np.finfo(float).tiny)
        step = np.where(conv, 0.0, grad / H)
        scale = np.ones(M)
        accepted = conv.copy()
        for _ in range(MAX_HALVINGS):
            cand_value = evaluator.value(u + scale * step)
            accepted |= cand_value > value
            if accepted.all():
                break
            scale = np.where(accepted, scale, 0.5 * scale)
        stuck = ~accepted
        if stuck.any():
            hard = stuck & (np.abs(grad) > 100 * tol)
            if hard.any():
                idx = int(np.argmax(hard))
                raise AdaptationError(
                    f"line search failed for group {group_ids[idx]!r}",
                    str(group_ids[idx]),
                    u[[idx]],
                )
            conv |= stuck
            scale = np.where(stuck, 0.0, scale)
        moved = ~conv
        u = u + np.where(moved, scale * step, 0.0)
        value, grad, hess = evaluator.value_grad_hess(u)
        newly = moved & (np.abs(grad) <= tol)
        iterations[moved] = it
        conv |= newly
    if not conv.all():
        idx = int(np.argmax(~conv))
        raise AdaptationError(
            f"mode search for group {group_ids[idx]!r} did not converge in {max_iter} iterations",
            str(group_ids[idx]),
            u[[idx]],
        )
    return u, np.maximum(-hess, np.finfo(float).tiny), iterations


def aq_per_group(
    evaluator: _Eval1D,
    rule: QuadratureRule,
    modes: np.ndarray,
    neg_hess: np.ndarray,
) -> np.ndarray:
    """Adapted log marginal likelihood of every group; (M,) array."""
    L = 1.0 / np.sqrt(neg_hess)
    z = rule.points[:, 0]
    logw = rule.log_adapted_weights()
    u_nodes = modes[:, None] + L[:, None] * z[None, :]
    ell = evaluator.node_values(u_nodes)
    return -0.5 * np.log(neg_hess) + logsumexp(ell + logw[None, :], axis=1)


def gq_per_group(evaluator: _Eval1D, rule: QuadratureRule) -> np.ndarray:
    """Unadapted log marginal likelihood of every group; (M,) array."""
    z = rule.points[:, 0]
    logw = rule.log_adapted_weights()
    u_nodes = np.broadcast_to(z, (evaluator.M, z.size))
    ell = evaluator.node_values(np.ascontiguousarray(u_nodes))
    return logsumexp(ell + logw[None, :], axis=1)
