"""Gauss-Hermite quadrature rules for the standard-normal kernel.

All rules here integrate against the *unnormalized* Gaussian kernel

    integral f(z) exp(-||z||^2 / 2) dz  ~=  sum_j v_j f(z_j),

so the kernel weights of a p-dimensional rule sum to (2*pi)^(p/2).
One-dimensional rules are built by Golub-Welsch: the nodes are the
eigenvalues of the symmetric tridiagonal Jacobi matrix of the monic
Hermite recurrence (a_n = 0, b_n = sqrt(n)), and the weight of node j
is sqrt(2*pi) times the squared first component of its eigenvector.
Multidimensional rules are plain tensor products.

The adapted weight of a node, ``v * exp(||z||^2 / 2)``, is what a
likelihood evaluated at a recentered node must be multiplied by; for
the one-point rule it equals (2*pi)^(p/2), so a one-point adapted sum
reduces to the usual Gaussian (mode + curvature) approximation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

MAX_ORDER = 200
MAX_PRODUCT_NODES = 10**6

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class QuadratureRule:
    """An immutable quadrature rule with respect to exp(-||z||^2/2) dz.

    points has shape (n_nodes, dim); kernel_weights has shape (n_nodes,).
    order is the number of points per coordinate, so n_nodes = order**dim.
    """

    dim: int
    points: np.ndarray
    kernel_weights: np.ndarray
    order: int

    def __post_init__(self) -> None:
        self.points.setflags(write=False)
        self.kernel_weights.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.points.shape[0]

    def log_adapted_weights(self) -> np.ndarray:
        """log(v_j) + ||z_j||^2 / 2 for every node, computed analytically."""
        sq = np.sum(self.points**2, axis=1)
        return np.log(self.kernel_weights) + 0.5 * sq


def hermite_rule(k: int) -> QuadratureRule:
    """One-dimensional k-point rule for the kernel exp(-z^2/2).

    Exact for polynomials of degree <= 2k - 1. Nodes are symmetrized so
    that the set is closed under negation and contains 0 exactly when k
    is odd.
    """
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
        raise TypeError(f"k must be an integer, got {k!r}")
    if k < 1 or k > MAX_ORDER:
        raise ValueError(f"k must be in 1..{MAX_ORDER}, got {k}")
    if k == 1:
        nodes = np.zeros(1)
        weights = np.array([np.sqrt(2.0 * np.pi)])
    else:
        offdiag = np.sqrt(np.arange(1, k, dtype=float))
        nodes, vectors = eigh_tridiagonal(np.zeros(k), offdiag)
        weights = np.sqrt(2.0 * np.pi) * vectors[0] ** 2
        # eigenvalues come out sorted but only symmetric to rounding;
        # fold the two halves so mirrored nodes match bit for bit
        nodes = 0.5 * (nodes - nodes[::-1])
        if k % 2 == 1:
            nodes[k // 2] = 0.0
        weights = 0.5 * (weights + weights[::-1])
    return QuadratureRule(dim=1, points=nodes.reshape(-1, 1), kernel_weights=weights, order=k)


def product_rule(base: QuadratureRule, p: int) -> QuadratureRule:
    """Extend a one-dimensional rule to p dimensions by tensor product."""
    if base.dim != 1:
        raise ValueError(f"base rule must be one-dimensional, got dim={base.dim}")
    if not isinstance(p, (int, np.integer)) or isinstance(p, bool):
        raise TypeError(f"p must be an integer, got {p!r}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if base.order**p > MAX_PRODUCT_NODES:
        raise ValueError(
            f"product rule with k={base.order}, p={p} would need {base.order**p} "
            f"nodes, above the {MAX_PRODUCT_NODES} budget"
        )
    if p == 1:
        return base
    coords = base.points[:, 0]
    grid = np.array(list(itertools.product(coords, repeat=p)))
    weights = base.kernel_weights
    for _ in range(p - 1):
        weights = np.multiply.outer(weights, base.kernel_weights)
    weights = weights.reshape(-1)
    return QuadratureRule(dim=p, points=grid, kernel_weights=weights, order=base.order)


def adapted_weight(rule: QuadratureRule, node_index: int) -> float:
    """Weight v * exp(||z||^2/2) applied to a recentered integrand value."""
    if not 0 <= node_index < rule.n_nodes:
        raise IndexError(f"node index {node_index} out of range 0..{rule.n_nodes - 1}")
    z = rule.points[node_index]
    return float(rule.kernel_weights[node_index] * np.exp(0.5 * np.dot(z, z)))


def rule_for(k: int, p: int) -> QuadratureRule:
    """Convenience: k points per coordinate, extended to p dimensions."""
    return product_rule(hermite_rule(k), p)
