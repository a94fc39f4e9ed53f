"""Recommended number of quadrature points from group counts.

The per-group error of the adapted approximation decays like
m^(-r(k)) with r(k) = floor((k+2)/3), where m is the group size, while
the statistical estimation error with M groups is of order M^(-1/2).
Balancing the two via the smooth exponent (k+2)/3 gives the suggested
minimum

    k(M, m) = ceil(1.5 * log(M) / log(m) - 2),

clamped to at least one point. A one-point (mode plus curvature)
approximation is only advisable when this recommendation equals 1.
Groups of size one give no such guarantee for any k, so m = 1 yields an
unbounded recommendation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

CEILING_GUARD = 1e-9


def rate_exponent(k: int) -> int:
    """Error-rate exponent r(k) = floor((k + 2) / 3)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return (k + 2) // 3


@dataclass(frozen=True)
class KRecommendation:
    M: int
    m: int
    k: int | float  # positive integer, or math.inf when m = 1
    rate_r: int | None
    eps_star: float | None

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.k)

    @property
    def avoid_laplace(self) -> bool:
        return self.k > 1


def _guarded_ceil(x: float) -> int:
    nearest = round(x)
    if abs(x - nearest) <= CEILING_GUARD:
        return int(nearest)
    return int(math.ceil(x))


def recommend_k(M: int, m: int) -> KRecommendation:
    """Minimum recommended points per coordinate for M groups of size >= m.

    m is the smallest group size. Values of the raw formula within 1e-9
    of an integer are treated as that integer before the ceiling, so
    exact powers (e.g. M = m**4) do not get rounded up spuriously.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if m == 1:
        return KRecommendation(M=M, m=m, k=math.inf, rate_r=None, eps_star=None)
    raw = 1.5 * math.log(M) / math.log(m) - 2.0
    k = max(1, _guarded_ceil(raw))
    r = rate_exponent(k)
    return KRecommendation(M=M, m=m, k=k, rate_r=r, eps_star=float(m) ** (-r))


def max_groups_for_k(m: int, k: int) -> int:
    """Largest M whose estimation error still dominates at k points.

    Inverts M^(-1/2) >= m^(-r(k)): the answer is the exact integer
    power m**(2 r(k)). Computed in arbitrary-precision integers, so
    there is no overflow to report for any representable input.
    """
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return m ** (2 * rate_exponent(k))
