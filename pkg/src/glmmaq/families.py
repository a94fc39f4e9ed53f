"""Response and random-effect families: log-densities with derivatives.

Every response family exposes its log-density and the first two
derivatives in the linear predictor eta; every random-effect family
exposes the same in the effect vector u. All evaluators broadcast, so a
single call can score an (m, n_nodes) grid of predictors.

For the Weibull proportional-hazards family the observation is a
(time, status) pair and eta is the *complete* log relative hazard,
including the log of the baseline rate; the hazard is
``shape * t**(shape-1) * exp(eta)`` and only the shape parameter is read
from the dispersion set.

Dispersion parameters live in a name -> value dict on ``Parameters``;
``ParameterMap`` packs them (together with beta) into the flat
unconstrained vector the optimizer sees, and into the reporting vector
(beta natural, positive dispersions on the log scale) used for
covariance and interval construction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

_LOG_2PI = math.log(2.0 * math.pi)


class ResponseFamily(enum.Enum):
    BERNOULLI_LOGIT = "bernoulli_logit"
    POISSON_LOG = "poisson_log"
    GAUSSIAN_IDENTITY = "gaussian_identity"
    WEIBULL_PH = "weibull_ph"


class RaneffFamily(enum.Enum):
    GAUSSIAN = "gaussian"
    LOG_GAMMA_FRAILTY = "log_gamma_frailty"


@dataclass(frozen=True)
class ModelSpec:
    """Shape of a model: families plus dimensions (d, p, s).

    d: fixed-effect dimension, p: random-effect dimension, s: number of
    dispersion parameters (derived from the families and p).
    """

    response_family: ResponseFamily
    raneff_family: RaneffFamily
    d: int
    p: int = 1

    def __post_init__(self) -> None:
        if self.d < 0:
            raise ValueError(f"d must be >= 0, got {self.d}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if self.raneff_family is RaneffFamily.LOG_GAMMA_FRAILTY and self.p != 1:
            raise ValueError("log_gamma_frailty requires p = 1")

    @property
    def survival(self) -> bool:
        return self.response_family is ResponseFamily.WEIBULL_PH

    @property
    def sigma_names(self) -> tuple[str, ...]:
        names: list[str] = []
        if self.response_family is ResponseFamily.GAUSSIAN_IDENTITY:
            names.append("resid_var")
        elif self.response_family is ResponseFamily.WEIBULL_PH:
            names.extend(["base_hazard", "shape"])
        if self.raneff_family is RaneffFamily.GAUSSIAN:
            if self.p == 1:
                names.append("re_var")
            else:
                names.append("re_cov")
        else:
            names.append("frailty_var")
        return tuple(names)

    @property
    def s(self) -> int:
        """Length of the flat dispersion vector."""
        total = 0
        for name in self.sigma_names:
            total += self.p * (self.p + 1) // 2 if name == "re_cov" else 1
        return total


@dataclass
class Parameters:
    """Natural-scale parameters: fixed effects plus named dispersions."""

    beta: np.ndarray
    sigma: dict[str, float | np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))

    def copy(self) -> "Parameters":
        return Parameters(self.beta.copy(), dict(self.sigma))


def default_parameters(spec: ModelSpec) -> Parameters:
    sigma: dict[str, float | np.ndarray] = {}
    for name in spec.sigma_names:
        sigma[name] = np.eye(spec.p) if name == "re_cov" else 1.0
    return Parameters(np.zeros(spec.d), sigma)


# --------------------------------------------------------------------------
# response families
# --------------------------------------------------------------------------


def _check_response(family: ResponseFamily, y: np.ndarray) -> None:
    if family is ResponseFamily.BERNOULLI_LOGIT:
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("bernoulli_logit responses must be 0 or 1")
    elif family is ResponseFamily.POISSON_LOG:
        if not np.all((y >= 0) & (y == np.floor(y))):
            raise ValueError("poisson_log responses must be nonnegative integers")
    elif family is ResponseFamily.WEIBULL_PH:
        if y.ndim != 2 or y.shape[-1] != 2:
            raise ValueError("weibull_ph responses must be (time, status) pairs")
        if not np.all(y[:, 0] > 0):
            raise ValueError("weibull_ph times must be positive")
        if not np.all((y[:, 1] == 0.0) | (y[:, 1] == 1.0)):
            raise ValueError("weibull_ph status must be 0 or 1")


def _log1pexp(eta: np.ndarray) -> np.ndarray:
    # two-branch stable log(1 + exp(eta)); exact for |eta| > ~30
    out = np.maximum(eta, 0.0)
    return out + np.log1p(np.exp(-np.abs(eta)))


def _align(y_component: np.ndarray, eta: np.ndarray) -> np.ndarray:
    # lets y of shape (m,) score an (m, n_nodes) block of predictors
    if np.ndim(eta) == np.ndim(y_component) + 1:
        return y_component[..., None]
    return y_component


def _response_terms(
    family: ResponseFamily,
    y: np.ndarray,
    eta: np.ndarray,
    sigma: dict,
    order: int,
):
    """Per-observation log f and derivatives in eta, broadcast over eta."""
    if family is ResponseFamily.BERNOULLI_LOGIT:
        yb = _align(y, eta)
        val = yb * eta - _log1pexp(eta)
        if order == 0:
            return (val,)
        mu = 0.5 * (1.0 + np.tanh(0.5 * eta))  # overflow-free logistic
        d1 = yb - mu
        if order == 1:
            return val, d1
        return val, d1, -mu * (1.0 - mu) * np.ones_like(val)
    if family is ResponseFamily.POISSON_LOG:
        yb = _align(y, eta)
        lam = np.exp(eta)
        val = yb * eta - lam - gammaln(yb + 1.0)
        if order == 0:
            return (val,)
        if order == 1:
            return val, yb - lam
        return val, yb - lam, -lam * np.ones_like(val)
    if family is ResponseFamily.GAUSSIAN_IDENTITY:
        var = float(sigma["resid_var"])
        if var <= 0:
            raise ValueError(f"resid_var must be positive, got {var}")
        resid = _align(y, eta) - eta
        val = -0.5 * (_LOG_2PI + math.log(var)) - 0.5 * resid**2 / var
        if order == 0:
            return (val,)
        if order == 1:
            return val, resid / var
        return val, resid / var, np.full_like(val, -1.0 / var)
    if family is ResponseFamily.WEIBULL_PH:
        alpha = float(sigma["shape"])
        if alpha <= 0:
            raise ValueError(f"shape must be positive, got {alpha}")
        t, status = _align(y[..., 0], eta), _align(y[..., 1], eta)
        logt = np.log(t)
        cumhaz = np.exp(alpha * logt + eta)
        val = status * (math.log(alpha) + (alpha - 1.0) * logt + eta) - cumhaz
        if order == 0:
            return (val,)
        if order == 1:
            return val, status - cumhaz
        return val, status - cumhaz, -cumhaz * np.ones_like(val)
    raise ValueError(f"unknown response family {family!r}")


def response_logdensity(
    spec: ModelSpec,
    y_obs,
    eta,
    sigma_natural: dict,
    derivative_order: int = 0,
):
    """Log-density of the response at linear predictor eta.

    Returns the value, or a (value, d1[, d2]) tuple when derivatives in
    eta are requested. Inputs broadcast; y is validated against the
    family's support.
    """
    if derivative_order not in (0, 1, 2):
        raise ValueError("derivative_order must be 0, 1 or 2")
    y = np.asarray(y_obs, dtype=float)
    if spec.survival and y.ndim == 1:
        y = y.reshape(1, 2)
    _check_response(spec.response_family, np.atleast_1d(y) if not spec.survival else y)
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ValueError("eta must be finite")
    out = _response_terms(spec.response_family, y, eta, sigma_natural, derivative_order)
    return out[0] if derivative_order == 0 else out


# --------------------------------------------------------------------------
# random-effect families
# --------------------------------------------------------------------------


def _raneff_cov(spec: ModelSpec, sigma: dict) -> np.ndarray:
    if spec.p == 1:
        var = float(sigma["re_var"])
        if var <= 0:
            raise ValueError(f"re_var must be positive, got {var}")
        return np.array([[var]])
    cov = np.asarray(sigma["re_cov"], dtype=float)
    if cov.shape != (spec.p, spec.p):
        raise ValueError(f"re_cov must be {spec.p}x{spec.p}, got {cov.shape}")
    return cov


def raneff_logdensity(
    spec: ModelSpec,
    u,
    sigma_natural: dict,
    derivative_order: int = 0,
):
    """Log-density of the random effect, with derivatives in u.

    For the Gaussian family u may have shape (p,) or (n, p) and the
    gradient/Hessian come back with matching leading shape. For the
    log-Gamma frailty family (p = 1) everything broadcasts elementwise:
    the effect is the log of a mean-one Gamma multiplier with variance
    ``frailty_var``.
    """
    if derivative_order not in (0, 1, 2):
        raise ValueError("derivative_order must be 0, 1 or 2")
    if spec.raneff_family is RaneffFamily.GAUSSIAN:
        cov = _raneff_cov(spec, sigma_natural)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("random-effect covariance is not positive definite") from exc
        u_arr = np.asarray(u, dtype=float)
        squeeze = u_arr.ndim == 1
        u2 = np.atleast_2d(u_arr)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        prec = np.linalg.inv(cov)
        quad = np.einsum("ni,ij,nj->n", u2, prec, u2)
        val = -0.5 * (spec.p * _LOG_2PI + logdet + quad)
        if squeeze:
            val = val[0]
        if derivative_order == 0:
            return val
        grad = -u2 @ prec
        if squeeze:
            grad = grad[0]
        if derivative_order == 1:
            return val, grad
        hess = -prec if squeeze else np.broadcast_to(-prec, (u2.shape[0], spec.p, spec.p))
        return val, grad, hess
    # log-Gamma frailty: b = log U with U ~ Gamma(1/phi, scale=phi), E[U] = 1
    phi = float(sigma_natural["frailty_var"])
    if phi <= 0:
        raise ValueError(f"frailty_var must be positive, got {phi}")
    b_arr = np.asarray(u, dtype=float)
    squeeze = b_arr.ndim == 1
    b = np.atleast_2d(b_arr)[:, 0]
    inv = 1.0 / phi
    eb = np.exp(b)
    val = -gammaln(inv) - inv * math.log(phi) + inv * b - inv * eb
    if squeeze:
        val = val[0]
    if derivative_order == 0:
        return val
    grad = (inv - inv * eb)[:, None]
    hess = (-inv * eb)[:, None, None]
    if squeeze:
        grad, hess = grad[0], hess[0]
    if derivative_order == 1:
        return val, grad
    return val, grad, hess


# --------------------------------------------------------------------------
# natural <-> unconstrained <-> reporting transforms
# --------------------------------------------------------------------------


def _softplus(t: float) -> float:
    return math.log1p(math.exp(-abs(t))) + max(t, 0.0)


def _softplus_inv(x: float) -> float:
    if x <= 0:
        raise ValueError("softplus inverse needs a positive argument")
    return x + math.log(-math.expm1(-x))


_POSITIVE_MAPS = {
    "log": (math.exp, math.log),
    "softplus": (_softplus, _softplus_inv),
}


class ParameterMap:
    """Flattens Parameters to/from optimizer and reporting vectors.

    Layout of every vector: beta first, then dispersions in
    ``spec.sigma_names`` order. Positive scalars use the chosen
    bijection (log by default, softplus available for cross-checking);
    a p > 1 Gaussian covariance uses its Cholesky factor with logged
    diagonal, row by row. The reporting vector always uses the log
    scale for positive entries regardless of the optimizer transform.
    """

    def __init__(self, spec: ModelSpec, transform: str = "log"):
        if transform not in _POSITIVE_MAPS:
            raise ValueError(f"transform must be one of {sorted(_POSITIVE_MAPS)}")
        self.spec = spec
        self.transform = transform
        self._fwd, self._inv = _POSITIVE_MAPS[transform]

    @property
    def n_params(self) -> int:
        return self.spec.d + self.spec.s

    def names(self, x_names: list[str] | None = None) -> list[str]:
        spec = self.spec
        if x_names is None:
            x_names = [f"beta{i}" for i in range(spec.d)]
        if len(x_names) != spec.d:
            raise ValueError(f"expected {spec.d} fixed-effect names, got {len(x_names)}")
        out = list(x_names)
        for name in spec.sigma_names:
            if name == "re_cov":
                p = spec.p
                out.extend(f"re_chol_{i}{j}" for i in range(p) for j in range(i + 1))
            else:
                out.append(name)
        return out

    def _sigma_to_vec(self, sigma: dict, scalar_map) -> np.ndarray:
        vals: list[float] = []
        for name in self.spec.sigma_names:
            if name == "re_cov":
                chol = np.linalg.cholesky(np.asarray(sigma[name], dtype=float))
                for i in range(self.spec.p):
                    for j in range(i + 1):
                        vals.append(scalar_map(chol[i, i]) if i == j else chol[i, j])
            else:
                vals.append(scalar_map(float(sigma[name])))
        return np.array(vals)

    def _vec_to_sigma(self, vec: np.ndarray, scalar_unmap) -> dict:
        sigma: dict[str, float | np.ndarray] = {}
        pos = 0
        for name in self.spec.sigma_names:
            if name == "re_cov":
                p = self.spec.p
                chol = np.zeros((p, p))
                for i in range(p):
                    for j in range(i + 1):
                        chol[i, j] = scalar_unmap(vec[pos]) if i == j else vec[pos]
                        pos += 1
                sigma[name] = chol @ chol.T
            else:
                sigma[name] = scalar_unmap(float(vec[pos]))
                pos += 1
        return sigma

    def pack(self, params: Parameters) -> np.ndarray:
        """Natural parameters -> unconstrained optimizer vector."""
        return np.concatenate([params.beta, self._sigma_to_vec(params.sigma, self._inv)])

    def unpack(self, vector: np.ndarray) -> Parameters:
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.n_params,):
            raise ValueError(f"expected vector of length {self.n_params}, got {vector.shape}")
        d = self.spec.d
        return Parameters(vector[:d].copy(), self._vec_to_sigma(vector[d:], self._fwd))

    def pack_reporting(self, params: Parameters) -> np.ndarray:
        """Natural parameters -> reporting vector (log scale for positives)."""
        return np.concatenate([params.beta, self._sigma_to_vec(params.sigma, math.log)])

    def unpack_reporting(self, vector: np.ndarray) -> Parameters:
        vector = np.asarray(vector, dtype=float)
        d = self.spec.d
        return Parameters(vector[:d].copy(), self._vec_to_sigma(vector[d:], math.exp))

    def positive_mask(self) -> np.ndarray:
        """True for reporting entries that live on the log scale."""
        mask = [False] * self.spec.d
        for name in self.spec.sigma_names:
            if name == "re_cov":
                for i in range(self.spec.p):
                    for j in range(i + 1):
                        mask.append(i == j)
            else:
                mask.append(True)
        return np.array(mask)
