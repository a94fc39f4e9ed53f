"""Maximum-likelihood fitting of the quadrature-approximate likelihood.

The approximate log-likelihood is treated as a black box of the
unconstrained parameter vector: a quasi-Newton (BFGS) pass with central
finite-difference gradients does the work, and a Nelder-Mead pass picks
up from the best iterate if the line search stalls. Standard errors
come from a central finite-difference Hessian of the log-likelihood on
the reporting scale (fixed effects natural, positive dispersion
parameters logged), inverted to a covariance matrix; intervals for
positive parameters are built on the log scale and exponentiated.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import ndtri

from .data import GroupedDataset
from .families import (
    ModelSpec,
    ParameterMap,
    Parameters,
    RaneffFamily,
    ResponseFamily,
)
from .inner import AdaptationError
from .marglik import NodeEvaluationError, total_loglik, validate_dataset

DEFAULT_OUTER_TOL = 1e-6
DEFAULT_MAX_EVALS = 100_000
_GRAD_STEP = float(np.cbrt(np.finfo(float).eps))
_HESS_STEP = float(np.finfo(float).eps ** 0.25)


class _EvalBudgetExceeded(RuntimeError):
    pass


@dataclass
class FitResult:
    """Estimates, inference and bookkeeping from one model fit."""

    spec: ModelSpec
    params_hat: Parameters
    loglik: float
    vcov: np.ndarray | None  # reporting scale, (d+s) x (d+s)
    std_errors: np.ndarray | None
    param_names: list[str]
    positive_mask: np.ndarray
    reporting_estimates: np.ndarray
    k: int
    method: str
    n_loglik_evals: int
    converged: bool
    wall_time: float
    diagnostics: dict = field(default_factory=dict)

    def estimates(self) -> dict[str, float]:
        """Natural-scale point estimates keyed by parameter name."""
        natural = np.where(
            self.positive_mask, np.exp(self.reporting_estimates), self.reporting_estimates
        )
        return dict(zip(self.param_names, natural.tolist()))


def finite_diff_gradient(fun, x: np.ndarray) -> np.ndarray:
    """Central differences with per-coordinate step cbrt(eps) * (1 + |x_j|)."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for j in range(x.size):
        h = _GRAD_STEP * (1.0 + abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        grad[j] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return grad


def finite_diff_hessian(fun, x: np.ndarray) -> np.ndarray:
    """Central-difference Hessian, exact for quadratics up to rounding."""
    x = np.asarray(x, dtype=float)
    q = x.size
    h = _HESS_STEP * (1.0 + np.abs(x))
    H = np.empty((q, q))
    f0 = fun(x)
    for i in range(q):
        ei = np.zeros(q)
        ei[i] = h[i]
        H[i, i] = (fun(x + ei) - 2.0 * f0 + fun(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(q)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return H


def vcov_from_hessian(loglik_fn, params_hat: np.ndarray) -> np.ndarray | None:
    """Observed-information covariance at an interior maximizer.

    Returns the inverse of the negated central-difference Hessian of
    ``loglik_fn``, or None when that Hessian is singular or not finite.
    """
    H = finite_diff_hessian(loglik_fn, np.asarray(params_hat, dtype=float))
    if not np.all(np.isfinite(H)):
        return None
    info = -H
    try:
        vcov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(vcov)):
        return None
    return 0.5 * (vcov + vcov.T)


def wald_ci(fit: FitResult, level: float = 0.95) -> list[dict]:
    """Wald intervals on the natural scale.

    Positive parameters get symmetric intervals on the log scale which
    are then exponentiated, so their natural-scale intervals are
    asymmetric and stay positive.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    if fit.std_errors is None:
        raise ValueError("fit has no standard errors; cannot build Wald intervals")
    z = float(ndtri(0.5 + level / 2.0))
    rows = []
    for name, est, se, positive in zip(
        fit.param_names, fit.reporting_estimates, fit.std_errors, fit.positive_mask
    ):
        lo, hi = est - z * se, est + z * se
        if positive:
            rows.append(
                {"name": name, "estimate": math.exp(est), "lower": math.exp(lo),
                 "upper": math.exp(hi), "se_reporting": float(se)}
            )
        else:
            rows.append(
                {"name": name, "estimate": float(est), "lower": float(lo),
                 "upper": float(hi), "se_reporting": float(se)}
            )
    return rows


# --------------------------------------------------------------------------
# starting values
# --------------------------------------------------------------------------


def _irls_start(y: np.ndarray, X: np.ndarray, family: ResponseFamily) -> np.ndarray:
    beta = np.zeros(X.shape[1])
    for _ in range(25):
        eta = X @ beta
        if family is ResponseFamily.BERNOULLI_LOGIT:
            mu = 0.5 * (1.0 + np.tanh(0.5 * eta))
            w = np.maximum(mu * (1.0 - mu), 1e-8)
        else:
            mu = np.exp(np.clip(eta, -30, 30))
            w = np.maximum(mu, 1e-8)
        z = y - mu
        try:
            step = np.linalg.solve(X.T @ (X * w[:, None]) + 1e-10 * np.eye(X.shape[1]), X.T @ z)
        except np.linalg.LinAlgError:
            break
        beta = beta + step
        if np.max(np.abs(step)) < 1e-8:
            break
    return beta


def _weibull_start(y: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, float, float]:
    t, status = y[:, 0], y[:, 1]
    d = X.shape[1]
    mu0 = max(float(np.sum(status)) / float(np.sum(t)), 1e-8)

    def nll(theta):
        logmu, logalpha, beta = theta[0], theta[1], theta[2:]
        alpha = math.exp(logalpha)
        eta = logmu + (X @ beta if d else 0.0)
        with np.errstate(over="ignore"):
            cumhaz = np.exp(alpha * np.log(t) + eta)
            val = status * (logalpha + (alpha - 1.0) * np.log(t) + eta) - cumhaz
        total = float(np.sum(val))
        return np.inf if not np.isfinite(total) else -total

    x0 = np.concatenate([[math.log(mu0), 0.0], np.zeros(d)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = optimize.minimize(nll, x0, method="Nelder-Mead",
                                options={"maxiter": 2000, "xatol": 1e-6, "fatol": 1e-9})
    logmu, logalpha, beta = res.x[0], res.x[1], res.x[2:]
    return beta, math.exp(logmu), math.exp(logalpha)


def default_start(dataset: GroupedDataset, spec: ModelSpec) -> Parameters:
    """Fixed-effects-only fit for beta; unit variances for dispersions."""
    X = np.concatenate([g.X for g in dataset.groups])
    y = np.concatenate([g.y for g in dataset.groups])
    sigma: dict[str, float | np.ndarray] = {}
    beta = np.zeros(spec.d)
    try:
        if spec.response_family is ResponseFamily.GAUSSIAN_IDENTITY:
            if spec.d:
                beta = np.linalg.lstsq(X, y, rcond=None)[0]
            resid = y - (X @ beta if spec.d else 0.0)
            sigma["resid_var"] = max(float(np.mean(resid**2)), 1e-6)
        elif spec.response_family is ResponseFamily.WEIBULL_PH:
            beta, mu, alpha = _weibull_start(y, X)
            sigma["base_hazard"] = mu
            sigma["shape"] = alpha
        elif spec.d:
            beta = _irls_start(y, X, spec.response_family)
    except (np.linalg.LinAlgError, ValueError):
        beta = np.zeros(spec.d)
        if spec.response_family is ResponseFamily.GAUSSIAN_IDENTITY:
            sigma.setdefault("resid_var", 1.0)
        if spec.response_family is ResponseFamily.WEIBULL_PH:
            sigma.setdefault("base_hazard", 1.0)
            sigma.setdefault("shape", 1.0)
    if spec.raneff_family is RaneffFamily.GAUSSIAN:
        if spec.p == 1:
            sigma["re_var"] = 1.0
        else:
            sigma["re_cov"] = np.eye(spec.p)
    else:
        sigma["frailty_var"] = 1.0
    return Parameters(beta, sigma)


# --------------------------------------------------------------------------
# the fit driver
# --------------------------------------------------------------------------


def fit(
    dataset: GroupedDataset,
    spec: ModelSpec,
    k: int,
    method: str = "AQ",
    outer_tol: float = DEFAULT_OUTER_TOL,
    max_evals: int = DEFAULT_MAX_EVALS,
    start: Parameters | None = None,
    transform: str = "log",
    inner_tol: float = 1e-8,
) -> FitResult:
    """Maximize the approximate log-likelihood and build Wald inference.

    ``n_loglik_evals`` counts likelihood evaluations spent by the
    optimizer (finite-difference gradients included); the evaluations
    used afterwards for the covariance Hessian are reported separately
    under ``diagnostics["vcov_evals"]``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    validate_dataset(dataset, spec)
    method = method.upper()
    pmap = ParameterMap(spec, transform)
    start_params = default_start(dataset, spec) if start is None else start
    t0 = time.perf_counter()

    state = {"evals": 0, "warm": None, "eval_errors": 0, "jitter": 0, "budget": max_evals}
    best = {"x": None, "f": np.inf}

    def negloglik(x: np.ndarray) -> float:
        if state["evals"] >= state["budget"]:
            raise _EvalBudgetExceeded()
        state["evals"] += 1
        try:
            params = pmap.unpack(x)
            with np.errstate(over="ignore", under="ignore", invalid="ignore"):
                bd = total_loglik(
                    dataset, params, spec, k, method,
                    warm_starts=state["warm"], inner_tol=inner_tol,
                )
        except (ValueError, OverflowError, AdaptationError, NodeEvaluationError,
                np.linalg.LinAlgError):
            state["eval_errors"] += 1
            return np.inf
        if bd.adaptations is not None:
            state["warm"] = bd.modes
            state["jitter"] += sum(a.jittered for a in bd.adaptations)
        if not np.isfinite(bd.total):
            return np.inf
        f = -bd.total
        if f < best["f"]:
            best["f"], best["x"] = f, x.copy()
        return f

    def grad(x: np.ndarray) -> np.ndarray:
        return finite_diff_gradient(negloglik, x)

    x0 = pmap.pack(start_params)
    if not np.isfinite(negloglik(x0)):
        raise ValueError("log-likelihood is not finite at the starting parameters")

    used_fallback = False
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = optimize.minimize(
                negloglik, x0, jac=grad, method="BFGS",
                options={"gtol": outer_tol, "maxiter": 500},
            )
        stalled = not res.success
    except _EvalBudgetExceeded:
        stalled = False  # budget spent; report best iterate as-is
    if best["x"] is None:
        raise ValueError("optimizer failed before finding any finite log-likelihood")
    if stalled:
        used_fallback = True
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = optimize.minimize(
                    negloglik, best["x"], method="Nelder-Mead",
                    options={"maxiter": 2000 * len(x0), "xatol": 1e-8, "fatol": 1e-10},
                )
        except _EvalBudgetExceeded:
            pass

    x_hat = best["x"]
    loglik = -best["f"]
    try:
        grad_hat = finite_diff_gradient(negloglik, x_hat)
        converged = bool(np.max(np.abs(grad_hat)) <= outer_tol)
    except _EvalBudgetExceeded:
        converged = False
    optimizer_evals = state["evals"]
    params_hat = pmap.unpack(x_hat)

    # covariance on the reporting scale (beta natural, positives logged)
    state["budget"] = max_evals + 10_000_000
    vcov_start = state["evals"]
    r_hat = pmap.pack_reporting(params_hat)

    def loglik_reporting(r: np.ndarray) -> float:
        try:
            params = pmap.unpack_reporting(r)
            with np.errstate(over="ignore", under="ignore", invalid="ignore"):
                bd = total_loglik(
                    dataset, params, spec, k, method,
                    warm_starts=state["warm"], inner_tol=inner_tol,
                )
        except (ValueError, OverflowError, AdaptationError, NodeEvaluationError,
                np.linalg.LinAlgError):
            return -np.inf
        return bd.total

    vcov = vcov_from_hessian(loglik_reporting, r_hat)
    vcov_evals = state["evals"] - vcov_start
    std_errors = None
    bad_curvature = False
    if vcov is not None:
        diag = np.diag(vcov)
        if np.all(diag >= 0):
            std_errors = np.sqrt(diag)
        else:
            bad_curvature = True

    diagnostics = {
        "eval_errors": state["eval_errors"],
        "jitter_count": state["jitter"],
        "used_fallback": used_fallback,
        "vcov_evals": vcov_evals,
        "vcov_missing": vcov is None,
        "vcov_not_positive": bad_curvature,
    }
    return FitResult(
        spec=spec,
        params_hat=params_hat,
        loglik=loglik,
        vcov=vcov,
        std_errors=std_errors,
        param_names=pmap.names(list(dataset.x_names)),
        positive_mask=pmap.positive_mask(),
        reporting_estimates=r_hat,
        k=k,
        method=method,
        n_loglik_evals=optimizer_evals,
        converged=converged,
        wall_time=time.perf_counter() - t0,
        diagnostics=diagnostics,
    )
