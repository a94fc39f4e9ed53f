import math

import numpy as np
import pytest

from glmmaq.data import Group
from glmmaq.families import ModelSpec, Parameters, RaneffFamily, ResponseFamily
from glmmaq.inner import AdaptationError, adapt, group_joint_loglik

LOG_2PI = math.log(2 * math.pi)

GAUS = ModelSpec(ResponseFamily.GAUSSIAN_IDENTITY, RaneffFamily.GAUSSIAN, d=0, p=1)
BERN = ModelSpec(ResponseFamily.BERNOULLI_LOGIT, RaneffFamily.GAUSSIAN, d=0, p=1)
WEIB = ModelSpec(ResponseFamily.WEIBULL_PH, RaneffFamily.LOG_GAMMA_FRAILTY, d=1, p=1)


def gaussian_group():
    return Group(id="g", y=np.array([1.0, -1.0]), X=np.zeros((2, 0)), V=np.ones((2, 1)))


def gaussian_params():
    return Parameters(np.zeros(0), {"resid_var": 1.0, "re_var": 1.0})


def grid_argmax(fun, lo=-10.0, hi=10.0):
    """Three-stage grid refinement to 1e-6 resolution."""
    for step in (1e-2, 1e-4, 1e-6):
        xs = np.arange(lo, hi + step / 2, step)
        vals = np.array([fun(x) for x in xs])
        best = xs[int(np.argmax(vals))]
        lo, hi = best - step, best + step
    return best


def test_conjugate_gaussian_value_grad_hess():
    value, grad, hess = group_joint_loglik(gaussian_group(), [0.0], gaussian_params(), GAUS, 2)
    assert value == pytest.approx(-1.0 - 1.5 * LOG_2PI, rel=1e-14)
    assert grad[0] == pytest.approx(0.0, abs=1e-14)
    assert hess[0, 0] == pytest.approx(-3.0, rel=1e-14)


def test_single_bernoulli_observation_value():
    group = Group(id="g", y=np.array([1.0]), X=np.zeros((1, 0)), V=np.ones((1, 1)))
    params = Parameters(np.zeros(0), {"re_var": 1.0})
    value = group_joint_loglik(group, [0.0], params, BERN)
    assert value == pytest.approx(-math.log(2) - 0.5 * LOG_2PI, rel=1e-14)


def test_gradient_matches_finite_differences_random_groups():
    rng = np.random.default_rng(21)
    spec = ModelSpec(ResponseFamily.BERNOULLI_LOGIT, RaneffFamily.GAUSSIAN, d=2, p=2)
    for _ in range(10):
        m = int(rng.integers(2, 8))
        group = Group(
            id="g",
            y=(rng.random(m) < 0.5).astype(float),
            X=rng.normal(size=(m, 2)),
            V=np.column_stack([np.ones(m), rng.normal(size=m)]),
        )
        cov = np.array([[1.0, 0.3], [0.3, 0.8]])
        params = Parameters(rng.normal(size=2) * 0.5, {"re_cov": cov})
        u = rng.normal(size=2) * 0.5
        _, grad, hess = group_joint_loglik(group, u, params, spec, 2)
        h = 1e-5
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            up = group_joint_loglik(group, u + e, params, spec)
            dn = group_joint_loglik(group, u - e, params, spec)
            assert grad[i] == pytest.approx((up - dn) / (2 * h), rel=1e-6, abs=1e-6)
            _, gup = group_joint_loglik(group, u + e, params, spec, 1)
            _, gdn = group_joint_loglik(group, u - e, params, spec, 1)
            np.testing.assert_allclose(hess[:, i], (gup - gdn) / (2 * h), rtol=1e-5, atol=1e-5)


def test_adapt_conjugate_gaussian_closed_form():
    result = adapt(gaussian_group(), gaussian_params(), GAUS)
    assert result.converged
    assert result.mode[0] == pytest.approx(0.0, abs=1e-12)
    assert result.neg_hessian[0, 0] == pytest.approx(3.0, rel=1e-12)
    assert result.chol_inv[0, 0] == pytest.approx(1 / math.sqrt(3), rel=1e-12)
    assert result.logdet_L == pytest.approx(-0.5 * math.log(3), rel=1e-12)


def test_adapt_gaussian_posterior_identity_random():
    # for the conjugate pair the mode and curvature have closed forms:
    # H = V'V / s2 + 1/t2, mode = H^{-1} V'(y - X beta) / s2
    rng = np.random.default_rng(4)
    spec = ModelSpec(ResponseFamily.GAUSSIAN_IDENTITY, RaneffFamily.GAUSSIAN, d=2, p=1)
    for _ in range(10):
        m = int(rng.integers(2, 9))
        group = Group(
            id="g", y=rng.normal(size=m), X=rng.normal(size=(m, 2)), V=np.ones((m, 1))
        )
        beta = rng.normal(size=2)
        s2, t2 = float(rng.uniform(0.3, 2.0)), float(rng.uniform(0.3, 2.0))
        params = Parameters(beta, {"resid_var": s2, "re_var": t2})
        result = adapt(group, params, spec)
        H = m / s2 + 1 / t2
        mode = float(np.sum(group.y - group.X @ beta)) / s2 / H
        assert result.neg_hessian[0, 0] == pytest.approx(H, rel=1e-9)
        assert result.mode[0] == pytest.approx(mode, abs=1e-9)


def test_adapt_bernoulli_matches_grid_search():
    group = Group(id="g", y=np.array([1.0, 1.0, 1.0]), X=np.zeros((3, 0)), V=np.ones((3, 1)))
    params = Parameters(np.zeros(0), {"re_var": 1.0})
    result = adapt(group, params, BERN)
    oracle = grid_argmax(lambda u: group_joint_loglik(group, [u], params, BERN))
    assert result.mode[0] == pytest.approx(oracle, abs=2e-6)


def test_adapt_weibull_frailty_matches_grid_search():
    rng = np.random.default_rng(8)
    for trial in range(5):
        m = int(rng.integers(2, 6))
        t = rng.exponential(1.0, size=m) + 0.05
        status = (rng.random(m) < 0.8).astype(float)
        group = Group(
            id=f"g{trial}",
            y=np.column_stack([t, status]),
            X=rng.normal(size=(m, 1)),
            V=np.ones((m, 1)),
        )
        params = Parameters(
            np.array([0.4]), {"base_hazard": 0.8, "shape": 1.3, "frailty_var": 0.7}
        )
        result = adapt(group, params, WEIB)
        oracle = grid_argmax(lambda u: group_joint_loglik(group, [u], params, WEIB))
        assert result.mode[0] == pytest.approx(oracle, abs=1e-5)


def test_adapt_start_invariance():
    rng = np.random.default_rng(13)
    group = Group(
        id="g",
        y=(rng.random(6) < 0.4).astype(float),
        X=np.zeros((6, 0)),
        V=np.ones((6, 1)),
    )
    params = Parameters(np.zeros(0), {"re_var": 2.0})
    cold = adapt(group, params, BERN)
    warm = adapt(group, params, BERN, start=cold.mode + 0.5)
    assert abs(cold.mode[0] - warm.mode[0]) <= 1e-7


def test_logdet_identity():
    rng = np.random.default_rng(2)
    spec = ModelSpec(ResponseFamily.POISSON_LOG, RaneffFamily.GAUSSIAN, d=1, p=2)
    group = Group(
        id="g",
        y=rng.poisson(2.0, size=5).astype(float),
        X=rng.normal(size=(5, 1)),
        V=np.column_stack([np.ones(5), rng.normal(size=5)]),
    )
    params = Parameters(np.array([0.2]), {"re_cov": np.array([[0.8, 0.2], [0.2, 0.5]])})
    result = adapt(group, params, spec)
    sign, logdet_H = np.linalg.slogdet(result.neg_hessian)
    assert sign == 1
    assert result.logdet_L == pytest.approx(-0.5 * logdet_H, abs=1e-10)
    np.testing.assert_allclose(
        result.chol_inv @ result.chol_inv.T,
        np.linalg.inv(result.neg_hessian),
        rtol=1e-10,
    )


def test_adapt_gradient_small_at_mode():
    rng = np.random.default_rng(14)
    group = Group(
        id="g",
        y=(rng.random(10) < 0.3).astype(float),
        X=np.zeros((10, 0)),
        V=np.ones((10, 1)),
    )
    params = Parameters(np.zeros(0), {"re_var": 1.5})
    result = adapt(group, params, BERN, tol=1e-10)
    _, grad = group_joint_loglik(group, result.mode, params, BERN, 1)
    assert np.max(np.abs(grad)) <= 1e-10


def test_adapt_nonconvergence_carries_iterate():
    group = Group(id="hard", y=np.array([1.0] * 8), X=np.zeros((8, 0)), V=np.ones((8, 1)))
    params = Parameters(np.zeros(0), {"re_var": 25.0})
    with pytest.raises(AdaptationError) as err:
        adapt(group, params, BERN, max_iter=1)
    assert err.value.group_id == "hard"
    assert err.value.last_iterate.shape == (1,)


def test_dimension_mismatch_rejected():
    group = gaussian_group()
    params = gaussian_params()
    with pytest.raises(ValueError):
        group_joint_loglik(group, [0.0, 0.0], params, GAUS)
