import math

import numpy as np
import pytest
from scipy.integrate import quad

from glmmaq.families import (
    ModelSpec,
    ParameterMap,
    Parameters,
    RaneffFamily,
    ResponseFamily,
    raneff_logdensity,
    response_logdensity,
)

LOG_2PI = math.log(2 * math.pi)


def spec_for(response, raneff=RaneffFamily.GAUSSIAN, d=1, p=1):
    return ModelSpec(response, raneff, d=d, p=p)


BERN = spec_for(ResponseFamily.BERNOULLI_LOGIT)
POIS = spec_for(ResponseFamily.POISSON_LOG)
GAUS = spec_for(ResponseFamily.GAUSSIAN_IDENTITY)
WEIB = spec_for(ResponseFamily.WEIBULL_PH, RaneffFamily.LOG_GAMMA_FRAILTY)


# --------------------------------------------------------------------------
# pinned log-density values
# --------------------------------------------------------------------------


def test_bernoulli_symmetric_point():
    val = response_logdensity(BERN, np.array([1.0]), np.array([0.0]), {})
    assert val[0] == pytest.approx(-math.log(2), rel=1e-15)


def test_poisson_zero_at_unit_rate():
    val = response_logdensity(POIS, np.array([0.0]), np.array([0.0]), {})
    assert val[0] == pytest.approx(-1.0, rel=1e-15)


def test_weibull_unit_case():
    val = response_logdensity(
        WEIB, np.array([[1.0, 1.0]]), np.array([0.0]), {"shape": 1.0, "base_hazard": 1.0}
    )
    assert val[0] == pytest.approx(-1.0, rel=1e-15)


def test_gaussian_raneff_values():
    assert raneff_logdensity(BERN, np.array([0.0]), {"re_var": 1.0}) == pytest.approx(
        -0.5 * LOG_2PI
    )
    spec2 = spec_for(ResponseFamily.BERNOULLI_LOGIT, p=2)
    val = raneff_logdensity(spec2, np.array([1.0, 1.0]), {"re_cov": np.eye(2)})
    assert val == pytest.approx(-LOG_2PI - 1.0, rel=1e-14)


def test_log_gamma_frailty_value():
    assert raneff_logdensity(WEIB, np.array([0.0]), {"frailty_var": 1.0}) == pytest.approx(-1.0)


def test_gaussian_raneff_maximized_at_zero():
    rng = np.random.default_rng(7)
    for _ in range(20):
        var = float(rng.uniform(0.1, 5.0))
        u = rng.normal(size=1)
        at_zero = raneff_logdensity(BERN, np.zeros(1), {"re_var": var})
        elsewhere = raneff_logdensity(BERN, u, {"re_var": var})
        assert at_zero >= elsewhere


# --------------------------------------------------------------------------
# derivative checks against central finite differences
# --------------------------------------------------------------------------


def fd_check_response(spec, y, sigma, eta_values):
    h = 1e-5
    for eta in eta_values:
        eta_arr = np.full(y.shape[0] if y.ndim else 1, eta, dtype=float)
        val, d1, d2 = response_logdensity(spec, y, eta_arr, sigma, 2)
        up = response_logdensity(spec, y, eta_arr + h, sigma)
        dn = response_logdensity(spec, y, eta_arr - h, sigma)
        fd1 = (up - dn) / (2 * h)
        fd2 = (up - 2 * val + dn) / h**2
        np.testing.assert_allclose(d1, fd1, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(d2, fd2, rtol=1e-4, atol=1e-4)


def test_response_derivatives_match_finite_differences():
    rng = np.random.default_rng(11)
    etas = rng.uniform(-2.5, 2.5, size=6)
    fd_check_response(BERN, np.array([0.0, 1.0, 1.0]), {}, etas)
    fd_check_response(POIS, np.array([0.0, 2.0, 5.0]), {}, etas)
    fd_check_response(GAUS, np.array([0.3, -1.2]), {"resid_var": 0.7}, etas)
    fd_check_response(
        WEIB,
        np.array([[0.5, 1.0], [2.0, 0.0], [1.3, 1.0]]),
        {"shape": 1.4, "base_hazard": 1.0},
        etas,
    )


def test_raneff_derivatives_match_finite_differences():
    h = 1e-5
    rng = np.random.default_rng(3)
    spec2 = spec_for(ResponseFamily.BERNOULLI_LOGIT, p=2)
    A = rng.normal(size=(2, 2))
    sigma2 = {"re_cov": A @ A.T + 0.5 * np.eye(2)}
    for spec, sigma in [
        (BERN, {"re_var": 1.7}),
        (spec2, sigma2),
        (WEIB, {"frailty_var": 0.6}),
    ]:
        u = rng.normal(size=spec.p)
        val, grad, hess = raneff_logdensity(spec, u, sigma, 2)
        for i in range(spec.p):
            e = np.zeros(spec.p)
            e[i] = h
            up = raneff_logdensity(spec, u + e, sigma)
            dn = raneff_logdensity(spec, u - e, sigma)
            assert grad[i] == pytest.approx((up - dn) / (2 * h), rel=1e-6, abs=1e-6)
            _, gup = raneff_logdensity(spec, u + e, sigma, 1)
            _, gdn = raneff_logdensity(spec, u - e, sigma, 1)
            np.testing.assert_allclose(hess[:, i], (gup - gdn) / (2 * h), rtol=1e-5, atol=1e-5)


# --------------------------------------------------------------------------
# densities normalize over their support
# --------------------------------------------------------------------------


def test_bernoulli_normalizes():
    for eta in (-1.3, 0.0, 2.2):
        mass = sum(
            math.exp(float(response_logdensity(BERN, np.array([y]), np.array([eta]), {})[0]))
            for y in (0.0, 1.0)
        )
        assert mass == pytest.approx(1.0, rel=1e-12)


def test_poisson_normalizes():
    for eta in (-1.0, 0.5, 1.5):
        mass = sum(
            math.exp(float(response_logdensity(POIS, np.array([float(y)]), np.array([eta]), {})[0]))
            for y in range(200)
        )
        assert mass == pytest.approx(1.0, rel=1e-10)


def test_gaussian_normalizes():
    sigma = {"resid_var": 1.9}
    mass, _ = quad(
        lambda y: math.exp(
            float(response_logdensity(GAUS, np.array([y]), np.array([0.4]), sigma)[0])
        ),
        -30,
        30,
    )
    assert mass == pytest.approx(1.0, rel=1e-8)


def test_weibull_density_normalizes():
    sigma = {"shape": 1.6, "base_hazard": 1.0}
    mass, _ = quad(
        lambda t: math.exp(
            float(
                response_logdensity(
                    WEIB, np.array([[t, 1.0]]), np.array([0.3]), sigma
                )[0]
            )
        ),
        1e-12,
        50,
    )
    assert mass == pytest.approx(1.0, rel=1e-6)


def test_raneff_densities_normalize():
    rng = np.random.default_rng(5)
    for _ in range(3):
        var = float(rng.uniform(0.2, 3.0))
        mass, _ = quad(
            lambda u: math.exp(float(raneff_logdensity(BERN, np.array([u]), {"re_var": var}))),
            -40,
            40,
        )
        assert mass == pytest.approx(1.0, rel=1e-8)
        phi = float(rng.uniform(0.2, 2.0))
        mass, _ = quad(
            lambda b: math.exp(
                float(raneff_logdensity(WEIB, np.array([b]), {"frailty_var": phi}))
            ),
            -60,
            15,
        )
        assert mass == pytest.approx(1.0, rel=1e-6)


def test_log_gamma_frailty_multiplier_has_unit_mean():
    for phi in (0.3, 1.0, 2.5):
        mean, _ = quad(
            lambda b: math.exp(b)
            * math.exp(float(raneff_logdensity(WEIB, np.array([b]), {"frailty_var": phi}))),
            -60,
            20,
        )
        assert mean == pytest.approx(1.0, rel=1e-6)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


def test_rejects_invalid_responses():
    with pytest.raises(ValueError):
        response_logdensity(BERN, np.array([0.5]), np.array([0.0]), {})
    with pytest.raises(ValueError):
        response_logdensity(POIS, np.array([-1.0]), np.array([0.0]), {})
    with pytest.raises(ValueError):
        response_logdensity(POIS, np.array([1.5]), np.array([0.0]), {})
    with pytest.raises(ValueError):
        response_logdensity(WEIB, np.array([[0.0, 1.0]]), np.array([0.0]), {"shape": 1.0})
    with pytest.raises(ValueError):
        response_logdensity(WEIB, np.array([[1.0, 2.0]]), np.array([0.0]), {"shape": 1.0})
    with pytest.raises(ValueError):
        response_logdensity(BERN, np.array([1.0]), np.array([np.inf]), {})


def test_rejects_bad_dispersions():
    with pytest.raises(ValueError):
        response_logdensity(GAUS, np.array([0.0]), np.array([0.0]), {"resid_var": -1.0})
    with pytest.raises(ValueError):
        raneff_logdensity(BERN, np.array([0.0]), {"re_var": 0.0})
    with pytest.raises(ValueError):
        raneff_logdensity(WEIB, np.array([0.0]), {"frailty_var": -0.5})
    spec2 = spec_for(ResponseFamily.BERNOULLI_LOGIT, p=2)
    with pytest.raises(ValueError):
        raneff_logdensity(spec2, np.zeros(2), {"re_cov": np.array([[1.0, 2.0], [2.0, 1.0]])})


def test_log_gamma_requires_p1():
    with pytest.raises(ValueError):
        ModelSpec(ResponseFamily.WEIBULL_PH, RaneffFamily.LOG_GAMMA_FRAILTY, d=0, p=2)


def test_overflow_safe_bernoulli():
    val = response_logdensity(BERN, np.array([1.0]), np.array([800.0]), {})
    assert val[0] == pytest.approx(0.0, abs=1e-300)
    val = response_logdensity(BERN, np.array([0.0]), np.array([-800.0]), {})
    assert val[0] == pytest.approx(0.0, abs=1e-300)
    val = response_logdensity(BERN, np.array([0.0]), np.array([750.0]), {})
    assert val[0] == pytest.approx(-750.0, rel=1e-12)


# --------------------------------------------------------------------------
# parameter transforms
# --------------------------------------------------------------------------


@pytest.mark.parametrize("transform", ["log", "softplus"])
def test_round_trip_scalar_dispersions(transform):
    spec = ModelSpec(ResponseFamily.WEIBULL_PH, RaneffFamily.LOG_GAMMA_FRAILTY, d=2, p=1)
    pmap = ParameterMap(spec, transform)
    params = Parameters(
        np.array([0.4, -1.1]),
        {"base_hazard": 0.37, "shape": 1.22, "frailty_var": 0.85},
    )
    back = pmap.unpack(pmap.pack(params))
    np.testing.assert_allclose(back.beta, params.beta, rtol=1e-12)
    for name in params.sigma:
        assert back.sigma[name] == pytest.approx(params.sigma[name], rel=1e-12)


@pytest.mark.parametrize("transform", ["log", "softplus"])
def test_round_trip_covariance(transform):
    spec = ModelSpec(ResponseFamily.GAUSSIAN_IDENTITY, RaneffFamily.GAUSSIAN, d=1, p=2)
    pmap = ParameterMap(spec, transform)
    cov = np.array([[1.3, -0.4], [-0.4, 0.9]])
    params = Parameters(np.array([2.0]), {"resid_var": 0.55, "re_cov": cov})
    back = pmap.unpack(pmap.pack(params))
    np.testing.assert_allclose(back.sigma["re_cov"], cov, rtol=1e-12)
    assert back.sigma["resid_var"] == pytest.approx(0.55, rel=1e-12)
    assert pmap.n_params == spec.d + spec.s == 1 + 1 + 3


def test_reporting_scale_is_log_for_positives():
    spec = ModelSpec(ResponseFamily.GAUSSIAN_IDENTITY, RaneffFamily.GAUSSIAN, d=1, p=1)
    pmap = ParameterMap(spec, "softplus")
    params = Parameters(np.array([3.0]), {"resid_var": 2.0, "re_var": 0.5})
    rep = pmap.pack_reporting(params)
    np.testing.assert_allclose(rep, [3.0, math.log(2.0), math.log(0.5)], rtol=1e-14)
    mask = pmap.positive_mask()
    assert mask.tolist() == [False, True, True]
    back = pmap.unpack_reporting(rep)
    assert back.sigma["re_var"] == pytest.approx(0.5, rel=1e-14)


def test_parameter_names():
    spec = ModelSpec(ResponseFamily.WEIBULL_PH, RaneffFamily.LOG_GAMMA_FRAILTY, d=2, p=1)
    pmap = ParameterMap(spec)
    assert pmap.names(["age", "sex"]) == ["age", "sex", "base_hazard", "shape", "frailty_var"]
    assert pmap.names() == ["beta0", "beta1", "base_hazard", "shape", "frailty_var"]


def test_sigma_names_by_family():
    assert BERN.sigma_names == ("re_var",)
    assert GAUS.sigma_names == ("resid_var", "re_var")
    assert WEIB.sigma_names == ("base_hazard", "shape", "frailty_var")
    spec2 = spec_for(ResponseFamily.POISSON_LOG, p=3)
    assert spec2.sigma_names == ("re_cov",)
    assert spec2.s == 6
