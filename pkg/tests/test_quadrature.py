import math

import numpy as np
import pytest

from glmmaq.quadrature import (
    MAX_ORDER,
    MAX_PRODUCT_NODES,
    QuadratureRule,
    adapted_weight,
    hermite_rule,
    product_rule,
    rule_for,
)

SQRT_2PI = math.sqrt(2.0 * math.pi)


def normal_raw_moment(j: int) -> float:
    """E[Z^j] for standard normal Z: (j-1)!! for even j, 0 for odd."""
    if j % 2 == 1:
        return 0.0
    value = 1.0
    for factor in range(j - 1, 0, -2):
        value *= factor
    return value


def test_one_point_rule():
    rule = hermite_rule(1)
    assert rule.points.tolist() == [[0.0]]
    assert rule.kernel_weights[0] == pytest.approx(SQRT_2PI, rel=1e-15)


def test_two_point_rule():
    rule = hermite_rule(2)
    np.testing.assert_allclose(rule.points[:, 0], [-1.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(rule.kernel_weights, [SQRT_2PI / 2] * 2, rtol=1e-14)


def test_three_point_rule():
    rule = hermite_rule(3)
    np.testing.assert_allclose(rule.points[:, 0], [-math.sqrt(3), 0.0, math.sqrt(3)], atol=1e-14)
    np.testing.assert_allclose(
        rule.kernel_weights,
        [SQRT_2PI / 6, 2 * SQRT_2PI / 3, SQRT_2PI / 6],
        rtol=1e-13,
    )


@pytest.mark.parametrize("k", range(1, 21))
def test_degree_exactness(k):
    rule = hermite_rule(k)
    z = rule.points[:, 0]
    for j in range(2 * k):
        total = float(np.sum(rule.kernel_weights * z**j))
        expected = SQRT_2PI * normal_raw_moment(j)
        if expected == 0.0:
            # odd moments cancel by symmetry; the attainable scale is the
            # same sum over |z|^j
            scale = float(np.sum(rule.kernel_weights * np.abs(z) ** j))
            assert abs(total) <= 1e-10 * max(scale, 1.0)
        else:
            assert total == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("k", range(1, 41))
def test_weights_sum_and_symmetry(k):
    rule = hermite_rule(k)
    assert float(rule.kernel_weights.sum()) == pytest.approx(SQRT_2PI, rel=1e-12)
    z = rule.points[:, 0]
    np.testing.assert_array_equal(z, -z[::-1])
    np.testing.assert_array_equal(rule.kernel_weights, rule.kernel_weights[::-1])
    assert (0.0 in z) == (k % 2 == 1)
    assert np.all(rule.kernel_weights > 0)


@pytest.mark.parametrize("k", [2, 5, 9, 16])
def test_matches_numpy_reference(k):
    nodes, weights = np.polynomial.hermite_e.hermegauss(k)
    rule = hermite_rule(k)
    np.testing.assert_allclose(rule.points[:, 0], nodes, atol=1e-12)
    np.testing.assert_allclose(rule.kernel_weights, weights, rtol=1e-12)


def test_product_rule_identity():
    base = hermite_rule(2)
    assert product_rule(base, 1) is base


def test_product_rule_two_dims():
    rule = product_rule(hermite_rule(2), 2)
    assert rule.n_nodes == 4
    expected_points = {(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)}
    got = {tuple(np.round(pt, 12)) for pt in rule.points}
    assert got == expected_points
    np.testing.assert_allclose(rule.kernel_weights, [2 * math.pi / 4] * 4, rtol=1e-13)


def test_product_rule_weight_sum_direct():
    rule = rule_for(5, 3)
    assert rule.n_nodes == 125
    direct = float(np.sum(rule.kernel_weights))
    assert direct == pytest.approx((2 * math.pi) ** 1.5, rel=1e-12)


def test_product_rule_degree_exactness_mixed_monomial():
    rule = rule_for(4, 2)
    z1, z2 = rule.points[:, 0], rule.points[:, 1]
    total = float(np.sum(rule.kernel_weights * z1**2 * z2**4))
    expected = 2 * math.pi * normal_raw_moment(2) * normal_raw_moment(4)
    assert total == pytest.approx(expected, rel=1e-12)


def test_adapted_weight_examples():
    assert adapted_weight(hermite_rule(1), 0) == pytest.approx(SQRT_2PI, rel=1e-15)
    rule2 = hermite_rule(2)
    plus_one = int(np.argmax(rule2.points[:, 0]))
    assert adapted_weight(rule2, plus_one) == pytest.approx(
        SQRT_2PI / 2 * math.exp(0.5), rel=1e-13
    )
    rule_2d = rule_for(1, 2)
    assert adapted_weight(rule_2d, 0) == pytest.approx(2 * math.pi, rel=1e-14)


def test_log_adapted_weights_match_adapted_weight():
    rule = rule_for(3, 2)
    logs = rule.log_adapted_weights()
    for j in range(rule.n_nodes):
        assert math.exp(logs[j]) == pytest.approx(adapted_weight(rule, j), rel=1e-12)


def test_rejects_bad_order():
    with pytest.raises(ValueError):
        hermite_rule(0)
    with pytest.raises(ValueError):
        hermite_rule(MAX_ORDER + 1)
    with pytest.raises(TypeError):
        hermite_rule(2.5)


def test_rejects_bad_dimension_and_budget():
    base = hermite_rule(40)
    with pytest.raises(ValueError):
        product_rule(base, 0)
    with pytest.raises(ValueError):
        product_rule(base, 4)  # 40**4 > budget
    assert 40**3 < MAX_PRODUCT_NODES
    assert product_rule(base, 3).n_nodes == 40**3


def test_adapted_weight_index_bounds():
    rule = hermite_rule(3)
    with pytest.raises(IndexError):
        adapted_weight(rule, 3)
    with pytest.raises(IndexError):
        adapted_weight(rule, -1)


def test_rules_are_immutable():
    rule = hermite_rule(4)
    with pytest.raises(ValueError):
        rule.points[0, 0] = 5.0
    with pytest.raises(ValueError):
        rule.kernel_weights[0] = 5.0
