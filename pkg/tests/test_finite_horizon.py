from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import simpson

from src.domain.models import InvalidArgumentError, OuParams, WeightFamily
from src.ou.finite_horizon import (
    ErrorModel,
    HorizonReferences,
    SquareMoments,
    log_length,
    quadrature_nodes,
    trapezoid_weights,
)
from src.ou.weights import log_u_array, log_v_squared_array, log_v_squared_closed

TIMES = np.array([10.0, 100.0, 316.2, 1000.0])


def test_quadrature_nodes_keep_every_checkpoint_beyond_start() -> None:
    nodes = quadrature_nodes(10.0, TIMES)
    assert nodes[0] == 10.0
    assert nodes[-1] == 1000.0
    assert np.all(np.diff(nodes) > 0)
    gaps = np.abs(nodes[None, :] / TIMES[1:, None] - 1.0).min(axis=1)
    assert np.all(gaps < 1e-12)
    assert trapezoid_weights(nodes).sum() == pytest.approx(990.0)
    with pytest.raises(InvalidArgumentError):
        quadrature_nodes(1000.0, TIMES)


def test_least_squares_moments_match_closed_forms() -> None:
    theta, t0 = -1.5, 10.0
    model = ErrorModel(OuParams(theta, 1.0), 0.8, t0, TIMES)
    moments = model.squared_error("ls")
    assert math.isnan(moments.mean[0])
    length = np.log(TIMES[1:] / t0)
    np.testing.assert_allclose(moments.mean[1:], 2.0 * abs(theta) * length, rtol=1e-4)
    expected = 16.0 * theta**2 * (length - 1.0 + t0 / TIMES[1:])
    np.testing.assert_allclose(moments.variance[1:], expected, rtol=1e-2)


def test_weighted_mean_integrates_the_exact_error_variance() -> None:
    alpha, t0 = 0.8, 10.0
    model = ErrorModel(OuParams(-1.0, 1.0), alpha, t0, TIMES)
    family = WeightFamily(alpha)
    s = np.geomspace(t0, 1000.0, 4001)
    density = 2.0 * np.exp(log_v_squared_array(s, family) - 2.0 * log_u_array(s, family))
    assert model.squared_error("weighted").mean[-1] == pytest.approx(simpson(density, x=s), rel=1e-4)


def test_centring_on_the_running_average_lowers_the_mean() -> None:
    model = ErrorModel(OuParams(-1.0, 1.0), 0.8, 10.0, TIMES)
    for kind, centre in (("ls", "hat"), ("weighted", "tilde")):
        assert model.squared_error(kind, centre).mean[-1] < model.squared_error(kind).mean[-1]


def test_gamma_median_sits_below_the_mean() -> None:
    times = np.array([1.0, 2.0])
    moments = SquareMoments(times, np.array([2.0, 2.0]), np.array([0.0, 4.0]))
    median = moments.median()
    assert median[0] == 2.0
    assert 0 < median[1] < 2.0
    # chi-square with 2 degrees of freedom has median 2 log 2
    assert median[1] == pytest.approx(2.0 * math.log(2.0), rel=0.03)
    scaled = moments.scaled(3.0)
    np.testing.assert_allclose(scaled.median(), 3.0 * median)
    np.testing.assert_allclose(scaled.sd(), 3.0 * moments.sd())


def test_derived_references_follow_the_estimator_definitions() -> None:
    params = OuParams(-2.0, 1.5)
    refs = HorizonReferences.build(params, 0.8, 10.0, TIMES, "tilde")
    check = refs.derived("theta_check")
    np.testing.assert_allclose(refs.derived("sigma_hat2").mean, check.mean * 2.25 / 2.0)
    breve = refs.derived("theta_breve")
    np.testing.assert_allclose(refs.derived("sigma_tilde2").mean, breve.mean * 4.0 * 2.25 / 2.0)
    assert refs.tlcl_variance("ls") == pytest.approx(math.log(1000.0) * check.variance[-1])
    assert refs.tlcl_variance("weighted") == pytest.approx(1000.0**0.2 * breve.variance[-1])
    constant = refs.llil_constant("ls")
    assert math.isnan(constant[0])
    assert constant[-1] == pytest.approx(math.sqrt(2.0 * math.log(1000.0) * check.variance[-1]))
    c = params.stationary_variance
    np.testing.assert_allclose(refs.qsl("qsl1_ls").mean, c * refs.qsl("qsl2_ls").mean)


def test_log_length_uses_the_natural_time_change() -> None:
    assert log_length("ls", 0.8, 10.0, 1000.0) == pytest.approx(math.log(100.0))
    expected = log_v_squared_closed(1000.0, 0.8) - log_v_squared_closed(10.0, 0.8)
    assert log_length("weighted", 0.8, 10.0, 1000.0) == pytest.approx(expected)
    assert log_length("weighted", 0.8, 10.0, 1000.0) == pytest.approx(1000.0**0.2 / 0.2 - 10.0**0.2 / 0.2, rel=1e-3)
