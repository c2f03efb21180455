from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad

from src.domain.models import DomainError, InvalidArgumentError, WeightFamily
from src.ou.weights import (
    lemma2_residuals,
    log_omega,
    log_omega_increment,
    log_u_array,
    log_v_squared_closed,
    log_weight_integral,
    u_quadrature,
    v_squared_closed,
    weight_companions,
)


def _weight_integral(t: float, alpha: float, power: int) -> float:
    # s = u^k with k = 1 / (1 - p alpha / 2) leaves k exp(p u^(k beta) / (2 beta)) on [0, t^(1/k)]
    beta = 1.0 - alpha
    k = 1.0 / (1.0 - 0.5 * power * alpha)
    value, _ = quad(
        lambda u: k * math.exp(power * u ** (k * beta) / (2.0 * beta)), 0.0, t ** (1.0 / k), epsrel=1e-13, limit=200
    )
    return value


@pytest.mark.parametrize("alpha", [0.6, 0.7, 0.9])
@pytest.mark.parametrize("t", [0.1, 1.0, 7.5, 50.0])
def test_closed_form_v_squared_matches_brute_force(alpha: float, t: float) -> None:
    assert v_squared_closed(t, alpha) == pytest.approx(_weight_integral(t, alpha, 2), rel=1e-8)


@pytest.mark.parametrize("alpha", [0.6, 0.9])
def test_log_v_squared_stays_finite_at_long_horizons(alpha: float) -> None:
    for t in (0.5, 10.0, 200.0):
        assert log_v_squared_closed(t, alpha) == pytest.approx(math.log(v_squared_closed(t, alpha)), abs=1e-8)
    exponent = 1e4 ** (1.0 - alpha) / (1.0 - alpha)
    assert log_v_squared_closed(1e4, alpha) == pytest.approx(exponent, abs=1e-8)


def test_power_two_quadrature_agrees_with_closed_form() -> None:
    for t in (0.3, 5.0, 1e3):
        numeric = log_weight_integral(t, 0.8, power=2).log_value
        assert numeric == pytest.approx(log_v_squared_closed(t, 0.8), abs=1e-8)


@pytest.mark.parametrize("t", [0.5, 5.0, 40.0])
def test_u_quadrature_matches_scipy(t: float) -> None:
    alpha = 0.7
    result = u_quadrature(t, alpha)
    assert result.value == pytest.approx(_weight_integral(t, alpha, 1), rel=1e-9)
    assert result.warning is None


def test_coarse_resolution_is_flagged() -> None:
    result = u_quadrature(10.0, 0.8, resolution=2.0)
    assert result.warning is not None


def test_log_omega_increment_is_difference_of_logs() -> None:
    for s, ds in ((0.5, 0.01), (3.0, 0.25), (1e3, 0.01)):
        expected = log_omega(s + ds, 0.75) - log_omega(s, 0.75)
        assert log_omega_increment(s, ds, 0.75) == pytest.approx(expected, abs=1e-11)


def test_log_omega_rejects_non_positive_time() -> None:
    with pytest.raises(DomainError):
        log_omega(0.0, 0.8)
    with pytest.raises(InvalidArgumentError):
        log_omega(1.0, 1.0)


def test_weight_companions_bundle_the_three_integrals() -> None:
    companions = weight_companions(20.0, 0.8)
    assert companions.u == pytest.approx(u_quadrature(20.0, 0.8).value, rel=1e-12)
    assert companions.v_squared == pytest.approx(v_squared_closed(20.0, 0.8), rel=1e-12)
    assert companions.log_omega == pytest.approx(log_omega(20.0, 0.8))


@pytest.mark.parametrize("alpha", [0.6, 0.7, 0.9])
def test_lemma_residuals_shrink_with_t(alpha: float) -> None:
    rows = [lemma2_residuals(t, alpha) for t in (1e2, 1e3, 1e4)]
    r1 = [abs(r.r1) for r in rows]
    vu = [abs(r.vu_residual) for r in rows]
    assert r1[0] > r1[1] > r1[2]
    assert vu[0] > vu[1] > vu[2]
    assert abs(rows[-1].r2) < 1e-10
    assert abs(rows[-1].r3) < 1e-10
    assert all(r.r1 < 0 for r in rows)


def test_r1_leading_coefficient() -> None:
    # r1 ~ -2 alpha t^(alpha - 1)
    row = lemma2_residuals(1e4, 0.6)
    assert row.r1 * 1e4**0.4 == pytest.approx(-1.2, abs=0.2)
    assert abs(row.r1) < 0.05


def test_lemma_residuals_need_t_at_least_one() -> None:
    with pytest.raises(DomainError):
        lemma2_residuals(0.5, 0.8)


def test_r4_is_reported_as_finite_number() -> None:
    row = lemma2_residuals(1e3, 0.8)
    assert np.isfinite(row.r4)
    assert set(row.as_record()) == {"t", "alpha", "r1", "r2", "r3", "r4"}


def test_r4_grows_like_three_quarters_of_the_exponent() -> None:
    alpha = 0.7
    rows = [lemma2_residuals(t, alpha) for t in (1e3, 1e4)]
    assert rows[1].r4 < rows[0].r4 < 0.0
    exponent = 1e4**0.3 / 0.3
    assert rows[1].r4 / exponent == pytest.approx(-0.75, abs=0.1)


@pytest.mark.parametrize("alpha", [0.6, 0.8])
def test_constant_weight_factor_leaves_residuals_unchanged(alpha: float) -> None:
    plain = WeightFamily(alpha)
    scaled = WeightFamily(alpha, log_scale=7.0)
    a, b = lemma2_residuals(1e3, plain), lemma2_residuals(1e3, scaled)
    for name in ("r1", "r2", "r3", "r4", "vu_residual"):
        assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-12)

    a, b = weight_companions(20.0, plain), weight_companions(20.0, scaled)
    assert b.log_omega == pytest.approx(a.log_omega + 7.0, rel=1e-14)
    assert b.log_u - b.log_omega == pytest.approx(a.log_u - a.log_omega, rel=1e-12)
    assert b.log_v_squared - 2.0 * b.log_omega == pytest.approx(a.log_v_squared - 2.0 * a.log_omega, rel=1e-12)


def test_log_u_array_matches_pointwise_quadrature() -> None:
    times = np.array([0.5, 3.0, 10.0, 250.0])
    expected = [u_quadrature(t, 0.8).log_value for t in times]
    np.testing.assert_allclose(log_u_array(times, 0.8), expected, rtol=1e-10)
    with pytest.raises(DomainError):
        log_u_array(np.array([0.0, 1.0]), 0.8)
