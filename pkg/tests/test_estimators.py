from __future__ import annotations

import math

import numpy as np
import pytest

from src.domain.models import (
    DegeneratePathError,
    InvalidArgumentError,
    OuParams,
    SamplePath,
    Scheme,
    SimGrid,
    UnsupportedSchemeError,
)
from src.ou.estimators import (
    burn_in_index,
    derived_estimates,
    estimate_trace,
    martingale_identity_residual,
    theta_hat_trace,
    theta_tilde_trace,
)
from src.ou.process import simulate_path


def _noiseless_path(kappa: float, t_max: float = 20.0, dt: float = 0.01) -> SamplePath:
    grid = SimGrid(t_max, dt)
    values = np.cumprod(np.concatenate(([1.0], np.full(grid.n_steps, 1.0 + kappa * dt))))
    return SamplePath(grid=grid, values=values, driving_increments=np.empty(0), scheme=Scheme.OBSERVED)


@pytest.mark.parametrize("kappa", [-2.0, -0.1])
def test_noiseless_exponential_path_is_recovered_exactly(kappa: float) -> None:
    trace = estimate_trace(_noiseless_path(kappa), alpha=0.8)
    np.testing.assert_allclose(trace.theta_hat, kappa, rtol=1e-12)
    np.testing.assert_allclose(trace.theta_tilde, kappa, rtol=1e-12)
    np.testing.assert_allclose(trace.theta_bar, kappa, rtol=1e-12)


def test_bar_source_hat_averages_least_squares_estimator() -> None:
    path = simulate_path(OuParams(-1.0, 1.0), SimGrid(30.0, 0.01), seed=4)
    trace = estimate_trace(path, alpha=0.8, bar_source="hat")
    k = trace.times.size - 1
    head = trace.theta_hat[0] * trace.burn_in
    expected = (head + math.fsum(trace.theta_hat[:k] * trace.dt)) / trace.horizon
    assert trace.theta_bar[-1] == pytest.approx(expected, rel=1e-12)


def test_sigma_zero_path_is_degenerate() -> None:
    path = simulate_path(OuParams(-1.0, 0.0), SimGrid(10.0, 0.01), seed=1)
    with pytest.raises(DegeneratePathError):
        theta_hat_trace(path)
    with pytest.raises(DegeneratePathError):
        theta_tilde_trace(path, 0.8)


def test_burn_in_must_fit_inside_the_path() -> None:
    assert burn_in_index(0.01, 1000, 1.0) == 100
    with pytest.raises(InvalidArgumentError):
        burn_in_index(0.01, 1000, 0.001)
    with pytest.raises(InvalidArgumentError):
        burn_in_index(0.01, 1000, 10.0)


def test_checkpoints_outside_the_trace_are_rejected() -> None:
    path = simulate_path(OuParams(-1.0, 1.0), SimGrid(5.0, 0.01), seed=3)
    with pytest.raises(InvalidArgumentError):
        theta_hat_trace(path, checkpoints=[0.5, 2.0])
    trace = theta_hat_trace(path, checkpoints=[2.0, 5.0])
    np.testing.assert_allclose(trace.checkpoints, [2.0, 5.0])


def test_theta_hat_converges_on_long_path() -> None:
    path = simulate_path(OuParams(-1.0, 1.0), SimGrid(2000.0, 0.01), seed=21)
    trace = estimate_trace(path, alpha=0.8)
    # sd of theta_hat at T=2000 is about sqrt(2/2000) = 0.03
    assert trace.theta_hat[-1] == pytest.approx(-1.0, abs=0.15)
    assert trace.theta_tilde[-1] == pytest.approx(-1.0, abs=0.3)


def test_derived_estimates_keys_and_signs() -> None:
    path = simulate_path(OuParams(-1.0, 1.0), SimGrid(200.0, 0.01), seed=8)
    derived = derived_estimates(estimate_trace(path, alpha=0.8))
    record = derived.as_record()
    assert list(record) == ["sigma_hat2", "theta_check", "sigma_tilde2", "theta_breve"]
    assert all(v >= 0 and math.isfinite(v) for v in record.values())


def test_derived_estimates_need_horizon_after_burn_in() -> None:
    path = simulate_path(OuParams(-1.0, 1.0), SimGrid(10.0, 0.01), seed=8)
    trace = estimate_trace(path, alpha=0.8)
    with pytest.raises(InvalidArgumentError):
        derived_estimates(trace, horizon=1.0)


def test_martingale_identity_is_exact_on_euler_paths() -> None:
    params = OuParams(-1.0, 1.0)
    path = simulate_path(params, SimGrid(50.0, 0.01), seed=12, scheme=Scheme.EULER)
    trace = estimate_trace(path, alpha=0.8)
    residual = martingale_identity_residual(path, trace, params)
    assert residual.sup_ls < 1e-9
    assert residual.sup_weighted < 1e-9


def test_martingale_identity_residual_shrinks_with_dt_on_coupled_paths() -> None:
    params = OuParams(-1.0, 1.0)
    sups = []
    for dt in (0.04, 0.01):
        path = simulate_path(params, SimGrid(20.0, dt), seed=5, scheme=Scheme.COUPLED)
        trace = estimate_trace(path, alpha=0.8)
        sups.append(martingale_identity_residual(path, trace, params).sup_ls)
    assert sups[1] < sups[0]


def test_martingale_identity_rejects_exact_paths() -> None:
    params = OuParams(-1.0, 1.0)
    path = simulate_path(params, SimGrid(5.0, 0.01), seed=12)
    trace = estimate_trace(path, alpha=0.8)
    with pytest.raises(UnsupportedSchemeError):
        martingale_identity_residual(path, trace, params)
