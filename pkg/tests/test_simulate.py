"""Tests for simulate module."""

import numpy as np
import pytest
from pydantic import ValidationError

from hamfin.errors import ParameterError
from hamfin.evolution import PayoffSpec, bs_closed_form
from hamfin.operators.base import MGParams
from hamfin.simulate import (
    BLOCK_SIZE,
    SDEParams,
    correlation_sweep,
    martingale_test,
    mc_price,
    simulate,
    simulate_async,
)


def _gbm(phi: float = 0.05, sigma: float = 0.2, exact: bool = True) -> SDEParams:
    return SDEParams(model="gbm", phi=phi, S0=100.0, sigma=sigma, exact=exact)


def _mg(rho: float = -0.5, **overrides) -> SDEParams:
    values = {"r": 0.05, "lambda": 0.08, "mu": -2.0, "zeta": 0.3, "rho": rho, "alpha": 0.5}
    values.update(overrides)
    return SDEParams(model="mg", phi=0.05, S0=100.0, V0=0.04, mg=MGParams(**values))


def test_sde_params_need_model_inputs():
    """Test that each model asks for its own parameters."""
    with pytest.raises(ValidationError, match="sigma"):
        SDEParams(model="gbm", phi=0.05, S0=100.0)
    with pytest.raises(ValidationError, match="V0"):
        SDEParams(model="mg", phi=0.05, S0=100.0)


async def test_zero_volatility_is_deterministic():
    """Test S_T = S0 e^{phi T} without noise."""
    ensemble = await simulate_async(_gbm(sigma=0.0), T=1.0, n_steps=10, n_paths=100, seed=1)

    assert np.all(ensemble.terminal_S == 100.0 * np.exp(0.05))
    stat = martingale_test(ensemble, r=0.05)
    assert stat.std_error == 0.0
    assert stat.z_score == 0.0
    assert not stat.expected_fail


async def test_ensemble_independent_of_worker_count():
    """Test bit-identical results for one and four workers."""
    params = _mg()
    single = await simulate_async(params, T=1.0, n_steps=20, n_paths=10_000, seed=7, workers=1)
    pooled = await simulate_async(params, T=1.0, n_steps=20, n_paths=10_000, seed=7, workers=4)

    assert np.array_equal(single.terminal_S, pooled.terminal_S)
    assert np.array_equal(single.terminal_V, pooled.terminal_V)
    assert single.realized_noise_correlation == pooled.realized_noise_correlation


async def test_leading_block_shared_across_path_counts():
    """Test that block b's stream does not depend on the ensemble size."""
    small = await simulate_async(_gbm(), T=1.0, n_steps=5, n_paths=5_000, seed=3)
    large = await simulate_async(_gbm(), T=1.0, n_steps=5, n_paths=10_000, seed=3)

    assert np.array_equal(small.terminal_S[:BLOCK_SIZE], large.terminal_S[:BLOCK_SIZE])


async def test_seed_changes_ensemble():
    """Test that different seeds give different paths."""
    a = await simulate_async(_gbm(), T=1.0, n_steps=1, n_paths=1_000, seed=1)
    b = await simulate_async(_gbm(), T=1.0, n_steps=1, n_paths=1_000, seed=2)

    assert not np.array_equal(a.terminal_S, b.terminal_S)


@pytest.mark.parametrize("rho", [0.0, -0.5, 0.7, 0.8])
async def test_realized_noise_correlation(rho):
    """Test the Pearson correlation of the two Wiener increments."""
    ensemble = await simulate_async(_mg(rho), T=1.0, n_steps=50, n_paths=20_000, seed=11)

    assert ensemble.realized_noise_correlation == pytest.approx(rho, abs=0.02)
    assert not ensemble.stability_warning


async def test_risk_neutral_gbm_is_martingale():
    """Test |z| small when phi = r."""
    ensemble = await simulate_async(_gbm(), T=1.0, n_steps=1, n_paths=40_000, seed=5)
    stat = martingale_test(ensemble, r=0.05)

    assert abs(stat.z_score) <= 4.0
    assert not stat.expected_fail
    assert stat.n_paths == 40_000


async def test_risk_neutral_gbm_passes_across_seeds():
    """Test |z| <= 3 on at least 19 of 20 seeds at a million paths."""
    passed = 0
    for seed in range(20):
        ensemble = await simulate_async(_gbm(), T=1.0, n_steps=1, n_paths=1_000_000, seed=seed)
        passed += abs(martingale_test(ensemble, r=0.05).z_score) <= 3.0

    assert passed >= 19


async def test_euler_gbm_is_martingale():
    """Test the non-exact stepping scheme."""
    ensemble = await simulate_async(
        _gbm(exact=False), T=1.0, n_steps=50, n_paths=20_000, seed=9
    )

    assert abs(martingale_test(ensemble, r=0.05).z_score) <= 4.0


async def test_real_world_drift_is_flagged():
    """Test that phi != r fails the martingale test and is marked expected."""
    ensemble = await simulate_async(_gbm(phi=0.10), T=1.0, n_steps=1, n_paths=20_000, seed=5)
    stat = martingale_test(ensemble, r=0.05)

    assert stat.expected_fail
    assert stat.z_score > 10.0
    assert "differs" in stat.notes[0]


async def test_mc_price_matches_closed_form():
    """Test the Monte Carlo call against Black-Scholes."""
    ensemble = await simulate_async(_gbm(), T=1.0, n_steps=1, n_paths=100_000, seed=21)
    price, se = mc_price(ensemble, PayoffSpec(kind="call", strike=100.0), r=0.05)

    exact = bs_closed_form(100.0, 100.0, 0.05, 0.2, 1.0)
    assert se > 0.0
    assert abs(price - exact) <= 4.0 * se


async def test_zero_strike_call_prices_the_spot():
    """Test that a call struck at zero is worth S0."""
    ensemble = await simulate_async(_gbm(), T=1.0, n_steps=1, n_paths=20_000, seed=4)
    price, se = mc_price(ensemble, PayoffSpec(kind="call", strike=0.0), r=0.05)

    assert abs(price - 100.0) <= 4.0 * se


async def test_floor_hits_raise_stability_warning():
    """Test the variance floor budget on a coarse, volatile configuration."""
    params = _mg(rho=0.0, **{"lambda": 0.0, "mu": -1.0, "zeta": 1.0})
    params = params.model_copy(update={"V0": 0.01})
    ensemble = await simulate_async(params, T=1.0, n_steps=10, n_paths=2_000, seed=2)

    assert ensemble.floor_hit_fraction > 0.01
    assert ensemble.stability_warning
    assert np.all(ensemble.terminal_V >= 0.0)
    assert "variance floor budget exceeded" in martingale_test(ensemble, r=0.05).notes


async def test_negative_alpha_survives_variance_floor():
    """Test that floored paths stay finite when the variance exponent is negative."""
    params = _mg(rho=0.0, **{"lambda": 0.0, "mu": -1.0, "zeta": 1.0, "alpha": -0.5})
    params = params.model_copy(update={"V0": 0.01})
    ensemble = await simulate_async(params, T=1.0, n_steps=10, n_paths=2_000, seed=2)

    assert ensemble.floor_hit_fraction > 0.0
    assert np.all(np.isfinite(ensemble.terminal_S))
    assert np.all(np.isfinite(ensemble.terminal_V))


async def test_summary_and_frame():
    """Test the JSON summary and the per-path table."""
    gbm = await simulate_async(_gbm(), T=1.0, n_steps=2, n_paths=10, seed=1)
    mg = await simulate_async(_mg(), T=1.0, n_steps=2, n_paths=10, seed=1)

    assert "mean_V_T" not in gbm.summary()
    assert list(gbm.to_frame().columns) == ["path", "S_T"]
    assert mg.summary()["n_paths"] == 10
    assert list(mg.to_frame().columns) == ["path", "S_T", "V_T"]
    assert mg.summary()["dt"] == pytest.approx(0.5)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"T": 0.0, "n_steps": 1, "n_paths": 1},
        {"T": 1.0, "n_steps": 0, "n_paths": 1},
        {"T": 1.0, "n_steps": 1, "n_paths": 0},
        {"T": 1.0, "n_steps": 1, "n_paths": 1, "workers": 0},
    ],
)
async def test_simulate_rejects_bad_sizes(kwargs):
    """Test argument validation."""
    with pytest.raises(ParameterError):
        await simulate_async(_gbm(), seed=1, **kwargs)


def test_correlation_sweep_frame():
    """Test one row per configured rho."""
    frame = correlation_sweep(_mg(), [-0.5, 0.0, 0.5], T=1.0, n_steps=20, n_paths=4_096, seed=3)

    assert list(frame.columns) == ["rho_in", "rho_realized"]
    assert frame["rho_in"].tolist() == [-0.5, 0.0, 0.5]
    assert np.allclose(frame["rho_realized"], frame["rho_in"], atol=0.05)


def test_correlation_sweep_needs_mg():
    """Test that a gbm simulation is refused."""
    with pytest.raises(ParameterError, match="mg"):
        correlation_sweep(_gbm(), [0.0], T=1.0, n_steps=1, n_paths=10, seed=1)


def test_blocking_wrapper_matches_async():
    """Test simulate against a second blocking run with the same seed."""
    first = simulate(_gbm(), T=1.0, n_steps=3, n_paths=500, seed=8, workers=2)
    second = simulate(_gbm(), T=1.0, n_steps=3, n_paths=500, seed=8, workers=3)

    assert np.array_equal(first.terminal_S, second.terminal_S)
