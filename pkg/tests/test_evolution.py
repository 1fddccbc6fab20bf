"""Tests for evolution module."""

import numpy as np
import pytest
import scipy.linalg
from pydantic import ValidationError

from hamfin.errors import NumericalFailure, ParameterError
from hamfin.evolution import (
    EvolutionConfig,
    PayoffSpec,
    bs_closed_form,
    down_and_out_closed_form,
    evolve,
    price_double_knock_out,
    price_down_and_out,
    price_mg,
    price_vanilla,
    refinement_order,
    richardson_order,
    spatial_order,
)
from hamfin.operators.base import BSParams, GridSpec, MGParams, ValueField
from hamfin.operators.black_scholes import build_bs_hamiltonian

P = BSParams(r=0.05, sigma=0.2)


def _builder(grid: GridSpec):
    return build_bs_hamiltonian(grid, P)


def test_bs_closed_form_reference_value():
    """Test the textbook at-the-money call."""
    assert bs_closed_form(100.0, 100.0, 0.05, 0.2, 1.0) == pytest.approx(10.450583572, abs=1e-6)


def test_bs_closed_form_put_call_parity():
    """Test C - P = S - K e^{-rT}."""
    call = bs_closed_form(105.0, 100.0, 0.03, 0.25, 0.5, "call")
    put = bs_closed_form(105.0, 100.0, 0.03, 0.25, 0.5, "put")

    assert call - put == pytest.approx(105.0 - 100.0 * np.exp(-0.03 * 0.5), abs=1e-10)


def test_bs_closed_form_zero_volatility():
    """Test the deterministic limit."""
    expected = 100.0 - 90.0 * np.exp(-0.05)

    assert bs_closed_form(100.0, 90.0, 0.05, 0.0, 1.0) == pytest.approx(expected)


def test_evolution_config_rejects_nonpositive_maturity():
    """Test EvolutionConfig validation."""
    with pytest.raises(ValidationError):
        EvolutionConfig(T=0.0)


def test_evolve_discounts_constant_field():
    """Test exp(-tau H) c = e^{-r tau} c."""
    grid = GridSpec(x_min=-1.0, x_max=1.0, n_x=101)
    H = build_bs_hamiltonian(grid, P)

    def edges(tau):
        value = np.array([np.exp(-P.r * tau)])
        return value, value

    result = evolve(H, ValueField(np.ones(grid.n_x)), EvolutionConfig(T=1.0, n_steps=200), edges)

    assert result.values == pytest.approx(np.full(grid.n_x, np.exp(-P.r)), rel=1e-6)


def test_evolve_preserves_martingale_state():
    """Test that e^x is a fixed point of the evolution."""
    grid = GridSpec(x_min=-1.0, x_max=1.0, n_x=401)
    H = build_bs_hamiltonian(grid, P)
    state = ValueField.from_function(grid, np.exp)

    result = evolve(H, state, EvolutionConfig(T=1.0, n_steps=100))
    mask = grid.interior_mask(2)

    assert np.max(np.abs(result.values[mask] / state.values[mask] - 1.0)) < 1e-3


def test_evolve_dimension_mismatch():
    """Test that evolve rejects a terminal field of the wrong length."""
    H = build_bs_hamiltonian(GridSpec(x_min=-1.0, x_max=1.0, n_x=11), P)

    with pytest.raises(ParameterError, match="Dimension mismatch"):
        evolve(H, ValueField(np.ones(5)), EvolutionConfig(T=1.0))


def test_evolve_wraps_solver_breakdown(monkeypatch):
    """Test that a failing banded solve surfaces as NumericalFailure with its step."""

    def broken(*args, **kwargs):
        raise np.linalg.LinAlgError("singular matrix")

    monkeypatch.setattr(scipy.linalg, "solve_banded", broken)
    H = build_bs_hamiltonian(GridSpec(x_min=-1.0, x_max=1.0, n_x=11), P)

    with pytest.raises(NumericalFailure, match="step 0"):
        evolve(H, ValueField(np.ones(11)), EvolutionConfig(T=1.0, n_steps=4))


def test_vanilla_call_matches_closed_form():
    """Test the PDE call price against Black-Scholes."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=1025)
    cfg = EvolutionConfig(T=1.0, n_steps=400)
    result = price_vanilla(_builder, grid, PayoffSpec(kind="call"), cfg, P.r, [90.0, 100.0, 110.0])

    for spot, price in result.price_at.items():
        exact = bs_closed_form(spot, 100.0, P.r, P.sigma, 1.0)
        assert price == pytest.approx(exact, rel=1e-3)


def test_vanilla_put_with_implicit_euler():
    """Test the put price with the first-order scheme."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=513)
    cfg = EvolutionConfig(T=1.0, n_steps=1000, scheme="implicit-euler")
    result = price_vanilla(_builder, grid, PayoffSpec(kind="put"), cfg, P.r, [100.0])

    exact = bs_closed_form(100.0, 100.0, P.r, P.sigma, 1.0, "put")
    assert result.price_at[100.0] == pytest.approx(exact, rel=5e-3)


def test_down_and_out_matches_reflection_formula():
    """Test the barrier price against the reflection-principle oracle."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=1025)
    cfg = EvolutionConfig(T=1.0, n_steps=400)
    result = price_down_and_out(_builder, grid, 90.0, PayoffSpec(kind="call"), cfg, P.r, [100.0])

    exact = down_and_out_closed_form(100.0, 100.0, 90.0, P.r, P.sigma, 1.0)
    assert result.price_at[100.0] == pytest.approx(exact, rel=2e-3)
    assert result.grid.x_min == pytest.approx(np.log(90.0))
    assert result.diagnostics["lower_barrier_active"]


def test_down_and_out_knocked_spot_is_worthless():
    """Test that spots at or below the barrier price to zero."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=257)
    cfg = EvolutionConfig(T=1.0, n_steps=50)
    result = price_down_and_out(_builder, grid, 90.0, PayoffSpec(), cfg, P.r, [85.0, 90.0])

    assert result.price_at == {85.0: 0.0, 90.0: 0.0}


def test_down_and_out_barrier_below_grid_is_vanilla():
    """Test that a barrier under the grid never binds."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=257)
    cfg = EvolutionConfig(T=1.0, n_steps=50)
    barrier = price_down_and_out(_builder, grid, 1.0, PayoffSpec(), cfg, P.r, [100.0])
    vanilla = price_vanilla(_builder, grid, PayoffSpec(), cfg, P.r, [100.0])

    assert barrier.price_at == vanilla.price_at
    assert not barrier.diagnostics["lower_barrier_active"]


def test_down_and_out_rejects_barrier_above_grid():
    """Test barrier placement validation."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=65)
    cfg = EvolutionConfig(T=1.0, n_steps=10)

    with pytest.raises(ParameterError, match="outside the grid"):
        price_down_and_out(_builder, grid, 1e6, PayoffSpec(), cfg, P.r, [100.0])
    with pytest.raises(ParameterError, match="outside the grid"):
        price_down_and_out(_builder, grid, -5.0, PayoffSpec(), cfg, P.r, [100.0])


def test_double_knock_out_rejects_inverted_barriers():
    """Test corridor validation."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=65)
    cfg = EvolutionConfig(T=1.0, n_steps=10)

    with pytest.raises(ParameterError, match="lower < upper"):
        price_double_knock_out(_builder, grid, 120.0, 80.0, PayoffSpec(), cfg, P.r, [100.0])


def test_double_knock_out_is_cheaper_than_single_barrier():
    """Test 0 < double knock-out < down-and-out."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=513)
    cfg = EvolutionConfig(T=1.0, n_steps=200)
    payoff = PayoffSpec(kind="call")
    double = price_double_knock_out(_builder, grid, 80.0, 130.0, payoff, cfg, P.r, [100.0])
    single = price_down_and_out(_builder, grid, 80.0, payoff, cfg, P.r, [100.0])

    assert 0.0 < double.price_at[100.0] < single.price_at[100.0]
    assert double.diagnostics["upper_barrier_active"]


def test_double_knock_out_converges_at_second_order():
    """Test the spatial order on a smooth payoff that vanishes on both barriers."""
    lower, upper = 80.0, 125.0
    a, b = np.log(lower), np.log(upper)
    xs = np.linspace(a, b, 20001)
    payoff = PayoffSpec(
        kind="custom-table",
        table=[(float(x), float(np.sin(np.pi * (x - a) / (b - a)))) for x in xs],
    )
    spot = float(np.exp(0.5 * (a + b)))
    cfg = EvolutionConfig(T=0.5, n_steps=100)

    def price(n):
        grid = GridSpec(x_min=a - 0.5, x_max=b + 0.5, n_x=n)
        result = price_double_knock_out(_builder, grid, lower, upper, payoff, cfg, P.r, [spot])
        return result.price_at[spot]

    reference = price(2049)
    sizes = [65, 129, 257]
    errors = [abs(price(n) - reference) for n in sizes]
    spacings = [(b - a) / (n - 1) for n in sizes]

    assert 1.8 <= refinement_order(spacings, errors) <= 2.2


def test_mg_price_reduces_to_black_scholes_without_vol_of_vol():
    """Test that zeta = lambda = mu = 0 freezes the variance at V0."""
    p = MGParams(r=0.05, lambda_=0.0, mu=0.0, zeta=0.0, rho=0.0, alpha=1.0)
    base = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=257)
    grid = GridSpec(
        x_min=base.x_min,
        x_max=base.x_max,
        n_x=257,
        y_min=np.log(0.01),
        y_max=np.log(0.16),
        n_y=5,
    )
    cfg = EvolutionConfig(T=1.0, n_steps=100)
    result = price_mg(grid, p, PayoffSpec(kind="call"), cfg, [100.0], V0=0.04)

    exact = bs_closed_form(100.0, 100.0, 0.05, 0.2, 1.0)
    assert result.price_at[100.0] == pytest.approx(exact, rel=2e-3)


def test_mg_price_rejects_variance_outside_grid():
    """Test V0 placement validation."""
    p = MGParams(r=0.05, lambda_=0.0, mu=0.0, zeta=0.1, rho=0.0, alpha=1.0)
    grid = GridSpec(x_min=3.0, x_max=6.0, n_x=11, y_min=-4.0, y_max=-2.0, n_y=5)

    with pytest.raises(ParameterError, match="Variance"):
        price_mg(grid, p, PayoffSpec(), EvolutionConfig(T=1.0), [100.0], V0=0.5)


def test_payoff_table_must_cover_grid():
    """Test custom-table coverage."""
    payoff = PayoffSpec(kind="custom-table", table=[(0.0, 1.0), (1.0, 2.0)])

    with pytest.raises(ParameterError, match="covers"):
        payoff.terminal(GridSpec(x_min=-1.0, x_max=1.0, n_x=11))


def test_payoff_table_must_be_sorted():
    """Test custom-table ordering."""
    with pytest.raises(ValidationError, match="sorted"):
        PayoffSpec(kind="custom-table", table=[(1.0, 1.0), (0.0, 2.0)])


def test_refinement_order_on_synthetic_errors():
    """Test the least-squares slope."""
    h = [0.1, 0.05, 0.025]

    assert refinement_order(h, [x**2 for x in h]) == pytest.approx(2.0)
    assert refinement_order(h[:2], [0.01, 0.0025]) is None
    assert refinement_order(h, [0.01, 0.0, 0.001]) is None


def test_fine_grid_call_put_and_barrier_prices():
    """Test call, parity and a down-and-out at B = 80 on 2049 nodes with 512 steps."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=2049)
    cfg = EvolutionConfig(T=1.0, n_steps=512)
    call = price_vanilla(_builder, grid, PayoffSpec(kind="call"), cfg, P.r, [100.0])
    put = price_vanilla(_builder, grid, PayoffSpec(kind="put"), cfg, P.r, [100.0])
    barrier = price_down_and_out(_builder, grid, 80.0, PayoffSpec(kind="call"), cfg, P.r, [100.0])

    assert call.price_at[100.0] == pytest.approx(10.4506, rel=1e-3)
    parity = 100.0 - 100.0 * np.exp(-P.r)
    assert call.price_at[100.0] - put.price_at[100.0] == pytest.approx(parity, rel=5e-4)
    exact = down_and_out_closed_form(100.0, 100.0, 80.0, P.r, P.sigma, 1.0)
    assert barrier.price_at[100.0] == pytest.approx(exact, rel=3e-3)


def test_put_call_parity_on_evolved_fields():
    """Test C - P = S - K e^{-rT} node by node."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=513)
    cfg = EvolutionConfig(T=1.0, n_steps=200)
    call = price_vanilla(_builder, grid, PayoffSpec(kind="call"), cfg, P.r, [100.0])
    put = price_vanilla(_builder, grid, PayoffSpec(kind="put"), cfg, P.r, [100.0])

    S = np.exp(grid.x)
    inside = (S >= 50.0) & (S <= 200.0)
    gap = call.field.values - put.field.values - (S - 100.0 * np.exp(-P.r))
    assert np.max(np.abs(gap[inside]) / S[inside]) <= 5e-4


def test_evolution_is_identity_as_maturity_vanishes():
    """Test exp(-tau H) g -> g for tau -> 0 on a smooth field."""
    grid = GridSpec(x_min=-3.0, x_max=3.0, n_x=301)
    H = build_bs_hamiltonian(grid, P)
    terminal = ValueField.from_function(grid, lambda x: np.exp(-(x**2)))

    result = evolve(H, terminal, EvolutionConfig(T=1e-8, n_steps=4))

    assert np.max(np.abs(result.values - terminal.values)) <= 1e-6


def test_call_price_increases_with_spot():
    """Test that the evolved call is monotone in S."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=513)
    cfg = EvolutionConfig(T=1.0, n_steps=200)
    result = price_vanilla(_builder, grid, PayoffSpec(kind="call"), cfg, P.r, [100.0])

    assert np.all(np.diff(result.field.values) >= -1e-10)


def test_double_knock_out_monotone_in_barriers():
    """Test that widening either barrier raises the price."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=513)
    cfg = EvolutionConfig(T=1.0, n_steps=200)
    payoff = PayoffSpec(kind="call")

    def price(lower, upper):
        result = price_double_knock_out(_builder, grid, lower, upper, payoff, cfg, P.r, [100.0])
        return result.price_at[100.0]

    by_lower = [price(lower, 140.0) for lower in (90.0, 80.0, 70.0)]
    by_upper = [price(80.0, upper) for upper in (120.0, 140.0, 160.0)]

    assert by_lower[0] < by_lower[1] < by_lower[2]
    assert by_upper[0] < by_upper[1] < by_upper[2]


def test_wide_corridor_recovers_vanilla():
    """Test that barriers far from the spot leave the call price unchanged."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=1025)
    cfg = EvolutionConfig(T=1.0, n_steps=400)
    payoff = PayoffSpec(kind="call")
    wide = price_double_knock_out(_builder, grid, 25.0, 450.0, payoff, cfg, P.r, [100.0])

    exact = bs_closed_form(100.0, 100.0, P.r, P.sigma, 1.0)
    assert wide.diagnostics["lower_barrier_active"]
    assert wide.diagnostics["upper_barrier_active"]
    assert wide.price_at[100.0] == pytest.approx(exact, rel=1e-3)


def test_richardson_order_from_three_values():
    """Test the observed order of geometrically shrinking differences."""
    assert richardson_order(1.0, 0.5, 0.25) == pytest.approx(1.0)
    assert richardson_order(1.75, 1.0, 0.8125) == pytest.approx(2.0)
    assert richardson_order(1.0, 1.0, 1.0) is None


def test_spatial_order_of_vanilla_call():
    """Test the x-order from grids with 4h, 2h and h spacing."""
    grid = GridSpec.pricing(S0=100.0, sigma=0.2, T=1.0, n_x=513)
    cfg = EvolutionConfig(T=1.0, n_steps=800)
    payoff = PayoffSpec(kind="call")

    def pricer(g):
        return price_vanilla(_builder, g, payoff, cfg, P.r, [100.0])

    fine = pricer(grid).price_at[100.0]

    assert 1.5 <= spatial_order(pricer, grid, 100.0, fine) <= 2.5
    assert spatial_order(pricer, GridSpec.pricing(100.0, 0.2, 1.0, n_x=514), 100.0, fine) is None
