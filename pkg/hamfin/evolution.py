"""Backward evolution C(tau) = exp(-tau H) g and option pricing."""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu
from scipy.stats import norm

from hamfin.errors import NumericalFailure, ParameterError
from hamfin.operators.base import (
    GridSpec,
    HamiltonianBuilder,
    MGParams,
    OperatorMatrix,
    ValueField,
    banded_form,
)
from hamfin.operators.merton_garman import build_mg_hamiltonian

logger = logging.getLogger(__name__)

BoundaryFn = Callable[[float], Tuple[np.ndarray, np.ndarray]]


class PayoffSpec(BaseModel):
    """Terminal payoff g(x) on the log-price axis."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False, extra="forbid")

    kind: Literal["call", "put", "custom-table"] = "call"
    strike: float = Field(default=100.0, gt=0)
    table: Optional[List[Tuple[float, float]]] = None

    @model_validator(mode="after")
    def _check_table(self) -> "PayoffSpec":
        if self.kind == "custom-table":
            if not self.table or len(self.table) < 2:
                raise ValueError("custom-table payoff needs at least two (x, value) rows")
            xs = [row[0] for row in self.table]
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("custom-table payoff rows must be sorted by x")
        return self

    def terminal(self, grid: GridSpec) -> ValueField:
        """Payoff sampled on the grid nodes (2D grids repeat it along y)."""
        X, _ = grid.mesh()
        if self.kind == "call":
            values = np.maximum(np.exp(X) - self.strike, 0.0)
        elif self.kind == "put":
            values = np.maximum(self.strike - np.exp(X), 0.0)
        else:
            xs, vs = np.array(self.table, dtype=float).T
            if xs[0] > grid.x_min or xs[-1] < grid.x_max:
                raise ParameterError(
                    f"Payoff table covers [{xs[0]}, {xs[-1]}], grid needs "
                    f"[{grid.x_min}, {grid.x_max}]"
                )
            values = np.interp(X, xs, vs)
        return ValueField(values, label=f"{self.kind} payoff K={self.strike:g}")

    def boundary(self, grid: GridSpec, r: float) -> BoundaryFn:
        """Asymptotic edge values at time-to-maturity tau."""
        n_edge = grid.n_y if grid.is_2d else 1
        s_lo, s_hi = np.exp(grid.x_min), np.exp(grid.x_max)
        terminal = self.terminal(grid).values
        g_lo, g_hi = terminal[:n_edge], terminal[-n_edge:]

        def edges(tau: float) -> Tuple[np.ndarray, np.ndarray]:
            discount = np.exp(-r * tau)
            if self.kind == "call":
                lo, hi = 0.0, s_hi - self.strike * discount
            elif self.kind == "put":
                lo, hi = self.strike * discount - s_lo, 0.0
            else:
                return g_lo * discount, g_hi * discount
            return np.full(n_edge, lo), np.full(n_edge, hi)

        return edges


class EvolutionConfig(BaseModel):
    """Time discretization of exp(-T H)."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False, extra="forbid")

    T: float = Field(gt=0)
    n_steps: int = Field(default=512, ge=1)
    scheme: Literal["crank-nicolson", "implicit-euler"] = "crank-nicolson"
    rannacher_steps: int = Field(default=2, ge=0)


@dataclass
class PricingResult:
    """Evolved option values and prices at requested spots."""

    field: ValueField
    grid: GridSpec
    price_at: Dict[float, float] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)


def _step_schedule(cfg: EvolutionConfig) -> List[Tuple[float, float]]:
    """(dt, theta) per sub-step; theta=1 is implicit Euler, 0.5 Crank-Nicolson."""
    dt = cfg.T / cfg.n_steps
    if cfg.scheme == "implicit-euler":
        return [(dt, 1.0)] * cfg.n_steps
    smoothed = min(cfg.rannacher_steps, cfg.n_steps)
    return [(0.5 * dt, 1.0)] * (2 * smoothed) + [(dt, 0.5)] * (cfg.n_steps - smoothed)


def _edge_indices(grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    if not grid.is_2d:
        return np.array([0]), np.array([grid.n_x - 1])
    lo = np.arange(grid.n_y)
    return lo, (grid.n_x - 1) * grid.n_y + lo


class _ThetaSolver:
    """Factorized (I + theta dt H) with Dirichlet rows on the x edges."""

    def __init__(self, H: OperatorMatrix, dt: float, theta: float, dirichlet: np.ndarray):
        n = H.n
        eye = sp.identity(n, format="csr")
        keep = np.ones(n)
        keep[dirichlet] = 0.0
        mask = sp.diags(keep)
        self.lhs = (eye + theta * dt * (mask @ H.matrix)).tocsr()
        self.rhs = (mask @ (eye - (1.0 - theta) * dt * H.matrix)).tocsr()
        self.lhs.eliminate_zeros()
        if H.grid.is_2d:
            self._lu = splu(self.lhs.tocsc())
            self._banded = None
        else:
            coo = self.lhs.tocoo()
            b = int(np.max(np.abs(coo.row - coo.col)))
            self._banded = banded_form(self.lhs, b)
            self._lu = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is not None:
            return self._lu.solve(rhs)
        b, ab = self._banded
        return scipy.linalg.solve_banded((b, b), ab, rhs, check_finite=False)


def evolve(
    H: OperatorMatrix,
    terminal: ValueField,
    cfg: EvolutionConfig,
    boundary: Optional[BoundaryFn] = None,
) -> ValueField:
    """Apply exp(-T H) to a terminal field by implicit time stepping.

    Each step solves (I + theta dt H) C_next = (I - (1 - theta) dt H) C on the
    interior while the x-edge nodes take Dirichlet values.

    Args:
        H: Operator to evolve with
        terminal: Field at tau = 0 (maturity)
        cfg: Maturity, step count and scheme
        boundary: Edge values as a function of tau; held at their terminal
            values when omitted

    Returns:
        Field at tau = T

    Raises:
        ParameterError: On a dimension mismatch
        NumericalFailure: If a linear solve breaks down or produces non-finite values
    """
    if len(terminal) != H.n:
        raise ParameterError(f"Dimension mismatch: operator {H.n}, field {len(terminal)}")
    lo, hi = _edge_indices(H.grid)
    dirichlet = np.concatenate([lo, hi])
    if boundary is None:
        held_lo, held_hi = terminal.values[lo].copy(), terminal.values[hi].copy()

        def boundary(tau: float) -> Tuple[np.ndarray, np.ndarray]:
            return held_lo, held_hi

    solvers: Dict[Tuple[float, float], _ThetaSolver] = {}
    values = terminal.values.copy()
    tau = 0.0
    for step, (dt, theta) in enumerate(_step_schedule(cfg)):
        key = (dt, theta)
        try:
            if key not in solvers:
                solvers[key] = _ThetaSolver(H, dt, theta, dirichlet)
            solver = solvers[key]
            tau += dt
            rhs = solver.rhs @ values
            rhs[lo], rhs[hi] = boundary(tau)
            values = solver.solve(rhs)
        except (np.linalg.LinAlgError, RuntimeError, ValueError) as e:
            raise NumericalFailure(f"Linear solve failed: {e}", step=step) from e
        if not np.all(np.isfinite(values)):
            raise NumericalFailure("Non-finite values in evolution", step=step)

    logger.debug(f"Evolved {terminal.label or 'field'} over T={cfg.T} in {len(solvers)} scheme(s)")
    return ValueField(values, label=f"exp(-T H) {terminal.label}".strip())


def bs_closed_form(
    S0: float, K: float, r: float, sigma: float, T: float, kind: str = "call"
) -> float:
    """Black-Scholes price of a European call or put."""
    forward_strike = K * np.exp(-r * T)
    vol = sigma * np.sqrt(T)
    if vol == 0.0:
        intrinsic = S0 - forward_strike if kind == "call" else forward_strike - S0
        return float(max(intrinsic, 0.0))
    d1 = (np.log(S0 / K) + (r + 0.5 * sigma**2) * T) / vol
    d2 = d1 - vol
    if kind == "call":
        return float(S0 * norm.cdf(d1) - forward_strike * norm.cdf(d2))
    if kind == "put":
        return float(forward_strike * norm.cdf(-d2) - S0 * norm.cdf(-d1))
    raise ParameterError(f"Unknown option kind '{kind}'")


def down_and_out_closed_form(
    S0: float, K: float, B: float, r: float, sigma: float, T: float
) -> float:
    """Reflection-principle price of a down-and-out call with B <= K, no rebate."""
    if B > K:
        raise ParameterError(f"Closed form needs barrier {B} <= strike {K}")
    if S0 <= B:
        return 0.0
    image = (B / S0) ** (2.0 * r / sigma**2 - 1.0)
    return bs_closed_form(S0, K, r, sigma, T) - image * bs_closed_form(B**2 / S0, K, r, sigma, T)


def refinement_order(h: Sequence[float], errors: Sequence[float]) -> Optional[float]:
    """Least-squares slope of log(error) against log(h)."""
    h = np.asarray(h, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if h.size < 3 or np.any(errors <= 0.0) or not np.all(np.isfinite(errors)):
        return None
    slope, _ = np.polyfit(np.log(h), np.log(errors), 1)
    return float(slope)


def richardson_order(
    coarse: float, medium: float, fine: float, ratio: float = 2.0
) -> Optional[float]:
    """Observed order from three values on grids refined by ``ratio`` each time."""
    d_coarse, d_fine = abs(coarse - medium), abs(medium - fine)
    if d_coarse == 0.0 or d_fine == 0.0 or not np.isfinite(d_coarse / d_fine):
        return None
    return float(np.log(d_coarse / d_fine) / np.log(ratio))


def spatial_order(
    pricer: Callable[[GridSpec], "PricingResult"],
    grid: GridSpec,
    spot: float,
    fine_price: float,
) -> Optional[float]:
    """Observed x-order of the price at ``spot`` from grids with 4h, 2h and h spacing.

    The time stepping is unchanged across the three solves, so its error
    cancels in the differences. Returns None when n_x - 1 is not divisible
    by 4 or the coarsest grid would have fewer than 5 nodes.
    """
    if (grid.n_x - 1) % 4 or (grid.n_x - 1) // 4 < 4:
        return None
    coarse, medium = (
        pricer(grid.model_copy(update={"n_x": (grid.n_x - 1) // f + 1})).price_at[spot]
        for f in (4, 2)
    )
    order = richardson_order(coarse, medium, fine_price)
    logger.debug(f"Prices at S={spot:g}: {coarse:.8g}, {medium:.8g}, {fine_price:.8g}")
    return order


def _interpolate(grid: GridSpec, values: np.ndarray, spots: Sequence[float]) -> Dict[float, float]:
    prices = {}
    for spot in spots:
        x = np.log(spot)
        if not grid.x_min <= x <= grid.x_max:
            raise ParameterError(f"Spot {spot} lies outside the grid")
        prices[float(spot)] = float(np.interp(x, grid.x, values))
    return prices


def _knock_out_price(
    builder: HamiltonianBuilder,
    grid: GridSpec,
    payoff: PayoffSpec,
    cfg: EvolutionConfig,
    r: float,
    spots: Sequence[float],
    lo_barrier: Optional[float],
    hi_barrier: Optional[float],
) -> PricingResult:
    x_lo = np.log(lo_barrier) if lo_barrier else -np.inf
    x_hi = np.log(hi_barrier) if hi_barrier else np.inf
    lo_active, hi_active = x_lo > grid.x_min, x_hi < grid.x_max
    barrier_grid = grid.with_x_range(
        float(x_lo) if lo_active else grid.x_min, float(x_hi) if hi_active else grid.x_max
    )
    H = builder(barrier_grid)
    asymptotic = payoff.boundary(barrier_grid, r)

    def edges(tau: float) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = asymptotic(tau)
        return (np.zeros_like(lo) if lo_active else lo, np.zeros_like(hi) if hi_active else hi)

    result = evolve(H, payoff.terminal(barrier_grid), cfg, boundary=edges)
    values = result.values
    if lo_active:
        values[0] = 0.0
    if hi_active:
        values[-1] = 0.0

    price_at = {}
    for spot in spots:
        knocked = (lo_active and spot <= lo_barrier) or (hi_active and spot >= hi_barrier)
        if knocked:
            price_at[float(spot)] = 0.0
        else:
            price_at.update(_interpolate(barrier_grid, values, [spot]))
    return PricingResult(
        field=ValueField(values, label=result.label),
        grid=barrier_grid,
        price_at=price_at,
        diagnostics={
            "scheme": cfg.scheme,
            "steps": cfg.n_steps,
            "rannacher_steps": cfg.rannacher_steps if cfg.scheme == "crank-nicolson" else 0,
            "grid": barrier_grid.model_dump(),
            "lower_barrier_active": bool(lo_active),
            "upper_barrier_active": bool(hi_active),
        },
    )


def price_vanilla(
    builder: HamiltonianBuilder,
    grid: GridSpec,
    payoff: PayoffSpec,
    cfg: EvolutionConfig,
    r: float,
    spots: Sequence[float],
) -> PricingResult:
    """Price a plain payoff with asymptotic Dirichlet edges."""
    return _knock_out_price(builder, grid, payoff, cfg, r, spots, None, None)


def price_down_and_out(
    builder: HamiltonianBuilder,
    grid: GridSpec,
    barrier: float,
    payoff: PayoffSpec,
    cfg: EvolutionConfig,
    r: float,
    spots: Sequence[float],
) -> PricingResult:
    """Price a down-and-out option as an infinite potential wall at ln B.

    The grid is rebuilt with its lower edge on the barrier so the zero
    condition sits exactly on a node. A barrier below the grid never binds.

    Raises:
        ParameterError: If the barrier is not positive or lies above the grid
    """
    if barrier <= 0.0 or np.log(barrier) >= grid.x_max:
        raise ParameterError(f"Barrier {barrier} lies outside the grid range")
    return _knock_out_price(builder, grid, payoff, cfg, r, spots, barrier, None)


def price_double_knock_out(
    builder: HamiltonianBuilder,
    grid: GridSpec,
    lower: float,
    upper: float,
    payoff: PayoffSpec,
    cfg: EvolutionConfig,
    r: float,
    spots: Sequence[float],
) -> PricingResult:
    """Price an option knocked out below ``lower`` or above ``upper``.

    Raises:
        ParameterError: If the barriers are inverted or not positive
    """
    if lower <= 0.0 or upper <= lower:
        raise ParameterError(f"Barriers must satisfy 0 < lower < upper, got {lower}, {upper}")
    if np.log(lower) >= grid.x_max or np.log(upper) <= grid.x_min:
        raise ParameterError("Barrier corridor does not intersect the grid")
    return _knock_out_price(builder, grid, payoff, cfg, r, spots, lower, upper)


def price_mg(
    grid: GridSpec,
    p: MGParams,
    payoff: PayoffSpec,
    cfg: EvolutionConfig,
    spots: Sequence[float],
    V0: float,
) -> PricingResult:
    """Price under the Merton-Garman Hamiltonian on a 2D grid.

    x edges take payoff asymptotics on every y row; y edges use the outflow
    closure (no second y-derivative).
    """
    if not grid.y_min <= np.log(V0) <= grid.y_max:
        raise ParameterError(f"Variance {V0} lies outside the grid")
    H = build_mg_hamiltonian(grid, p, closure="one-sided", y_closure="outflow")
    result = evolve(H, payoff.terminal(grid), cfg, boundary=payoff.boundary(grid, p.r))
    surface = RegularGridInterpolator((grid.x, grid.y), result.values.reshape(grid.shape))
    price_at = {}
    for spot in spots:
        if not grid.x_min <= np.log(spot) <= grid.x_max:
            raise ParameterError(f"Spot {spot} lies outside the grid")
        price_at[float(spot)] = float(surface([[np.log(spot), np.log(V0)]])[0])
    return PricingResult(
        field=result,
        grid=grid,
        price_at=price_at,
        diagnostics={
            "scheme": cfg.scheme,
            "steps": cfg.n_steps,
            "grid": grid.model_dump(),
            "V0": V0,
        },
    )
