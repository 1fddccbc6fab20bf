"""Monte Carlo paths for the Black-Scholes and Merton-Garman SDEs.

Paths are generated in fixed-size blocks. Block b draws from
Philox(SeedSequence([seed, b])), so an ensemble depends only on the seed and
the discretization, never on how many workers ran the blocks.
"""

import asyncio
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.random import Generator, Philox, SeedSequence
from pydantic import BaseModel, ConfigDict, Field, model_validator

from hamfin.errors import ParameterError
from hamfin.evolution import PayoffSpec
from hamfin.operators.base import MGParams

logger = logging.getLogger(__name__)

BLOCK_SIZE = 4096
FLOOR_BUDGET = 0.01


class SDEParams(BaseModel):
    """Model and starting point of a simulation."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False, extra="forbid")

    model: Literal["gbm", "mg"] = "gbm"
    phi: float
    S0: float = Field(gt=0)
    sigma: Optional[float] = Field(default=None, ge=0)
    V0: Optional[float] = Field(default=None, gt=0)
    mg: Optional[MGParams] = None
    exact: bool = True

    @model_validator(mode="after")
    def _check_model(self) -> "SDEParams":
        if self.model == "gbm" and self.sigma is None:
            raise ValueError("gbm simulation needs sigma")
        if self.model == "mg" and (self.V0 is None or self.mg is None):
            raise ValueError("mg simulation needs V0 and mg parameters")
        return self


@dataclass
class _Block:
    terminal_S: np.ndarray
    terminal_V: Optional[np.ndarray]
    floor_hits: int
    # count, sum w1, sum w2, sum w1^2, sum w2^2, sum w1*w2
    moments: np.ndarray


@dataclass
class PathEnsemble:
    """Terminal values of a simulated ensemble."""

    model: str
    n_paths: int
    n_steps: int
    dt: float
    seed: int
    S0: float
    phi: float
    T: float
    terminal_S: np.ndarray
    terminal_V: Optional[np.ndarray] = None
    realized_noise_correlation: Optional[float] = None
    floor_hit_fraction: float = 0.0
    stability_warning: bool = False

    def summary(self) -> Dict[str, Any]:
        """JSON-ready description without the per-path arrays."""
        data = {
            "model": self.model,
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "dt": self.dt,
            "seed": self.seed,
            "S0": self.S0,
            "phi": self.phi,
            "T": self.T,
            "mean_S_T": float(np.mean(self.terminal_S)),
            "realized_noise_correlation": self.realized_noise_correlation,
            "floor_hit_fraction": self.floor_hit_fraction,
            "stability_warning": self.stability_warning,
        }
        if self.terminal_V is not None:
            data["mean_V_T"] = float(np.mean(self.terminal_V))
        return data

    def to_frame(self) -> pd.DataFrame:
        """One row per path."""
        frame = pd.DataFrame({"path": np.arange(self.n_paths), "S_T": self.terminal_S})
        if self.terminal_V is not None:
            frame["V_T"] = self.terminal_V
        return frame


@dataclass
class MartingaleStat:
    """Discounted terminal mean against the starting price."""

    discounted_mean: float
    std_error: float
    z_score: float
    expected_fail: bool = False
    n_paths: int = 0
    notes: List[str] = field(default_factory=list)


def _block_rng(seed: int, block: int) -> Generator:
    return Generator(Philox(SeedSequence([seed, block])))


def _gbm_block(params: SDEParams, T: float, n_steps: int, size: int, rng: Generator) -> _Block:
    dt = T / n_steps
    z = rng.standard_normal((size, n_steps))
    if params.exact:
        drift = (params.phi - 0.5 * params.sigma**2) * T
        log_growth = drift + params.sigma * np.sqrt(dt) * z.sum(axis=1)
        terminal = params.S0 * np.exp(log_growth)
    else:
        terminal = np.full(size, params.S0)
        for step in range(n_steps):
            terminal = terminal * (1.0 + params.phi * dt + params.sigma * np.sqrt(dt) * z[:, step])
    return _Block(terminal_S=terminal, terminal_V=None, floor_hits=0, moments=np.zeros(6))


def _mg_block(params: SDEParams, T: float, n_steps: int, size: int, rng: Generator) -> _Block:
    """Euler on (ln S, V) with full truncation V+ = max(V, 0)."""
    p = params.mg
    dt = T / n_steps
    sqrt_dt = np.sqrt(dt)
    complement = np.sqrt(1.0 - p.rho**2)
    log_s = np.full(size, np.log(params.S0))
    variance = np.full(size, params.V0)
    floor_hits = 0
    moments = np.zeros(6)
    for _ in range(n_steps):
        z1 = rng.standard_normal(size)
        z2 = rng.standard_normal(size)
        w1 = z1
        w2 = p.rho * z1 + complement * z2
        moments += [size, w1.sum(), w2.sum(), (w1 * w1).sum(), (w2 * w2).sum(), (w1 * w2).sum()]

        floor_hits += int(np.count_nonzero(variance <= 0.0))
        positive = np.maximum(variance, 0.0)
        # a floored variance carries no noise, also for alpha < 0
        vol_of_var = np.power(positive, p.alpha, out=np.zeros_like(positive), where=positive > 0.0)
        log_s = log_s + (params.phi - 0.5 * positive) * dt + np.sqrt(positive) * sqrt_dt * w1
        variance = (
            variance
            + (p.lambda_ + p.mu * positive) * dt
            + p.zeta * vol_of_var * sqrt_dt * w2
        )
    return _Block(
        terminal_S=np.exp(log_s),
        terminal_V=np.maximum(variance, 0.0),
        floor_hits=floor_hits,
        moments=moments,
    )


def _simulate_block(
    params: SDEParams, T: float, n_steps: int, size: int, seed: int, block: int
) -> _Block:
    rng = _block_rng(seed, block)
    if params.model == "gbm":
        return _gbm_block(params, T, n_steps, size, rng)
    return _mg_block(params, T, n_steps, size, rng)


def _pearson(moments: np.ndarray) -> float:
    n, s1, s2, s11, s22, s12 = moments
    cov = s12 / n - (s1 / n) * (s2 / n)
    var1 = s11 / n - (s1 / n) ** 2
    var2 = s22 / n - (s2 / n) ** 2
    return float(cov / np.sqrt(var1 * var2))


async def simulate_async(
    params: SDEParams,
    T: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    workers: int = 4,
    block_size: int = BLOCK_SIZE,
) -> PathEnsemble:
    """Simulate n_paths paths with blocks running concurrently in worker threads.

    Args:
        params: Model and starting point
        T: Horizon
        n_steps: Time steps per path
        n_paths: Number of paths
        seed: Root seed of the block streams
        workers: Upper bound on blocks in flight
        block_size: Paths per block; part of the stream layout

    Returns:
        PathEnsemble, identical for any worker count

    Raises:
        ParameterError: On a nonpositive horizon, step count, path count or worker count
    """
    if T <= 0.0 or n_steps < 1 or n_paths < 1:
        raise ParameterError(
            f"Need T > 0, n_steps >= 1, n_paths >= 1; got {T}, {n_steps}, {n_paths}"
        )
    if workers < 1 or block_size < 1:
        raise ParameterError(f"workers and block_size must be positive: {workers}, {block_size}")

    sizes = [min(block_size, n_paths - start) for start in range(0, n_paths, block_size)]
    semaphore = asyncio.Semaphore(workers)

    async def run(block: int, size: int) -> _Block:
        async with semaphore:
            return await asyncio.to_thread(_simulate_block, params, T, n_steps, size, seed, block)

    # gather keeps block order, so the reduction below is fixed-order
    blocks = await asyncio.gather(*(run(b, size) for b, size in enumerate(sizes)))
    logger.debug(f"Simulated {n_paths} {params.model} paths in {len(blocks)} blocks")

    terminal_S = np.concatenate([b.terminal_S for b in blocks])
    ensemble = PathEnsemble(
        model=params.model,
        n_paths=n_paths,
        n_steps=n_steps,
        dt=T / n_steps,
        seed=seed,
        S0=params.S0,
        phi=params.phi,
        T=T,
        terminal_S=terminal_S,
    )
    if params.model == "mg":
        moments = np.zeros(6)
        floor_hits = 0
        for b in blocks:
            moments += b.moments
            floor_hits += b.floor_hits
        ensemble.terminal_V = np.concatenate([b.terminal_V for b in blocks])
        ensemble.realized_noise_correlation = _pearson(moments)
        ensemble.floor_hit_fraction = floor_hits / (n_paths * n_steps)
        ensemble.stability_warning = ensemble.floor_hit_fraction > FLOOR_BUDGET
        if ensemble.stability_warning:
            logger.warning(
                f"Variance floor hit on {ensemble.floor_hit_fraction:.2%} of steps; "
                f"reduce dt or revisit the variance parameters"
            )
    if not np.all(np.isfinite(terminal_S)):
        logger.warning("Non-finite terminal prices in ensemble")
    return ensemble


def simulate(
    params: SDEParams,
    T: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    workers: int = 4,
    block_size: int = BLOCK_SIZE,
) -> PathEnsemble:
    """Blocking wrapper around simulate_async."""
    return asyncio.run(simulate_async(params, T, n_steps, n_paths, seed, workers, block_size))


def martingale_test(e: PathEnsemble, r: float, T: Optional[float] = None) -> MartingaleStat:
    """Compare mean(e^{-rT} S_T) with S0.

    An ensemble simulated with phi != r is expected to fail; the result is
    flagged rather than rejected.
    """
    T = e.T if T is None else T
    discounted = np.exp(-r * T) * e.terminal_S
    mean = float(np.mean(discounted))
    std_error = float(np.std(discounted, ddof=1) / np.sqrt(e.n_paths)) if e.n_paths > 1 else 0.0
    if std_error > 0.0:
        z_score = (mean - e.S0) / std_error
    else:
        z_score = 0.0 if np.isclose(mean, e.S0, rtol=1e-12, atol=0.0) else float(np.inf)

    stat = MartingaleStat(
        discounted_mean=mean,
        std_error=std_error,
        z_score=float(z_score),
        expected_fail=not np.isclose(e.phi, r, rtol=0.0, atol=1e-14),
        n_paths=e.n_paths,
    )
    if stat.expected_fail:
        stat.notes.append(f"phi={e.phi} differs from r={r}; the discounted price drifts")
        logger.warning(f"Martingale test under phi={e.phi} != r={r}; a failure is expected")
    if e.stability_warning:
        stat.notes.append("variance floor budget exceeded")
    return stat


def _payoff_values(payoff: PayoffSpec, S: np.ndarray) -> np.ndarray:
    if payoff.kind == "call":
        return np.maximum(S - payoff.strike, 0.0)
    if payoff.kind == "put":
        return np.maximum(payoff.strike - S, 0.0)
    xs, vs = np.array(payoff.table, dtype=float).T
    return np.interp(np.log(S), xs, vs)


def mc_price(
    e: PathEnsemble, payoff: PayoffSpec, r: float, T: Optional[float] = None
) -> Tuple[float, float]:
    """Discounted payoff mean and its standard error."""
    T = e.T if T is None else T
    discounted = np.exp(-r * T) * _payoff_values(payoff, e.terminal_S)
    std_error = float(np.std(discounted, ddof=1) / np.sqrt(e.n_paths)) if e.n_paths > 1 else 0.0
    return float(np.mean(discounted)), std_error


def correlation_sweep(
    params: SDEParams,
    rhos: Sequence[float],
    T: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    workers: int = 4,
) -> pd.DataFrame:
    """Realized noise correlation for each configured rho.

    Raises:
        ParameterError: If params is not a Merton-Garman simulation
    """
    if params.model != "mg":
        raise ParameterError("correlation_sweep needs an mg simulation")
    rows = []
    for rho in rhos:
        mg = MGParams(**{**params.mg.model_dump(), "rho": rho})
        swept = params.model_copy(update={"mg": mg})
        ensemble = simulate(swept, T, n_steps, n_paths, seed, workers)
        rows.append({"rho_in": float(rho), "rho_realized": ensemble.realized_noise_correlation})
        logger.debug(f"rho={rho}: realized {ensemble.realized_noise_correlation:.4f}")
    return pd.DataFrame(rows, columns=["rho_in", "rho_realized"])
