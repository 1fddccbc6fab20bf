"""Black-Scholes Hamiltonian in log-price variables."""

import logging

import numpy as np
import scipy.sparse as sp

from hamfin.errors import ParameterError
from hamfin.operators.base import BSParams, GridSpec, OperatorMatrix
from hamfin.operators.stencils import Closure, combine, first_derivative, second_derivative

logger = logging.getLogger(__name__)


def assemble_diffusion(
    grid: GridSpec,
    second: np.ndarray,
    first: np.ndarray,
    zeroth: np.ndarray,
    closure: Closure = "one-sided",
    label: str = "",
) -> OperatorMatrix:
    """Assemble second * d2/dx2 + first * d/dx + zeroth on a 1D grid.

    Args:
        grid: 1D grid
        second: Coefficient of the second derivative at each node
        first: Coefficient of the first derivative at each node
        zeroth: Potential term at each node
        closure: Edge stencil choice
        label: Operator label

    Returns:
        OperatorMatrix with the pointwise coefficients frozen in

    Raises:
        ParameterError: If the grid is 2D or a coefficient is not finite
    """
    if grid.is_2d:
        raise ParameterError("A 1D grid is required")
    n = grid.n_x
    coefficients = [
        np.broadcast_to(np.asarray(c, dtype=float), (n,)) for c in (second, first, zeroth)
    ]
    if not all(np.all(np.isfinite(c)) for c in coefficients):
        raise ParameterError(f"Non-finite coefficient in {label or 'operator'}")
    second, first, zeroth = coefficients

    matrix = combine(
        [
            (second, second_derivative(n, grid.h_x, closure)),
            (first, first_derivative(n, grid.h_x, closure)),
            (zeroth, sp.identity(n, format="csr")),
        ],
        n,
    )
    logger.debug(f"Assembled {label or 'operator'} on {n} nodes, h={grid.h_x:.3e}")
    return OperatorMatrix(
        matrix=matrix,
        grid=grid,
        drift_free=bool(np.all(first == 0.0)),
        closure=closure,
        label=label,
    )


def build_bs_hamiltonian(
    grid: GridSpec, p: BSParams, closure: Closure = "one-sided"
) -> OperatorMatrix:
    """Assemble H_BS = -(sigma^2/2) d2/dx2 + (sigma^2/2 - r) d/dx + r.

    Args:
        grid: 1D log-price grid
        p: Black-Scholes parameters
        closure: Edge stencil choice

    Returns:
        OperatorMatrix of the Black-Scholes Hamiltonian
    """
    n = grid.n_x
    half_var = 0.5 * p.sigma**2
    return assemble_diffusion(
        grid,
        second=np.full(n, -half_var),
        first=np.full(n, half_var - p.r),
        zeroth=np.full(n, p.r),
        closure=closure,
        label="H_BS",
    )
