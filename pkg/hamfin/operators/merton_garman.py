"""Merton-Garman Hamiltonian in (x, y) = (ln S, ln V) variables."""

import logging
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp

from hamfin.errors import ParameterError
from hamfin.operators.base import GridSpec, MGParams, OperatorMatrix
from hamfin.operators.black_scholes import assemble_diffusion
from hamfin.operators.stencils import Closure, combine, first_derivative, second_derivative

logger = logging.getLogger(__name__)


def mg_coefficients(p: MGParams, y: np.ndarray) -> Dict[str, np.ndarray]:
    """Pointwise coefficients of every term of H_MG at log-variances y."""
    y = np.asarray(y, dtype=float)
    ey = np.exp(y)
    vol_diffusion = p.zeta**2 * np.exp(2.0 * y * (p.alpha - 1.0))
    return {
        "xx": -0.5 * ey,
        "x": -(p.r - 0.5 * ey),
        "y": -(p.lambda_ * np.exp(-y) + p.mu - 0.5 * vol_diffusion),
        "xy": -p.rho * p.zeta * np.exp(y * (p.alpha - 0.5)),
        "yy": -vol_diffusion,
        "0": np.full_like(y, p.r),
    }


def build_mg_hamiltonian(
    grid: GridSpec,
    p: MGParams,
    closure: Closure = "one-sided",
    y_closure: Optional[Closure] = None,
) -> OperatorMatrix:
    """Assemble the Merton-Garman Hamiltonian on a 2D grid.

    H_MG = -(e^y/2) d2/dx2 - (r - e^y/2) d/dx
           - (lambda e^-y + mu - (zeta^2/2) e^{2y(alpha-1)}) d/dy
           - rho zeta e^{y(alpha-1/2)} d2/dxdy - zeta^2 e^{2y(alpha-1)} d2/dy2 + r

    Args:
        grid: 2D grid, flattened x-major
        p: Merton-Garman parameters
        closure: Edge stencil choice in x (and y unless overridden)
        y_closure: Edge stencil choice in y

    Returns:
        OperatorMatrix of the Merton-Garman Hamiltonian

    Raises:
        ParameterError: If the grid is 1D or a coefficient overflows
    """
    if not grid.is_2d:
        raise ParameterError("build_mg_hamiltonian needs a 2D grid")
    y_closure = y_closure or closure
    _, Y = grid.mesh()
    coef = mg_coefficients(p, Y)
    if not all(np.all(np.isfinite(c)) for c in coef.values()):
        raise ParameterError("Non-finite Merton-Garman coefficient on the grid")

    n_x, n_y = grid.n_x, grid.n_y
    eye_x = sp.identity(n_x, format="csr")
    eye_y = sp.identity(n_y, format="csr")
    d1x = first_derivative(n_x, grid.h_x, "truncated" if closure == "outflow" else closure)
    d2x = second_derivative(n_x, grid.h_x, closure)
    d1y = first_derivative(n_y, grid.h_y, y_closure)
    d2y = second_derivative(n_y, grid.h_y, y_closure)

    matrix = combine(
        [
            (coef["xx"], sp.kron(d2x, eye_y)),
            (coef["x"], sp.kron(d1x, eye_y)),
            (coef["y"], sp.kron(eye_x, d1y)),
            (coef["xy"], sp.kron(d1x, d1y)),
            (coef["yy"], sp.kron(eye_x, d2y)),
            (coef["0"], sp.identity(grid.size, format="csr")),
        ],
        grid.size,
    )
    drift_free = bool(np.all(coef["x"] == 0.0) and np.all(coef["y"] == 0.0))
    logger.debug(f"Assembled H_MG on {n_x}x{n_y} nodes")
    return OperatorMatrix(
        matrix=matrix, grid=grid, drift_free=drift_free, closure=closure, label="H_MG"
    )


def build_mg_slice(
    grid: GridSpec, p: MGParams, y: float, closure: Closure = "one-sided"
) -> OperatorMatrix:
    """H_MG at a frozen log-variance y with every d/dy term dropped.

    This is the Black-Scholes Hamiltonian with sigma^2 = e^y.
    """
    coef = mg_coefficients(p, np.full(grid.n_x, y))
    return assemble_diffusion(
        grid,
        second=coef["xx"],
        first=coef["x"],
        zeroth=coef["0"],
        closure=closure,
        label=f"H_MG(y={y:g})",
    )
