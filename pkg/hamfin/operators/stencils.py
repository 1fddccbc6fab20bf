"""Second-order finite-difference matrices on uniform grids.

Interior rows are central differences. Edge rows depend on the closure:

- ``one-sided``: second-order one-sided stencils; constants are annihilated
  by every derivative row.
- ``truncated``: the central stencil with zero ghost values outside the grid.
- ``outflow``: one-sided first derivative, zero second derivative.
"""

from typing import Iterable, Literal, Tuple

import numpy as np
import scipy.sparse as sp

from hamfin.errors import ParameterError

Closure = Literal["one-sided", "truncated", "outflow"]
CLOSURES: Tuple[str, ...] = ("one-sided", "truncated", "outflow")


def _check_closure(closure: str) -> None:
    if closure not in CLOSURES:
        raise ParameterError(f"Unknown closure '{closure}'. Available: {', '.join(CLOSURES)}")


def first_derivative(n: int, h: float, closure: Closure = "one-sided") -> sp.csr_matrix:
    """Matrix of d/dx on n nodes with spacing h."""
    _check_closure(closure)
    off = np.full(n - 1, 1.0 / (2.0 * h))
    D = sp.diags([-off, off], [-1, 1], shape=(n, n), format="lil")
    if closure != "truncated":
        D[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2.0 * h)
        D[n - 1, n - 3 :] = np.array([1.0, -4.0, 3.0]) / (2.0 * h)
    return D.tocsr()


def second_derivative(n: int, h: float, closure: Closure = "one-sided") -> sp.csr_matrix:
    """Matrix of d^2/dx^2 on n nodes with spacing h."""
    _check_closure(closure)
    side = np.full(n - 1, 1.0 / h**2)
    D = sp.diags([side, np.full(n, -2.0 / h**2), side], [-1, 0, 1], shape=(n, n), format="lil")
    if closure == "outflow":
        D[0, :] = 0.0
        D[n - 1, :] = 0.0
    elif closure == "one-sided":
        if n >= 4:
            edge = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
        else:
            # three nodes only admit the first-order edge stencil
            edge = np.array([1.0, -2.0, 1.0]) / h**2
        D[0, : edge.size] = edge
        D[n - 1, n - edge.size :] = edge[::-1]
    return D.tocsr()


def combine(terms: Iterable[Tuple[np.ndarray, sp.spmatrix]], n: int) -> sp.csr_matrix:
    """Sum of diag(coefficient) @ operator over the given terms."""
    total = sp.csr_matrix((n, n))
    for coefficient, operator in terms:
        coefficient = np.broadcast_to(np.asarray(coefficient, dtype=float), (n,))
        total = total + sp.diags(coefficient) @ operator
    return total.tocsr()
