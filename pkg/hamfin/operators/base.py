"""Grid, parameter and operator records shared by all Hamiltonian builders."""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.sparse.linalg import norm as sparse_norm

from hamfin.errors import ParameterError

logger = logging.getLogger(__name__)


class GridSpec(BaseModel):
    """Uniform 1D or 2D grid in log-price x and (optionally) log-variance y."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False, extra="forbid")

    x_min: float
    x_max: float
    n_x: int = Field(ge=3)
    y_min: Optional[float] = None
    y_max: Optional[float] = None
    n_y: Optional[int] = Field(default=None, ge=3)

    @model_validator(mode="after")
    def _check_ranges(self) -> "GridSpec":
        if not self.x_min < self.x_max:
            raise ValueError(f"x_min ({self.x_min}) must be below x_max ({self.x_max})")
        y_fields = (self.y_min, self.y_max, self.n_y)
        if any(v is not None for v in y_fields) and any(v is None for v in y_fields):
            raise ValueError("y_min, y_max and n_y must be given together")
        if self.is_2d and not self.y_min < self.y_max:
            raise ValueError(f"y_min ({self.y_min}) must be below y_max ({self.y_max})")
        return self

    @classmethod
    def pricing(
        cls, S0: float, sigma: float, T: float, n_x: int, width: float = 8.0
    ) -> "GridSpec":
        """Default pricing grid ln(S0) +/- width * sigma * sqrt(T)."""
        half = width * sigma * np.sqrt(T)
        center = float(np.log(S0))
        return cls(x_min=center - half, x_max=center + half, n_x=n_x)

    @property
    def is_2d(self) -> bool:
        return self.n_y is not None

    @property
    def h_x(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def h_y(self) -> Optional[float]:
        if not self.is_2d:
            return None
        return (self.y_max - self.y_min) / (self.n_y - 1)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + np.arange(self.n_x) * self.h_x

    @property
    def y(self) -> Optional[np.ndarray]:
        if not self.is_2d:
            return None
        return self.y_min + np.arange(self.n_y) * self.h_y

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n_x, self.n_y) if self.is_2d else (self.n_x,)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def mesh(self) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Node coordinates flattened in x-major order (index i * n_y + j)."""
        if not self.is_2d:
            return self.x, None
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        return X.ravel(), Y.ravel()

    def x_slice(self) -> "GridSpec":
        """The 1D grid of the log-price axis."""
        return GridSpec(x_min=self.x_min, x_max=self.x_max, n_x=self.n_x)

    def with_x_range(self, x_min: float, x_max: float) -> "GridSpec":
        """Same node counts and y axis, new log-price range."""
        return GridSpec(**{**self.model_dump(), "x_min": x_min, "x_max": x_max})

    def interior_mask(self, k: int) -> np.ndarray:
        """Flat boolean mask excluding k nodes next to every edge."""
        mask_x = np.zeros(self.n_x, dtype=bool)
        mask_x[k : self.n_x - k] = True
        if not self.is_2d:
            return mask_x
        mask_y = np.zeros(self.n_y, dtype=bool)
        mask_y[k : self.n_y - k] = True
        return np.logical_and.outer(mask_x, mask_y).ravel()


class BSParams(BaseModel):
    """Black-Scholes parameters: spot rate and volatility."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False, extra="forbid")

    r: float
    sigma: float = Field(gt=0)


class MGParams(BaseModel):
    """Merton-Garman parameters.

    ``lambda_`` is the drift intercept of the variance process with the market
    price of volatility risk already subtracted.
    """

    model_config = ConfigDict(
        frozen=True, allow_inf_nan=False, extra="forbid", populate_by_name=True
    )

    r: float
    lambda_: float = Field(alias="lambda")
    mu: float
    zeta: float = Field(ge=0)
    rho: float = Field(ge=-1, le=1)
    alpha: float


@dataclass(frozen=True, eq=False)
class ValueField:
    """Real values on the nodes of a grid, in grid enumeration order."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ParameterError(f"ValueField expects a flat array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ParameterError(f"ValueField '{self.label}' has non-finite entries")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def from_function(
        cls, grid: GridSpec, fn: Callable[..., np.ndarray], label: str = ""
    ) -> "ValueField":
        """Sample fn(x) on a 1D grid or fn(x, y) on a 2D grid."""
        X, Y = grid.mesh()
        values = fn(X) if Y is None else fn(X, Y)
        return cls(np.broadcast_to(np.asarray(values, dtype=float), X.shape).copy(), label)


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Sparse banded matrix of a discretized Hamiltonian on a grid.

    ``drift_free`` is set at construction when every first-derivative
    coefficient is exactly zero on the grid.
    """

    matrix: sp.csr_matrix
    grid: GridSpec
    boundary_width: int = 2
    drift_free: bool = False
    closure: str = "one-sided"
    label: str = ""

    def __post_init__(self):
        matrix = sp.csr_matrix(self.matrix, dtype=float, copy=True)
        matrix.eliminate_zeros()
        matrix.sort_indices()
        if matrix.shape != (self.grid.size, self.grid.size):
            raise ParameterError(
                f"Operator shape {matrix.shape} does not match grid size {self.grid.size}"
            )
        object.__setattr__(self, "matrix", matrix)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def bandwidth(self) -> int:
        coo = self.matrix.tocoo()
        if coo.nnz == 0:
            return 0
        return int(np.max(np.abs(coo.row - coo.col)))

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def to_banded(self) -> Tuple[int, np.ndarray]:
        """LAPACK band storage with equal lower and upper bandwidth."""
        return banded_form(self.matrix, self.bandwidth)


class HamiltonianBuilder(Protocol):
    """Protocol for callables that assemble an operator on a given grid."""

    def __call__(self, grid: GridSpec) -> OperatorMatrix:
        """Assemble the operator.

        Args:
            grid: Grid to discretize on

        Returns:
            OperatorMatrix on that grid
        """
        ...


def banded_form(matrix: sp.spmatrix, b: int) -> Tuple[int, np.ndarray]:
    """Convert a sparse matrix to the (2b+1, n) layout used by solve_banded."""
    dia = sp.dia_matrix(matrix)
    n = matrix.shape[0]
    ab = np.zeros((2 * b + 1, n))
    for offset, row in zip(dia.offsets, dia.data):
        if abs(offset) > b:
            if np.any(row):
                raise ParameterError(f"Entry on diagonal {offset} outside bandwidth {b}")
            continue
        # dia_matrix stores column-aligned data, which is the LAPACK layout
        ab[b - offset, :] = row[:n]
    return b, ab


def apply(H: OperatorMatrix, f: ValueField) -> ValueField:
    """Banded matrix-vector product H f.

    Raises:
        ParameterError: If the field length does not match the operator
    """
    if len(f) != H.n:
        raise ParameterError(f"Dimension mismatch: operator {H.n}, field {len(f)}")
    return ValueField(H.matrix @ f.values, label=f"H {f.label}".strip())


def hermiticity_defect(H: OperatorMatrix) -> float:
    """Relative Frobenius norm of H - H^T under the flat grid inner product.

    The outermost node ring carries the boundary closure and is left out, so
    the defect vanishes exactly when the assembled interior operator has no
    first-derivative terms and pointwise-symmetric second-order terms.
    """
    mask = H.grid.interior_mask(1)
    block = H.matrix[mask][:, mask]
    skew = sparse_norm(block - block.T, "fro")
    return float(skew / max(1.0, sparse_norm(block, "fro")))
