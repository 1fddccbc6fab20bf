"""Potential terms: effective Hamiltonians, Hermitization and the quartic vacuum."""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import cumulative_trapezoid
from scipy.sparse.linalg import norm as sparse_norm

from hamfin.errors import GridRangeError, ParameterError
from hamfin.operators.base import GridSpec, OperatorMatrix, ValueField, apply
from hamfin.operators.black_scholes import assemble_diffusion
from hamfin.operators.stencils import Closure

logger = logging.getLogger(__name__)

# exp() overflows just above 709
_EXP_LIMIT = 700.0
DENSE_LIMIT = 512


class PotentialSpec(BaseModel):
    """A potential V(x): constant, tabulated (x, V) or quartic -mu2 S^2 + omega S^4."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False, extra="forbid")

    kind: Literal["constant", "table", "quartic"] = "constant"
    value: Optional[float] = None
    table: Optional[List[Tuple[float, float]]] = None
    mu2: Optional[float] = Field(default=None, gt=0)
    omega: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_kind(self) -> "PotentialSpec":
        if self.kind == "constant" and self.value is None:
            raise ValueError("constant potential needs a value")
        if self.kind == "table":
            if not self.table or len(self.table) < 2:
                raise ValueError("table potential needs at least two (x, V) rows")
            xs = [row[0] for row in self.table]
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("table potential rows must be strictly increasing in x")
        if self.kind == "quartic" and (self.mu2 is None or self.omega is None):
            raise ValueError("quartic potential needs mu2 and omega")
        return self

    @classmethod
    def from_csv(cls, path: Path) -> "PotentialSpec":
        """Read a two-column (x, V) table with a header row.

        Raises:
            ParameterError: If the file does not hold two numeric columns
        """
        try:
            frame = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise ParameterError(f"Cannot read potential table {path}: {e}") from e
        if frame.shape[1] != 2 or len(frame) < 2:
            raise ParameterError(
                f"Potential table {path} needs two columns (x, V) and at least two rows"
            )
        try:
            rows = frame.astype(float).sort_values(frame.columns[0]).to_numpy()
        except ValueError as e:
            raise ParameterError(f"Potential table {path} is not numeric: {e}") from e
        logger.debug(f"Loaded {len(rows)} potential rows from {path}")
        return cls(kind="table", table=[(float(x), float(v)) for x, v in rows])

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """V at the given points; tables are interpolated linearly and must cover x."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full_like(x, self.value)
        if self.kind == "quartic":
            return quartic_potential(self, x)
        xs, vs = np.array(self.table, dtype=float).T
        if x.size and (x.min() < xs[0] or x.max() > xs[-1]):
            raise ParameterError(
                f"Potential table covers [{xs[0]}, {xs[-1]}], "
                f"needed [{x.min():.6g}, {x.max():.6g}]"
            )
        return np.interp(x, xs, vs)


@dataclass
class HermitizationResult:
    """Symmetric conjugate of an effective Black-Scholes operator.

    ``H_herm`` and ``s_field`` live on the Dirichlet interior of the original
    grid. ``formula`` is the closed-form Hermitian operator with its relative
    distance to ``H_herm`` in ``formula_defect``.
    ``continuum_residual`` conjugates ``formula`` with the continuum gauge
    back onto the effective operator.
    """

    H_herm: OperatorMatrix
    s_field: ValueField
    similarity_residual: float
    s_continuum: ValueField
    formula: OperatorMatrix
    formula_defect: float
    continuum_residual: float
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    alpha_from_gauge: Optional[float] = None
    gamma_from_formula: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.H_herm.n,
            "similarity_residual": self.similarity_residual,
            "formula_defect": self.formula_defect,
            "continuum_residual": self.continuum_residual,
            "s_range": [float(self.s_field.values.min()), float(self.s_field.values.max())],
            "alpha": self.alpha,
            "gamma": self.gamma,
            "alpha_from_gauge": self.alpha_from_gauge,
            "gamma_from_formula": self.gamma_from_formula,
        }


@dataclass
class VacuumManifold:
    """Degenerate minima of the quartic potential for a real field."""

    magnitude: float
    representatives: List[float]
    multiplicity_note: str
    alternate_magnitude: float
    alternate_agrees: bool

    def __post_init__(self):
        if self.magnitude < 0.0:
            raise ParameterError(f"Vacuum magnitude must be non-negative, got {self.magnitude}")
        tolerance = 1e-15 * max(1.0, self.magnitude)
        if any(abs(abs(v) - self.magnitude) > tolerance for v in self.representatives):
            raise ParameterError("Every vacuum representative must have the vacuum magnitude")


@dataclass
class FlatnessReport:
    """Kinetic against potential size of a field near the quartic vacuum."""

    magnitude: float
    window: float
    bump_width: Optional[float]
    kinetic_norm: float
    potential_norm: float
    ratio: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def build_effective_bs(
    grid: GridSpec, sigma: float, V: PotentialSpec, closure: Closure = "one-sided"
) -> OperatorMatrix:
    """H = -(sigma^2/2) d2/dx2 + (sigma^2/2 - V(x)) d/dx + V(x).

    The same nodal V enters the drift and the potential, so e^x stays a
    zero mode for any V.

    Raises:
        ParameterError: If sigma is not positive or a table does not cover the grid
    """
    if sigma <= 0.0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    potential = V.evaluate(grid.x)
    half_var = 0.5 * sigma**2
    return assemble_diffusion(
        grid,
        second=np.full(grid.n_x, -half_var),
        first=half_var - potential,
        zeroth=potential,
        closure=closure,
        label="H_eff",
    )


def _continuum_gauge(x: np.ndarray, potential: np.ndarray, sigma: float) -> np.ndarray:
    """s(x) = x/2 - (1/sigma^2) int_0^x V by the trapezoid rule."""
    integral = cumulative_trapezoid(potential, x, initial=0.0)
    if x[0] <= 0.0 <= x[-1]:
        at_zero = np.interp(0.0, x, integral)
    elif x[0] > 0.0:
        at_zero = -potential[0] * x[0]
    else:
        at_zero = integral[-1] - potential[-1] * x[-1]
    return 0.5 * x - (integral - at_zero) / sigma**2


def conjugation_residual(symmetric: sp.spmatrix, s: np.ndarray, target: sp.spmatrix) -> float:
    """Relative Frobenius distance of D(e^s) symmetric D(e^-s) from target."""
    recovered = sp.diags(np.exp(s)) @ symmetric @ sp.diags(np.exp(-s))
    return float(sparse_norm(recovered - target, "fro") / sparse_norm(target, "fro"))


def hermitize(
    grid: GridSpec, sigma: float, V: PotentialSpec, closure: Closure = "one-sided"
) -> HermitizationResult:
    """Conjugate the effective operator into a symmetric one.

    On the interior block of build_effective_bs the symmetric operator keeps
    the diagonal and takes sign(lower) sqrt(lower upper) off the diagonal.
    The gauge s solves s[i+1] - s[i] = ln(H[i+1, i] / H[i, i+1]) / 2 and is
    anchored to the continuum s at the first interior node;
    ``similarity_residual`` checks that e^s H_herm e^-s gives back H_eff.
    ``continuum_residual`` does the same with the formula operator and the
    continuum gauge, and decays as O(h^2).

    Raises:
        ParameterError: If the grid leaves fewer than three interior nodes
        GridRangeError: If the off-diagonal products change sign (drift too
            strong for the spacing) or e^s leaves floating range
    """
    n = grid.n_x
    if n < 5:
        raise ParameterError(f"Hermitization needs at least 5 nodes (3 interior), got {n}")
    H_eff = build_effective_bs(grid, sigma, V, closure)
    inner = GridSpec(x_min=float(grid.x[1]), x_max=float(grid.x[n - 2]), n_x=n - 2)
    block = H_eff.matrix[1 : n - 1, 1 : n - 1].tocsr()
    lower = block.diagonal(-1)
    upper = block.diagonal(1)
    if np.any(lower * upper <= 0.0):
        raise GridRangeError(
            "Off-diagonal products are not positive; refine the grid or reduce the drift"
        )

    continuum = _continuum_gauge(grid.x, V.evaluate(grid.x), sigma)[1 : n - 1]
    steps = 0.5 * np.log(lower / upper)
    s = continuum[0] + np.concatenate([[0.0], np.cumsum(steps)])
    if np.max(np.abs(s)) > _EXP_LIMIT:
        raise GridRangeError(
            f"Gauge reaches |s| = {np.max(np.abs(s)):.1f}; e^s overflows, use a narrower grid"
        )

    off = np.sign(lower) * np.sqrt(lower * upper)
    H_herm = sp.diags([off, block.diagonal(), off], [-1, 0, 1], format="csr")
    similarity_residual = conjugation_residual(H_herm, s, block)

    inner_potential = V.evaluate(inner.x)
    slope = np.gradient(V.evaluate(grid.x), grid.h_x, edge_order=2)[1 : n - 1]
    shifted = (inner_potential + 0.5 * sigma**2) ** 2 / (2.0 * sigma**2)
    formula = assemble_diffusion(
        inner,
        second=np.full(inner.n_x, -0.5 * sigma**2),
        first=np.zeros(inner.n_x),
        zeroth=0.5 * slope + shifted,
        closure="truncated",
        label="H_herm formula",
    )
    formula_defect = float(
        sparse_norm(H_herm - formula.matrix, "fro") / sparse_norm(formula.matrix, "fro")
    )
    continuum_residual = conjugation_residual(formula.matrix, continuum, block)

    result = HermitizationResult(
        H_herm=OperatorMatrix(matrix=H_herm, grid=inner, closure="truncated", label="H_herm"),
        s_field=ValueField(s, label="s"),
        similarity_residual=similarity_residual,
        s_continuum=ValueField(continuum, label="s continuum"),
        formula=formula,
        formula_defect=formula_defect,
        continuum_residual=continuum_residual,
    )
    if V.kind == "constant":
        result.alpha = (0.5 * sigma**2 - V.value) / sigma**2
        result.gamma = (V.value + 0.5 * sigma**2) ** 2 / (2.0 * sigma**2)
        result.alpha_from_gauge = float((continuum[-1] - continuum[0]) / (inner.x[-1] - inner.x[0]))
        ones = ValueField(np.ones(inner.n_x), label="1")
        result.gamma_from_formula = float(apply(formula, ones).values[inner.n_x // 2])
    logger.debug(
        f"Hermitized {V.kind} potential on {inner.n_x} nodes: "
        f"residual {similarity_residual:.2e}, formula defect {formula_defect:.2e}"
    )
    return result


def spectrum_reality(H: OperatorMatrix) -> float:
    """Largest |Im lambda| / max |lambda| over the dense spectrum.

    Raises:
        ParameterError: If the operator exceeds the dense size limit
    """
    if H.n > DENSE_LIMIT:
        raise ParameterError(f"Dense spectrum limited to n <= {DENSE_LIMIT}, got {H.n}")
    eigenvalues = scipy.linalg.eigvals(H.to_dense())
    scale = np.max(np.abs(eigenvalues))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(eigenvalues.imag)) / scale)


def _require_quartic(q: PotentialSpec) -> None:
    if q.kind != "quartic":
        raise ParameterError(f"Quartic potential expected, got '{q.kind}'")
    if not (q.mu2 > 0.0 and q.omega > 0.0):
        raise ParameterError(f"Quartic coefficients must be positive: mu2={q.mu2}, omega={q.omega}")


def quartic_potential(q: PotentialSpec, S: np.ndarray) -> np.ndarray:
    """V(S) = -mu2 S^2 + omega S^4."""
    _require_quartic(q)
    S = np.asarray(S, dtype=float)
    return -q.mu2 * S**2 + q.omega * S**4


def quartic_vacuum(q: PotentialSpec) -> VacuumManifold:
    """Minima of the quartic potential, S^2 = mu2 / (2 omega).

    The closed form |mu| / (sqrt(2) omega) is also recorded; it only agrees
    with the stationary point when omega = 1.
    """
    _require_quartic(q)
    magnitude = float(np.sqrt(q.mu2 / (2.0 * q.omega)))
    alternate = float(np.sqrt(q.mu2) / (np.sqrt(2.0) * q.omega))
    agrees = bool(np.isclose(alternate, magnitude, rtol=1e-12, atol=0.0))
    if not agrees:
        logger.warning(
            f"|mu|/(sqrt(2) omega) = {alternate:.12g} is not a stationary point of V; "
            f"using sqrt(mu2/(2 omega)) = {magnitude:.12g}"
        )
    return VacuumManifold(
        magnitude=magnitude,
        representatives=[magnitude, -magnitude],
        multiplicity_note=(
            "The field direction is not fixed: every configuration with |S| = magnitude "
            "is a vacuum. For a complex field the minima form a circle."
        ),
        alternate_magnitude=alternate,
        alternate_agrees=agrees,
    )


def quartic_samples(q: PotentialSpec, n: int = 401, extent: Optional[float] = None) -> pd.DataFrame:
    """V(S) on a symmetric grid for plotting; the grid contains both minima when n is odd."""
    if n < 3:
        raise ParameterError(f"Need at least three samples, got {n}")
    magnitude = quartic_vacuum(q).magnitude
    extent = extent if extent is not None else max(2.0 * magnitude, 1.0)
    S = np.linspace(-extent, extent, n)
    return pd.DataFrame({"S": S, "V": quartic_potential(q, S)})


def quartic_flatness_report(
    q: PotentialSpec,
    H_base: OperatorMatrix,
    window: float,
    bump_width: Optional[float] = None,
    k: int = 2,
) -> FlatnessReport:
    """Compare |H_base f| with |V(f)| for a field near the vacuum.

    f = m + window * exp(-(x - x_c)^2 / (2 bump_width^2)) on the grid of
    H_base, with m the vacuum magnitude and x_c the grid centre; without
    bump_width f is the constant m. A small ratio means the derivative terms
    are negligible next to the potential.

    Raises:
        ParameterError: If window or bump_width is not positive
    """
    if window <= 0.0:
        raise ParameterError(f"window must be positive, got {window}")
    if bump_width is not None and bump_width <= 0.0:
        raise ParameterError(f"bump_width must be positive, got {bump_width}")
    grid = H_base.grid
    magnitude = quartic_vacuum(q).magnitude
    X, _ = grid.mesh()
    if bump_width is None:
        values = np.full(grid.size, magnitude)
    else:
        centre = 0.5 * (grid.x_min + grid.x_max)
        values = magnitude + window * np.exp(-((X - centre) ** 2) / (2.0 * bump_width**2))

    mask = grid.interior_mask(k)
    kinetic = apply(H_base, ValueField(values, label="f")).values[mask]
    potential = quartic_potential(q, values[mask])
    kinetic_norm = float(np.linalg.norm(kinetic))
    potential_norm = float(np.linalg.norm(potential))
    return FlatnessReport(
        magnitude=magnitude,
        window=window,
        bump_width=bump_width,
        kinetic_norm=kinetic_norm,
        potential_norm=potential_norm,
        ratio=kinetic_norm / potential_norm if potential_norm > 0.0 else float("inf"),
    )
