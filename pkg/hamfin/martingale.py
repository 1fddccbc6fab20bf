"""Martingale states as vacua of the pricing Hamiltonians.

Checks that H annihilates the martingale state on the grid, computes the
one- and two-field vacuum values, and classifies when the vacuum is single
or degenerate (spontaneously broken translation symmetry).
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from hamfin.errors import ConstraintConflict, DegenerateSystemError, ParameterError
from hamfin.evolution import refinement_order
from hamfin.operators.base import (
    BSParams,
    GridSpec,
    HamiltonianBuilder,
    MGParams,
    OperatorMatrix,
    ValueField,
    apply,
    hermiticity_defect,
)
from hamfin.operators.black_scholes import build_bs_hamiltonian
from hamfin.operators.merton_garman import build_mg_slice

logger = logging.getLogger(__name__)

Convention = Literal["drift-sign", "stationary-point"]
DEFAULT_TOL = 1e-10
# matrix-level tolerance of the Hermiticity defect
DRIFT_TOL = 1e-14


@dataclass
class MartingaleReport:
    """Interior residual of H applied to a candidate martingale state."""

    state_label: str
    interior_residual_max: float
    interior_residual_l2: float
    refinement_order: Optional[float] = None
    constraint_residual: Optional[float] = None
    h: Optional[float] = None
    levels: List[Dict[str, float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        if data["refinement_order"] is None:
            del data["refinement_order"]
        return data


@dataclass
class VacuumFields:
    """Vacuum values of the momentum fields phi_x (and phi_y)."""

    phi_x_vac: float
    phi_y_vac: Optional[float] = None
    convention: Convention = "drift-sign"

    def __post_init__(self):
        values = [self.phi_x_vac] + ([] if self.phi_y_vac is None else [self.phi_y_vac])
        if not np.all(np.isfinite(values)):
            raise ParameterError(f"Non-finite vacuum field {values}")


@dataclass
class DegeneracyClass:
    """Single or degenerate vacuum with the violated conditions."""

    class_: Literal["single", "degenerate"]
    reasons: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {"class": self.class_, "reasons": list(self.reasons)}


@dataclass
class VacuumReport:
    """Everything the vacuum analysis knows about one parameter point."""

    model: str
    y: Optional[float]
    drift_sign: VacuumFields
    stationary_point: VacuumFields
    degeneracy: DegeneracyClass
    extended_degeneracy: Optional[DegeneracyClass] = None
    hermiticity_defect: Optional[float] = None
    system: Optional[VacuumFields] = None
    system_residuals: Optional[Tuple[float, float]] = None
    power_check: Dict[str, Any] = field(default_factory=dict)
    quadratic_at_vacuum: Optional[float] = None
    extended_lambda: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "y": self.y,
            "vacuum_fields": {
                "drift-sign": asdict(self.drift_sign),
                "stationary-point": asdict(self.stationary_point),
                "note": "the two conventions differ by sign only",
            },
            "degeneracy": self.degeneracy.to_dict(),
            "extended_degeneracy": (
                self.extended_degeneracy.to_dict() if self.extended_degeneracy else None
            ),
            "hermiticity_defect": self.hermiticity_defect,
            "system": asdict(self.system) if self.system else None,
            "system_residuals": list(self.system_residuals) if self.system_residuals else None,
            "power_check": self.power_check,
            "quadratic_at_vacuum": self.quadratic_at_vacuum,
            "extended_lambda": self.extended_lambda,
        }


def martingale_residual(
    H: OperatorMatrix,
    state: ValueField,
    k: int = 2,
    constraint_residual: Optional[float] = None,
) -> MartingaleReport:
    """Relative max and L2 norms of H state over nodes at least k cells from every edge."""
    mask = H.grid.interior_mask(k)
    residual = apply(H, state).values[mask]
    reference = state.values[mask]
    return MartingaleReport(
        state_label=state.label,
        interior_residual_max=float(np.max(np.abs(residual)) / np.max(np.abs(reference))),
        interior_residual_l2=float(np.linalg.norm(residual) / np.linalg.norm(reference)),
        constraint_residual=constraint_residual,
        h=H.grid.h_x,
    )


def refinement_study(
    builder: HamiltonianBuilder,
    state: Callable[[GridSpec], ValueField],
    grids: Sequence[GridSpec],
    k: int = 2,
    constraint_residual: Optional[float] = None,
    tol: float = DEFAULT_TOL,
) -> MartingaleReport:
    """Residuals on a sequence of grids with the observed convergence order.

    The order is only fitted for three or more grids and when the constraint
    (if any) holds within tol; otherwise the residual is not expected to vanish.
    """
    levels = []
    for grid in grids:
        report = martingale_residual(builder(grid), state(grid), k, constraint_residual)
        levels.append(report)
        logger.debug(
            f"{report.state_label}: n={grid.size} residual {report.interior_residual_max:.3e}"
        )

    finest = levels[-1]
    converging = constraint_residual is None or abs(constraint_residual) <= tol
    order = None
    if converging and len(levels) >= 3:
        order = refinement_order(
            [lv.h for lv in levels], [lv.interior_residual_max for lv in levels]
        )
    finest.refinement_order = order
    finest.levels = [
        {
            "n": grid.size,
            "h": lv.h,
            "interior_residual_max": lv.interior_residual_max,
            "interior_residual_l2": lv.interior_residual_l2,
        }
        for grid, lv in zip(grids, levels)
    ]
    return finest


def extended_constraint_residual(p: MGParams, y: Union[float, np.ndarray]) -> Any:
    """lambda + e^y (mu + (zeta^2/2) e^{2y(alpha-1)} + rho zeta e^{y(alpha-1/2)}).

    Zero exactly when H_MG annihilates e^{x+y} at log-variance y.
    """
    y = np.asarray(y, dtype=float)
    value = p.lambda_ + np.exp(y) * (
        p.mu
        + 0.5 * p.zeta**2 * np.exp(2.0 * y * (p.alpha - 1.0))
        + p.rho * p.zeta * np.exp(y * (p.alpha - 0.5))
    )
    return float(value) if value.ndim == 0 else value


def extended_lambda(p: MGParams, y: float) -> float:
    """The intercept that makes the extended constraint vanish at y."""
    return float(p.lambda_ - extended_constraint_residual(p, y))


def bs_vacuum_field(p: BSParams, convention: Convention = "drift-sign") -> VacuumFields:
    """phi_vac = r/sigma^2 - 1/2; the stationary point of the quadratic has the opposite sign."""
    drift = p.r / p.sigma**2 - 0.5
    value = drift if convention == "drift-sign" else -drift
    return VacuumFields(phi_x_vac=value, convention=convention)


def mg_vacuum_field(p: MGParams, y: float, convention: Convention = "drift-sign") -> VacuumFields:
    """phi_vac = r e^-y - 1/2 at frozen log-variance y."""
    drift = p.r * np.exp(-y) - 0.5
    return VacuumFields(
        phi_x_vac=float(drift if convention == "drift-sign" else -drift), convention=convention
    )


def _system(p: MGParams, y: float) -> Tuple[np.ndarray, np.ndarray]:
    ey = np.exp(y)
    cross = p.rho * p.zeta * np.exp(y * (p.alpha - 0.5))
    vol_diffusion = p.zeta**2 * np.exp(2.0 * y * (p.alpha - 1.0))
    matrix = np.array([[ey, cross], [cross, 2.0 * vol_diffusion]])
    rhs = np.array(
        [
            0.5 * ey - p.r,
            -(p.lambda_ * np.exp(-y) + p.mu - 0.5 * vol_diffusion),
        ]
    )
    return matrix, rhs


def solve_mg_vacuum_system(p: MGParams, y: float) -> VacuumFields:
    """Solve the two stationarity conditions for (phi_x, phi_y).

    e^y phi_x + (r - e^y/2) + rho zeta e^{y(alpha-1/2)} phi_y = 0
    lambda e^-y + mu - (zeta^2/2) e^{2y(alpha-1)}
        + rho zeta e^{y(alpha-1/2)} phi_x + 2 zeta^2 e^{2y(alpha-1)} phi_y = 0

    The result is the stationary point of the two-field quadratic, so with
    rho = 0 its phi_x is the negative of mg_vacuum_field.

    Raises:
        DegenerateSystemError: If zeta = 0; use mg_vacuum_field instead
    """
    if p.zeta == 0.0:
        raise DegenerateSystemError(
            "Vacuum system is singular for zeta = 0; use mg_vacuum_field for the one-field vacuum"
        )
    matrix, (b1, b2) = _system(p, y)
    (a, c), (_, d) = matrix
    # eliminate phi_x from the second row; keeps the rho = 0 case decoupled exactly
    phi_y = (b2 - (c / a) * b1) / (d - (c / a) * c)
    phi_x = (b1 - c * phi_y) / a
    return VacuumFields(
        phi_x_vac=float(phi_x), phi_y_vac=float(phi_y), convention="stationary-point"
    )


def vacuum_system_residuals(p: MGParams, y: float, fields: VacuumFields) -> Tuple[float, float]:
    """Left-hand sides of both stationarity conditions at the given fields."""
    matrix, rhs = _system(p, y)
    residual = matrix @ np.array([fields.phi_x_vac, fields.phi_y_vac]) - rhs
    return float(residual[0]), float(residual[1])


def stationary_quadratic(p: Union[BSParams, MGParams], y: Optional[float] = None) -> Callable:
    """The quadratic in the momentum fields whose stationary point is the vacuum.

    BS: Q(phi) = -(sigma^2/2) phi^2 + (sigma^2/2 - r) phi
    MG: Q(phi_x, phi_y) with the coefficients of H_MG; y must be given.
    """
    if isinstance(p, BSParams):
        half_var = 0.5 * p.sigma**2

        def bs_quadratic(phi):
            return -half_var * phi**2 + (half_var - p.r) * phi

        return bs_quadratic

    if y is None:
        raise ParameterError("The Merton-Garman quadratic needs a log-variance y")
    ey = np.exp(y)
    drift_y = p.lambda_ * np.exp(-y) + p.mu - 0.5 * p.zeta**2 * np.exp(2.0 * y * (p.alpha - 1.0))
    cross = p.rho * p.zeta * np.exp(y * (p.alpha - 0.5))
    vol_diffusion = p.zeta**2 * np.exp(2.0 * y * (p.alpha - 1.0))

    def mg_quadratic(phi_x, phi_y):
        return (
            -0.5 * ey * phi_x**2
            - (p.r - 0.5 * ey) * phi_x
            - drift_y * phi_y
            - cross * phi_x * phi_y
            - vol_diffusion * phi_y**2
        )

    return mg_quadratic


def classify_degeneracy(
    p: Union[BSParams, MGParams],
    y: Optional[float] = None,
    extended: bool = False,
    tol: float = DEFAULT_TOL,
    drift_tol: float = DRIFT_TOL,
) -> DegeneracyClass:
    """Single vacuum iff every symmetry-restoring condition holds.

    BS: r = sigma^2/2. MG: r = e^y/2, and for the extended state also
    lambda e^-y + mu - (zeta^2/2) e^{2y(alpha-1)} = 0, rho = 0 and zeta = 0.
    The drift conditions are compared relative to the variance with
    drift_tol, the scale on which they make the operator non-symmetric;
    the extended conditions use tol.
    """
    reasons = []
    if isinstance(p, BSParams):
        if abs(p.r - 0.5 * p.sigma**2) > drift_tol * p.sigma**2:
            reasons.append("drift-nonzero")
    else:
        if y is None:
            raise ParameterError("Merton-Garman classification needs a log-variance y")
        if abs(p.r - 0.5 * np.exp(y)) > drift_tol * np.exp(y):
            reasons.append("drift-nonzero")
        if extended:
            if abs(p.rho) > tol:
                reasons.append("rho-nonzero")
            if p.zeta > tol:
                reasons.append("zeta-nonzero")
            vol_drift = (
                p.lambda_ * np.exp(-y) + p.mu - 0.5 * p.zeta**2 * np.exp(2.0 * y * (p.alpha - 1.0))
            )
            if abs(vol_drift) > tol:
                reasons.append("constraint-violated")
    return DegeneracyClass(class_="degenerate" if reasons else "single", reasons=reasons)


def momentum_action_check(
    grid: GridSpec, state: ValueField, axis: int = 0, k: int = 2
) -> float:
    """min |d state / d axis| / |state| over interior nodes.

    A value bounded away from zero certifies that the momentum does not
    annihilate the state (broken symmetry); about zero certifies annihilation.

    Raises:
        ParameterError: If the state is not strictly positive
    """
    if np.any(state.values <= 0.0):
        raise ParameterError("momentum_action_check needs a strictly positive state")
    values = state.values.reshape(grid.shape)
    h = grid.h_x if axis == 0 else grid.h_y
    if h is None:
        raise ParameterError(f"Grid has no axis {axis}")
    derivative = np.gradient(values, h, axis=axis).ravel()
    mask = grid.interior_mask(k)
    return float(np.min(np.abs(derivative[mask]) / state.values[mask]))


def vacuum_power_check(phi_vac: float, n: int, grid: Optional[GridSpec] = None) -> Dict[str, Any]:
    """Evaluate phi_vac^n as a candidate vacuum price and locate it on the grid."""
    value = float(phi_vac**n)
    on_grid = None
    if grid is not None:
        on_grid = bool(value > 0.0 and grid.x_min <= np.log(value) <= grid.x_max)
    return {"n": n, "S_vac": value, "positive": value > 0.0, "on_grid": on_grid}


def vacuum_report(
    p: Union[BSParams, MGParams],
    y: Optional[float] = None,
    grid: Optional[GridSpec] = None,
    extended: bool = False,
    tol: float = DEFAULT_TOL,
    power: int = 1,
) -> VacuumReport:
    """Vacuum fields, degeneracy class and supporting diagnostics.

    Raises:
        ConstraintConflict: If the extended two-field solve is requested with zeta = 0
    """
    if isinstance(p, BSParams):
        drift, stationary = bs_vacuum_field(p), bs_vacuum_field(p, "stationary-point")
        operator = build_bs_hamiltonian(grid, p) if grid is not None else None
        model = "bs"
    else:
        if y is None:
            raise ParameterError("Merton-Garman vacuum analysis needs a log-variance y")
        drift, stationary = mg_vacuum_field(p, y), mg_vacuum_field(p, y, "stationary-point")
        operator = build_mg_slice(grid.x_slice(), p, y) if grid is not None else None
        model = "mg"

    report = VacuumReport(
        model=model,
        y=y,
        drift_sign=drift,
        stationary_point=stationary,
        degeneracy=classify_degeneracy(p, y, extended=False, tol=tol),
        hermiticity_defect=hermiticity_defect(operator) if operator is not None else None,
        power_check=vacuum_power_check(drift.phi_x_vac, power, grid),
    )
    if model == "bs":
        report.quadratic_at_vacuum = float(stationary_quadratic(p)(stationary.phi_x_vac))
    if model == "mg" and extended:
        report.extended_degeneracy = classify_degeneracy(p, y, extended=True, tol=tol)
        try:
            report.system = solve_mg_vacuum_system(p, y)
        except DegenerateSystemError as e:
            raise ConstraintConflict(f"Extended vacuum analysis requested: {e}") from e
        report.system_residuals = vacuum_system_residuals(p, y, report.system)
        report.quadratic_at_vacuum = float(
            stationary_quadratic(p, y)(report.system.phi_x_vac, report.system.phi_y_vac)
        )
        report.extended_lambda = extended_lambda(p, y)
    return report
