"""Run configuration for the hamfin commands."""

from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from hamfin.errors import ConfigError
from hamfin.evolution import EvolutionConfig, PayoffSpec
from hamfin.operators.base import BSParams, GridSpec, MGParams
from hamfin.potentials import PotentialSpec

SECTIONS = ("model", "grid", "evolution", "mc", "analysis")


class ModelSection(BaseModel):
    """Market model, contract and potential parameters."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    kind: Literal["bs", "mg"] = "bs"
    r: float = 0.05
    sigma: float = 0.2
    lambda_: float = Field(default=0.0, alias="lambda")
    mu: float = 0.0
    zeta: float = 0.3
    rho: float = 0.0
    alpha: float = 1.0
    S0: float = 100.0
    V0: float = 0.04
    option: Literal["call", "put"] = "call"
    strike: float = 100.0
    product: Literal["vanilla", "down-and-out", "double-knock-out"] = "vanilla"
    barrier: Optional[float] = None
    upper_barrier: Optional[float] = None
    potential: Optional[PotentialSpec] = None
    potential_csv: Optional[Path] = None
    mu2: Optional[float] = None
    omega: Optional[float] = None

    def bs(self) -> BSParams:
        return BSParams(r=self.r, sigma=self.sigma)

    def mg(self) -> MGParams:
        return MGParams(
            r=self.r,
            lambda_=self.lambda_,
            mu=self.mu,
            zeta=self.zeta,
            rho=self.rho,
            alpha=self.alpha,
        )

    def payoff(self) -> PayoffSpec:
        return PayoffSpec(kind=self.option, strike=self.strike)

    def potential_spec(self) -> PotentialSpec:
        """The configured potential; a constant V = r when none is given."""
        if self.potential_csv is not None:
            return PotentialSpec.from_csv(self.potential_csv)
        if self.potential is not None:
            return self.potential
        return PotentialSpec(kind="constant", value=self.r)

    def quartic_spec(self) -> PotentialSpec:
        if self.mu2 is None or self.omega is None:
            raise ConfigError("model.mu2 and model.omega are required for the quartic potential")
        return PotentialSpec(kind="quartic", mu2=self.mu2, omega=self.omega)


class GridSection(BaseModel):
    """Spatial grid. Without x_min/x_max the pricing grid is centred on ln S0."""

    model_config = ConfigDict(extra="forbid")

    x_min: Optional[float] = None
    x_max: Optional[float] = None
    n_x: int = 1025
    width: float = 8.0
    y_min: Optional[float] = None
    y_max: Optional[float] = None
    n_y: Optional[int] = None
    refinements: List[int] = Field(default_factory=lambda: [257, 513, 1025])

    def pricing_grid(self, model: ModelSection, T: float) -> GridSpec:
        if self.x_min is None or self.x_max is None:
            sigma = np.sqrt(model.V0) if model.kind == "mg" else model.sigma
            base = GridSpec.pricing(model.S0, sigma, T, self.n_x, self.width)
            x_min, x_max = base.x_min, base.x_max
        else:
            x_min, x_max = self.x_min, self.x_max
        if model.kind == "mg" and (self.y_min is None or self.y_max is None or self.n_y is None):
            raise ConfigError("grid.y_min, grid.y_max and grid.n_y are required for model kind mg")
        return GridSpec(
            x_min=x_min,
            x_max=x_max,
            n_x=self.n_x,
            y_min=self.y_min,
            y_max=self.y_max,
            n_y=self.n_y,
        )

    def analysis_grid(self, n_x: Optional[int] = None, two_d: bool = False) -> GridSpec:
        """Grid for operator checks, [-4, 4] in x unless configured."""
        n = n_x or self.n_x
        x_min = -4.0 if self.x_min is None else self.x_min
        x_max = 4.0 if self.x_max is None else self.x_max
        if not two_d:
            return GridSpec(x_min=x_min, x_max=x_max, n_x=n)
        y_min = np.log(0.01) if self.y_min is None else self.y_min
        y_max = np.log(0.25) if self.y_max is None else self.y_max
        return GridSpec(x_min=x_min, x_max=x_max, n_x=n, y_min=y_min, y_max=y_max, n_y=n)


class McSection(BaseModel):
    """Monte Carlo sizes, seed and optional outputs."""

    model_config = ConfigDict(extra="forbid")

    T: float = Field(default=1.0, gt=0)
    n_paths: int = Field(default=100_000, ge=1)
    n_steps: int = Field(default=250, ge=1)
    seed: int = 42
    workers: int = Field(default=4, ge=1)
    phi: Optional[float] = None
    exact: bool = True
    rho_sweep: List[float] = Field(default_factory=list)
    write_paths: bool = False


class AnalysisSection(BaseModel):
    """Tolerances and knobs of the vacuum, martingale and flatness analyses."""

    model_config = ConfigDict(extra="forbid")

    tol: float = Field(default=1e-10, gt=0)
    y: float = float(np.log(0.04))
    extended: bool = False
    sweep_r: Optional[List[float]] = None
    power: int = 1
    spots: List[float] = Field(default_factory=lambda: [90.0, 100.0, 110.0])
    window: float = 0.1
    bump_width: Optional[float] = 0.5
    samples: int = 401


class RunConfig(BaseModel):
    """Main run configuration; every section is optional until a command needs it."""

    model_config = ConfigDict(extra="forbid")

    model: Optional[ModelSection] = None
    grid: Optional[GridSection] = None
    evolution: Optional[EvolutionConfig] = None
    mc: Optional[McSection] = None
    analysis: AnalysisSection = Field(default_factory=AnalysisSection)

    @classmethod
    def get_config_path(cls) -> Path:
        """Get the default config file path."""
        return Path.cwd() / "hamfin.yaml"

    @classmethod
    def load(cls, config_path: Optional[Path] = None) -> "RunConfig":
        """Load a configuration file.

        Args:
            config_path: YAML file; the default path falls back to the
                built-in defaults when it does not exist

        Returns:
            Validated RunConfig

        Raises:
            ConfigError: If the file is missing, unreadable or invalid
        """
        if config_path is None:
            config_path = cls.get_config_path()
            if not config_path.exists():
                return create_default_config()

        try:
            with open(config_path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"Cannot read config {config_path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config {config_path} must be a mapping of sections")

        try:
            return cls(**data)
        except ValidationError as e:
            raise ConfigError(f"Invalid config {config_path}:\n{e}") from e

    def save(self, config_path: Optional[Path] = None) -> None:
        """Save configuration to file."""
        if config_path is None:
            config_path = self.get_config_path()

        config_path.parent.mkdir(parents=True, exist_ok=True)

        with open(config_path, "w", encoding="utf-8") as f:
            yaml.safe_dump(
                self.model_dump(mode="json", by_alias=True, exclude_none=True),
                f,
                default_flow_style=False,
                sort_keys=False,
            )

    def require(self, *sections: str) -> None:
        """Raise ConfigError unless every named section is present."""
        missing = [name for name in sections if getattr(self, name) is None]
        if missing:
            raise ConfigError(f"Missing config section(s): {', '.join(missing)}")

    def echo(self) -> dict:
        """The resolved configuration as embedded in every report."""
        return self.model_dump(mode="json", by_alias=True)


def create_default_config() -> RunConfig:
    """Create a default configuration for the Black-Scholes desk example."""
    return RunConfig(
        model=ModelSection(),
        grid=GridSection(),
        evolution=EvolutionConfig(T=1.0),
        mc=McSection(),
        analysis=AnalysisSection(),
    )
