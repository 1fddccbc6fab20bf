"""CLI for hamfin."""

import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel

from hamfin.config import GridSection, RunConfig, create_default_config
from hamfin.errors import ConfigError, HamfinError, NumericalFailure, ParameterError
from hamfin.evolution import (
    PricingResult,
    bs_closed_form,
    down_and_out_closed_form,
    price_double_knock_out,
    price_down_and_out,
    price_mg,
    price_vanilla,
    spatial_order,
)
from hamfin.martingale import (
    bs_vacuum_field,
    classify_degeneracy,
    extended_constraint_residual,
    mg_vacuum_field,
    momentum_action_check,
    refinement_study,
    vacuum_report,
)
from hamfin.operators.base import BSParams, GridSpec, ValueField, hermiticity_defect
from hamfin.operators.black_scholes import build_bs_hamiltonian
from hamfin.operators.merton_garman import build_mg_hamiltonian
from hamfin.potentials import (
    DENSE_LIMIT,
    hermitize,
    quartic_flatness_report,
    quartic_samples,
    quartic_vacuum,
    spectrum_reality,
)
from hamfin.reports import write_csv, write_json
from hamfin.simulate import SDEParams, correlation_sweep, martingale_test, mc_price, simulate

# Setup logging
logging.basicConfig(
    level=logging.INFO,
    format="%(message)s",
    handlers=[RichHandler(rich_tracebacks=True)],
)
logger = logging.getLogger(__name__)

# Create Typer app
app = typer.Typer(
    name="hamfin",
    help="Hamiltonian option pricing, martingale vacua and symmetry breaking",
)
console = Console()

DEFAULT_OUT = Path("hamfin-out")
CONFIG_HELP = "Config file path (default: ./hamfin.yaml)"

Action = Callable[[RunConfig, Path], Tuple[List[Path], str]]


def _resolve(config: RunConfig, seed: Optional[int], tol: Optional[float]) -> RunConfig:
    """Apply command-line overrides to the loaded config."""
    update = {}
    if seed is not None and config.mc is not None:
        update["mc"] = config.mc.model_copy(update={"seed": seed})
    if tol is not None:
        update["analysis"] = config.analysis.model_copy(update={"tol": tol})
    return config.model_copy(update=update) if update else config


def _run(
    action: Action,
    what: str,
    config_path: Optional[Path],
    out: Path,
    seed: Optional[int],
    tol: Optional[float],
    verbose: bool,
):
    """Load the config, run one analysis and map failures to exit codes."""
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        config = _resolve(RunConfig.load(config_path), seed, tol)
        written, headline = action(config, out)
    except HamfinError as e:
        console.print(f"[red]Error: {e}[/red]")
        logger.exception(f"Failed to {what}")
        sys.exit(e.exit_code)
    except Exception as e:
        console.print(f"[red]Error: {e}[/red]")
        logger.exception(f"Failed to {what}")
        sys.exit(1)

    console.print(Panel(headline, title=what.capitalize(), border_style="green"))
    for path in written:
        console.print(f"[dim]Wrote {path}[/dim]")


def _price(config: RunConfig, out: Path) -> Tuple[List[Path], str]:
    config.require("model", "grid", "evolution")
    m, evo = config.model, config.evolution
    grid = config.grid.pricing_grid(m, evo.T)
    spots = sorted(set(config.analysis.spots) | {m.S0})
    payoff = m.payoff()
    oracle = None

    if m.kind == "mg":
        if m.product != "vanilla":
            raise ConfigError("Merton-Garman pricing supports vanilla payoffs only")
        p = m.mg()

        def pricer(g: GridSpec) -> PricingResult:
            return price_mg(g, p, payoff, evo, spots, m.V0)

    else:
        p = m.bs()

        def builder(g: GridSpec):
            return build_bs_hamiltonian(g, p)

        if m.product == "vanilla":

            def pricer(g: GridSpec) -> PricingResult:
                return price_vanilla(builder, g, payoff, evo, p.r, spots)

            def oracle(s):
                return bs_closed_form(s, m.strike, p.r, p.sigma, evo.T, m.option)

        elif m.product == "down-and-out":
            if m.barrier is None:
                raise ConfigError("model.barrier is required for a down-and-out option")
            if m.barrier >= m.S0:
                raise ParameterError(f"Barrier {m.barrier} must lie below the spot {m.S0}")

            def pricer(g: GridSpec) -> PricingResult:
                return price_down_and_out(builder, g, m.barrier, payoff, evo, p.r, spots)

            if m.option == "call" and m.barrier <= m.strike:

                def oracle(s):
                    return down_and_out_closed_form(s, m.strike, m.barrier, p.r, p.sigma, evo.T)

        else:
            if m.barrier is None or m.upper_barrier is None:
                raise ConfigError("model.barrier and model.upper_barrier are required")
            if not m.barrier < m.S0 < m.upper_barrier:
                raise ParameterError(
                    f"Spot {m.S0} must lie between the barriers {m.barrier} and {m.upper_barrier}"
                )

            def pricer(g: GridSpec) -> PricingResult:
                return price_double_knock_out(
                    builder, g, m.barrier, m.upper_barrier, payoff, evo, p.r, spots
                )

    result = pricer(grid)
    result.diagnostics["spatial_order"] = spatial_order(pricer, grid, m.S0, result.price_at[m.S0])
    if m.kind == "mg":
        row = int(np.argmin(np.abs(grid.y - np.log(m.V0))))
        xs, values = grid.x, result.field.values.reshape(grid.shape)[:, row]
    else:
        xs, values = result.grid.x, result.field.values

    report = {
        "command": "price",
        "config": config.echo(),
        "price_at": {f"{s:g}": v for s, v in result.price_at.items()},
        "diagnostics": result.diagnostics,
    }
    headline = f"{m.kind} {m.product} {m.option}: price {result.price_at[m.S0]:.6f} at S0={m.S0:g}"
    if oracle is not None:
        reference = {f"{s:g}": oracle(s) for s in result.price_at}
        exact = oracle(m.S0)
        report["oracle"] = reference
        report["oracle_abs_rel_err"] = abs(result.price_at[m.S0] - exact) / abs(exact)
        headline += f"\nclosed form {exact:.6f}, relative error {report['oracle_abs_rel_err']:.2e}"

    frame = pd.DataFrame({"S": np.exp(xs), "price": values})
    return [write_csv(out / "price.csv", frame), write_json(out / "report.json", report)], headline


def _martingale(config: RunConfig, out: Path) -> Tuple[List[Path], str]:
    config.require("model")
    m = config.model
    sections = config.grid or GridSection()
    tol = config.analysis.tol

    if m.kind == "bs":
        p = m.bs()
        grids = [sections.analysis_grid(n) for n in sections.refinements]

        def state(g: GridSpec) -> ValueField:
            return ValueField.from_function(g, np.exp, label="e^x")

        report = refinement_study(lambda g: build_bs_hamiltonian(g, p), state, grids, tol=tol)
        momentum = {"x": momentum_action_check(grids[-1], state(grids[-1]))}
    else:
        p = m.mg()
        grids = [sections.analysis_grid(n, two_d=True) for n in sections.refinements]

        def state(g: GridSpec) -> ValueField:
            return ValueField.from_function(g, lambda x, y: np.exp(x + y), label="e^(x+y)")

        constraint = float(np.max(np.abs(extended_constraint_residual(p, grids[-1].y))))
        report = refinement_study(
            lambda g: build_mg_hamiltonian(g, p),
            state,
            grids,
            constraint_residual=constraint,
            tol=tol,
        )
        finest = state(grids[-1])
        momentum = {
            "x": momentum_action_check(grids[-1], finest, axis=0),
            "y": momentum_action_check(grids[-1], finest, axis=1),
        }

    data = {
        "command": "martingale",
        "config": config.echo(),
        "report": report.to_dict(),
        "momentum_action": momentum,
    }
    order = report.refinement_order
    headline = (
        f"{report.state_label}: interior residual {report.interior_residual_max:.3e}, "
        f"order {'n/a' if order is None else f'{order:.2f}'}"
    )
    return [write_json(out / "martingale.json", data)], headline


def _vacuum(config: RunConfig, out: Path) -> Tuple[List[Path], str]:
    config.require("model")
    m, a = config.model, config.analysis
    grid = (config.grid or GridSection()).analysis_grid()

    if m.kind == "bs":
        report = vacuum_report(m.bs(), grid=grid, tol=a.tol, power=a.power)
    else:
        report = vacuum_report(
            m.mg(), y=a.y, grid=grid, extended=a.extended, tol=a.tol, power=a.power
        )
    data = {"command": "vacuum", "config": config.echo(), **report.to_dict()}
    written = [write_json(out / "vacuum.json", data)]

    if a.sweep_r:
        rows = []
        for r in a.sweep_r:
            if m.kind == "bs":
                p = BSParams(r=r, sigma=m.sigma)
                phi, verdict = bs_vacuum_field(p), classify_degeneracy(p, tol=a.tol)
            else:
                p = m.mg().model_copy(update={"r": r})
                phi, verdict = mg_vacuum_field(p, a.y), classify_degeneracy(p, a.y, tol=a.tol)
            rows.append({"r": r, "phi_vac": phi.phi_x_vac, "class": verdict.class_})
        written.append(write_csv(out / "vacuum_sweep.csv", pd.DataFrame(rows)))

    headline = (
        f"phi_vac = {report.drift_sign.phi_x_vac:.6g} (stationary point "
        f"{report.stationary_point.phi_x_vac:.6g}), vacuum {report.degeneracy.class_}"
    )
    if report.degeneracy.reasons:
        headline += f": {', '.join(report.degeneracy.reasons)}"
    return written, headline


def _hermitize(config: RunConfig, out: Path) -> Tuple[List[Path], str]:
    config.require("model")
    m = config.model
    sections = config.grid or GridSection()
    grid = GridSpec(
        x_min=-3.0 if sections.x_min is None else sections.x_min,
        x_max=3.0 if sections.x_max is None else sections.x_max,
        n_x=sections.n_x,
    )
    potential = m.potential_spec()
    result = hermitize(grid, m.sigma, potential)

    imaginary = spectrum_reality(result.H_herm) if result.H_herm.n <= DENSE_LIMIT else None
    data = {
        "command": "hermitize",
        "config": config.echo(),
        "potential": potential.kind,
        **result.to_dict(),
        "hermiticity_defect": hermiticity_defect(result.H_herm),
        "max_relative_imaginary": imaginary,
    }
    if imaginary is None:
        data["note"] = f"dense spectrum skipped for n > {DENSE_LIMIT}"

    headline = f"{potential.kind} potential: similarity residual {result.similarity_residual:.2e}"
    if result.alpha is not None:
        headline += f"\nalpha = {result.alpha:.6g}, gamma = {result.gamma:.6g}"
    return [write_json(out / "hermitize.json", data)], headline


def _simulate(config: RunConfig, out: Path) -> Tuple[List[Path], str]:
    config.require("model", "mc")
    m, mc = config.model, config.mc
    phi = m.r if mc.phi is None else mc.phi
    if m.kind == "bs":
        params = SDEParams(model="gbm", phi=phi, S0=m.S0, sigma=m.sigma, exact=mc.exact)
    else:
        params = SDEParams(model="mg", phi=phi, S0=m.S0, V0=m.V0, mg=m.mg(), exact=False)

    ensemble = simulate(params, mc.T, mc.n_steps, mc.n_paths, mc.seed, mc.workers)
    stat = martingale_test(ensemble, m.r)
    price, std_error = mc_price(ensemble, m.payoff(), m.r)
    pricing = {"mc_price": price, "std_error": std_error}
    if m.kind == "bs" and not stat.expected_fail:
        exact = bs_closed_form(m.S0, m.strike, m.r, m.sigma, mc.T, m.option)
        pricing["oracle"] = exact
        pricing["delta"] = price - exact
        pricing["delta_in_std_errors"] = (price - exact) / std_error if std_error > 0 else None

    data = {
        "command": "simulate",
        "config": config.echo(),
        "ensemble": ensemble.summary(),
        "martingale": asdict(stat),
        "expected_fail": stat.expected_fail,
        "pricing": pricing,
    }
    written = []
    if mc.rho_sweep and m.kind == "mg":
        sweep = correlation_sweep(
            params, mc.rho_sweep, mc.T, mc.n_steps, mc.n_paths, mc.seed, mc.workers
        )
        data["rho_sweep_max_abs_error"] = float(
            np.max(np.abs(sweep["rho_in"] - sweep["rho_realized"]))
        )
        written.append(write_csv(out / "rho_sweep.csv", sweep))
    if mc.write_paths:
        written.append(write_csv(out / "paths.csv", ensemble.to_frame()))
    written.insert(0, write_json(out / "mc.json", data))

    if ensemble.stability_warning:
        raise NumericalFailure(
            f"Variance floor hit on {ensemble.floor_hit_fraction:.2%} of steps "
            f"(budget 1%); results written to {out}"
        )
    headline = (
        f"discounted mean {stat.discounted_mean:.6f} +/- {stat.std_error:.2e}, "
        f"z = {stat.z_score:.2f}{' (expected to fail)' if stat.expected_fail else ''}\n"
        f"MC price {price:.6f} +/- {std_error:.2e}"
    )
    return written, headline


def _ssb(config: RunConfig, out: Path) -> Tuple[List[Path], str]:
    config.require("model")
    m, a = config.model, config.analysis
    q = m.quartic_spec()
    manifold = quartic_vacuum(q)
    H_base = build_bs_hamiltonian((config.grid or GridSection()).analysis_grid(), m.bs())
    flatness = quartic_flatness_report(q, H_base, a.window, a.bump_width)

    data = {
        "command": "ssb",
        "config": config.echo(),
        "magnitude": manifold.magnitude,
        "representatives": manifold.representatives,
        "multiplicity_note": manifold.multiplicity_note,
        "alternate_magnitude": manifold.alternate_magnitude,
        "alternate_agrees": manifold.alternate_agrees,
        "formula_note": (
            "magnitude solves -2 mu2 S + 4 omega S^3 = 0; |mu|/(sqrt(2) omega) "
            "only agrees when omega = 1"
        ),
        "flatness": flatness.to_dict(),
    }
    written = [
        write_json(out / "ssb.json", data),
        write_csv(out / "potential.csv", quartic_samples(q, a.samples)),
    ]
    headline = (
        f"|S_vac| = {manifold.magnitude:.10g}, representatives "
        f"{', '.join(f'{v:.6g}' for v in manifold.representatives)}\n"
        f"kinetic/potential ratio {flatness.ratio:.3e}"
    )
    return written, headline


@app.command()
def init(
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    force: bool = typer.Option(False, "--force", "-f", help="Overwrite existing config"),
):
    """Initialize a run configuration file."""
    if config_path is None:
        config_path = RunConfig.get_config_path()

    if config_path.exists() and not force:
        console.print(f"[yellow]Config already exists at: {config_path}[/yellow]")
        console.print("Use --force to overwrite")
        return

    config = create_default_config()
    config.save(config_path)
    console.print(f"[green]Config created at: {config_path}[/green]")


@app.command()
def price(
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    out: Path = typer.Option(DEFAULT_OUT, "--out", "-o", help="Output directory"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Monte Carlo seed override"),
    tol: Optional[float] = typer.Option(None, "--tol", help="Analysis tolerance override"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
):
    """Price an option by evolving the payoff with the Hamiltonian."""
    _run(_price, "price", config_path, out, seed, tol, verbose)


@app.command()
def martingale(
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    out: Path = typer.Option(DEFAULT_OUT, "--out", "-o", help="Output directory"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Monte Carlo seed override"),
    tol: Optional[float] = typer.Option(None, "--tol", help="Analysis tolerance override"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
):
    """Check that the Hamiltonian annihilates the martingale state under refinement."""
    _run(_martingale, "check the martingale state", config_path, out, seed, tol, verbose)


@app.command()
def vacuum(
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    out: Path = typer.Option(DEFAULT_OUT, "--out", "-o", help="Output directory"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Monte Carlo seed override"),
    tol: Optional[float] = typer.Option(None, "--tol", help="Analysis tolerance override"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
):
    """Compute vacuum fields and classify the vacuum as single or degenerate."""
    _run(_vacuum, "analyse the vacuum", config_path, out, seed, tol, verbose)


@app.command(name="hermitize")
def hermitize_command(
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    out: Path = typer.Option(DEFAULT_OUT, "--out", "-o", help="Output directory"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Monte Carlo seed override"),
    tol: Optional[float] = typer.Option(None, "--tol", help="Analysis tolerance override"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
):
    """Conjugate the effective Hamiltonian with a potential into a Hermitian one."""
    _run(_hermitize, "hermitize", config_path, out, seed, tol, verbose)


@app.command(name="simulate")
def simulate_command(
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    out: Path = typer.Option(DEFAULT_OUT, "--out", "-o", help="Output directory"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Monte Carlo seed override"),
    tol: Optional[float] = typer.Option(None, "--tol", help="Analysis tolerance override"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
):
    """Simulate paths and test the discounted price for the martingale property."""
    _run(_simulate, "simulate", config_path, out, seed, tol, verbose)


@app.command()
def ssb(
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    out: Path = typer.Option(DEFAULT_OUT, "--out", "-o", help="Output directory"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Monte Carlo seed override"),
    tol: Optional[float] = typer.Option(None, "--tol", help="Analysis tolerance override"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
):
    """Find the degenerate vacua of the quartic symmetry-breaking potential."""
    _run(_ssb, "analyse symmetry breaking", config_path, out, seed, tol, verbose)


if __name__ == "__main__":
    app()
