"""
Command Line Interface for the Fuel-Cell Hybrid EMS

This module exposes the library as a set of commands (profile, fit,
optimize, dp, simulate, compare). Every command writes into its own
timestamped run directory together with a manifest and a run log.

Author: noomesk
"""

import functools
import json
import logging
import time
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import click
import numpy as np
import pandas as pd
import toml
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from . import __version__
from .battery import R2_THRESHOLD, BatteryModelError, BatteryState, surrogate_check
from .config import ConfigError, RunConfig, load_config
from .dp import DpError, DpGrids, dump_values, policy_stats, rollout, solve_dp
from .fitting import FitError
from .formulation import FormulationError, build, dump_problem, extract_schedule, objective_breakdown, validate
from .fuelcell import FuelCellModelError
from .logs import configure_logging, console
from .mpc import (CostBreakdown, MpcError, account_costs, battery_fidelity, cumulative_costs, curtail_demand,
                  regeneration_limit, run_mpc, simulate_schedule, stack_power_matrix)
from .mps import MpsExportError, export_mps
from .parser import ParsingError
from .solver import INFEASIBLE, UNBOUNDED, SolverError, solve
from .stats import (ComparisonError, RunRecord, compare, format_comparison_table, load_run, save_report, save_run,
                    write_manifest)
from .vehicle import CycleError, PowerProfile, load_drive_cycle, power_demand, resample, save_profile


logger = logging.getLogger(__name__)


class ValidationFailure(click.ClickException):
    """Bad input data, configuration or options."""
    exit_code = 2


class FitFailure(click.ClickException):
    """A curve or surrogate fit failed."""
    exit_code = 3


class InfeasibleRun(click.ClickException):
    """The optimizer proved the problem infeasible."""
    exit_code = 4


class NoIncumbent(click.ClickException):
    """A limit stopped the solver before any feasible schedule was found."""
    exit_code = 5


VALIDATION_ERRORS = (ConfigError, ParsingError, CycleError, BatteryModelError, FuelCellModelError,
                     FormulationError, ComparisonError, SolverError, MpsExportError, FileNotFoundError)


def handle_errors(func):
    """Translate domain exceptions into click exceptions with stable exit codes."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except click.ClickException:
            raise
        except FitError as e:
            raise FitFailure(f"Fit failed: {e}")
        except MpcError as e:
            if e.status in (INFEASIBLE, UNBOUNDED):
                raise InfeasibleRun(str(e))
            if e.status is not None:
                raise NoIncumbent(str(e))
            raise ValidationFailure(str(e))
        except DpError as e:
            raise InfeasibleRun(f"DP benchmark: {e}")
        except VALIDATION_ERRORS as e:
            raise ValidationFailure(str(e))
        except Exception as e:
            logger.debug("Unexpected error", exc_info=True)
            raise click.ClickException(f"Unexpected error: {str(e)}")
    return wrapper


def make_run_dir(out: str, command: str) -> Path:
    """Create ``<out>/<command>-YYYYmmdd-HHMMSS[-n]``."""
    base = Path(out) / f"{command}-{datetime.now().strftime('%Y%m%d-%H%M%S')}"
    run_dir, n = base, 0
    while run_dir.exists():
        n += 1
        run_dir = base.with_name(f"{base.name}-{n}")
    run_dir.mkdir(parents=True)
    return run_dir


class RunContext:
    """Run directory, log file and manifest bookkeeping of one command."""

    def __init__(self, command: str, out: Optional[str], config: Optional[RunConfig], verbose: bool):
        self.command = command
        self.config = config
        self.started_at = datetime.now()
        root = out if out is not None else (str(config.output_dir) if config is not None else "runs")
        self.run_dir = make_run_dir(root, command)
        self.outputs: List[str] = []
        configure_logging(verbose, str(self.run_dir / "run.log"))
        logger.info("%s run in %s", command, self.run_dir)

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def add(self, *paths) -> None:
        self.outputs.extend(str(p) for p in paths)

    def finish(self, settings: Dict) -> str:
        config_hash = self.config.config_hash if self.config is not None else ""
        manifest = write_manifest(str(self.run_dir), self.command, config_hash, settings,
                                  self.outputs + [str(self.path("run.log"))], started_at=self.started_at)
        console.print(f"[green]Run directory:[/green] {self.run_dir}")
        return manifest


def _write_json(data: Dict, path: Path) -> str:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
    return str(path)


def _write_frame(frame: pd.DataFrame, path: Path) -> str:
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    return str(path)


def _display_breakdown(breakdown: CostBreakdown, title: str):
    """Display a cost breakdown in a table."""
    table = Table(title=title, show_header=True)
    table.add_column("Category", style="cyan")
    table.add_column("Cost ($)", style="green", justify="right")
    for key, value in breakdown.as_dict().items():
        if key == "total":
            continue
        table.add_row(key, f"{value:.6f}")
    table.add_row("[bold]total[/bold]", f"[bold]{breakdown.total:.6f}[/bold]")
    console.print(table)


def _spinner():
    return Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"),
                    console=console, transient=True)


def main():
    """Main CLI entry point."""
    cli()


@click.group()
@click.version_option(__version__, prog_name="fchev-ems")
@click.option('--verbose', '-v', is_flag=True, help='Enable debug logging')
@click.pass_context
def cli(ctx, verbose):
    """Health-aware energy management for a multi-stack fuel-cell hybrid bus."""
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose


def config_option(func):
    return click.option('--config', '-c', 'config_path', type=click.Path(exists=True, dir_okay=False),
                        help='TOML or JSON run configuration (defaults if omitted)')(func)


def out_option(func):
    return click.option('--out', '-o', type=click.Path(file_okay=False),
                        help='Parent directory for the run directory (default: run.output_dir)')(func)


@cli.command()
@config_option
@out_option
@click.option('--cycle', type=click.Path(exists=True, dir_okay=False), help='Drive-cycle CSV (t,v[,grade])')
@click.option('--dt', type=float, help='Resample the profile to this step in seconds')
@click.pass_context
@handle_errors
def profile(ctx, config_path, out, cycle, dt):
    """Convert a drive cycle into an electrical power-demand profile."""
    overrides = {"run": {}}
    if cycle:
        overrides["run"]["cycle"] = str(Path(cycle).resolve())
    config = load_config(config_path, overrides)
    run = RunContext("profile", out, config, ctx.obj["verbose"])

    demand = power_demand(load_drive_cycle(config.data["run"]["cycle"]), config.vehicle)
    if dt:
        demand = resample(demand, dt)
    run.add(save_profile(demand, str(run.path("profile.csv"))))

    console.print(Panel.fit(
        f"[bold blue]Power profile[/bold blue]\n"
        f"{demand.n_steps} steps of {demand.dt:g} s, peak {demand.demand.max():.2f} kW, "
        f"minimum {demand.demand.min():.2f} kW",
        border_style="blue"
    ))
    run.finish({"cycle": config.data["run"]["cycle"], "dt": demand.dt})


@cli.command()
@config_option
@out_option
@click.option('--fuel-curve', type=click.Path(exists=True, dir_okay=False),
              help='Fuel-curve samples (p_kw,mdot_kg_per_s) to fit instead of the configured file')
@click.pass_context
@handle_errors
def fit(ctx, config_path, out, fuel_curve):
    """Fit the fuel-curve and battery surrogates; write a config fragment."""
    overrides = {}
    if fuel_curve:
        overrides = {"fuelcell": {"fuel_curve": {"file": str(Path(fuel_curve).resolve())}}}
    config = load_config(config_path, overrides)
    run = RunContext("fit", out, config, ctx.obj["verbose"])

    with _spinner() as progress:
        progress.add_task("Fitting surrogates...", total=None)
        fragment = config.surrogate_fragment()

    path = run.path("fit.toml")
    with open(path, 'w', encoding='utf-8') as f:
        toml.dump(fragment, f)
    run.add(path)

    table = Table(title="Fitted coefficients", show_header=True)
    table.add_column("Key", style="cyan")
    table.add_column("Value", style="green", justify="right")
    for section, values in (("battery.surrogate", fragment["battery"]["surrogate"]),
                            ("fuelcell.fuel_curve", fragment["fuelcell"]["fuel_curve"])):
        for key, value in values.items():
            table.add_row(f"{section}.{key}", f"{value:.6g}" if isinstance(value, float) else str(value))
    console.print(table)
    if not surrogate_check(config.surrogate):
        console.print(f"[yellow]Battery current fit R² is below {R2_THRESHOLD}[/yellow]")
    run.finish({"fuel_curve": config.data["fuelcell"]["fuel_curve"].get("file")})


def _mission_window(config: RunConfig, n_steps: int) -> PowerProfile:
    """First ``n_steps`` of the profile, regen-curtailed at the initial SOC when curtailment is on."""
    profile = config.profile
    if profile.n_steps < n_steps:
        raise ValidationFailure(f"Profile covers {profile.n_steps} steps, the horizon needs {n_steps}")
    window = profile.window(0, n_steps)
    if config.mpc_config.curtailment:
        horizon = config.horizon(n_steps)
        demand, _ = curtail_demand(window.demand, regeneration_limit(config.models, horizon.soc_initial))
        window = PowerProfile(window.dt, demand)
    return window


def _schedule_frame(schedule) -> pd.DataFrame:
    frame = pd.DataFrame({
        "step": np.arange(schedule.n_steps),
        "t_s": np.arange(schedule.n_steps) * schedule.dt,
        "demand_kw": schedule.demand,
    })
    for j in range(schedule.n_stacks):
        frame[f"p_fc_{j + 1}_kw"] = schedule.fc_power[:, j]
        frame[f"on_{j + 1}"] = schedule.fc_on[:, j].astype(int)
    frame["p_bat_kw"] = schedule.battery_power
    frame["i_plan_a"] = schedule.battery_current
    frame["soc_plan_pct"] = schedule.soc
    return frame


@cli.command()
@config_option
@out_option
@click.option('--mode', type=click.Choice(['isc', 'csc']), help='Stack control mode (default: run.mode)')
@click.option('--export-mps', 'write_mps', is_flag=True, help='Also write the problem as problem.mps')
@click.option('--dump-problem', 'write_listing', is_flag=True, help='Also write a labeled listing as problem.txt')
@click.pass_context
@handle_errors
def optimize(ctx, config_path, out, mode, write_mps, write_listing):
    """Solve one MIQP over the whole horizon and re-simulate the schedule."""
    overrides = {"run": {"mode": mode}} if mode else {}
    config = load_config(config_path, overrides)
    run = RunContext("optimize", out, config, ctx.obj["verbose"])
    started = time.perf_counter()

    n_steps = config.mpc_config.steps(config.dt)[0]
    horizon = config.horizon(n_steps)
    window = _mission_window(config, n_steps)
    problem = build(window, horizon, config.models)
    check = validate(problem)
    if not check["is_valid"]:
        raise ValidationFailure("Formulation check failed: "
                                + "; ".join(f["message"] for f in check["findings"]))
    if write_mps:
        run.add(export_mps(problem, str(run.path("problem.mps"))))
    if write_listing:
        run.add(dump_problem(problem, str(run.path("problem.txt"))))

    with _spinner() as progress:
        progress.add_task(f"Solving {problem.n_variables} variables, {problem.n_integers} binaries...", total=None)
        solution = solve(problem, config.solver_options)
    if solution.status in (INFEASIBLE, UNBOUNDED):
        raise InfeasibleRun(f"Problem is {solution.status} after {solution.nodes_explored} nodes")
    if not solution.has_incumbent:
        raise NoIncumbent(f"Solver ended {solution.status} without a feasible schedule")

    schedule = extract_schedule(problem, solution.values)
    trace = simulate_schedule(schedule, config.models, horizon.h2_price,
                              BatteryState(soc=horizon.soc_initial), config.profile.demand[:n_steps])
    breakdown = account_costs(trace, config.models)
    wall_time = time.perf_counter() - started

    run.add(_write_frame(_schedule_frame(schedule), run.path("schedule.csv")))
    report = dict(solution.as_dict())
    report.update({
        "mode": horizon.mode,
        "n_steps": n_steps,
        "n_variables": problem.n_variables,
        "n_binaries": problem.n_integers,
        "objective_terms": objective_breakdown(problem, solution.values),
        "incumbent_log": list(solution.log),
    })
    run.add(_write_json(report, run.path("solution.json")))
    record = RunRecord(label=f"optimize-{horizon.mode}", trace=trace, breakdown=breakdown, wall_time=wall_time,
                       metadata={"mode": horizon.mode, "status": solution.status, "solve_time_s": solution.wall_time})
    run.add(*save_run(record, str(run.run_dir), config.models))

    console.print(f"[green]Status:[/green] {solution.status}, objective {solution.objective:.6f}, "
                  f"gap {solution.gap:.3g}, {solution.nodes_explored} nodes, {solution.wall_time:.2f} s")
    _display_breakdown(breakdown, f"Cost breakdown ({horizon.mode.upper()})")
    run.finish({"mode": horizon.mode, "n_steps": n_steps, "export_mps": write_mps, "dump_problem": write_listing})


@cli.command()
@config_option
@out_option
@click.option('--soc-step', type=float, help='SOC grid step in % (default: dp.soc_step)')
@click.option('--power-step', type=float, help='Collective power grid step in kW (default: dp.fc_power_step)')
@click.option('--dump-values', 'write_values', is_flag=True, help='Write the value table as values.bin')
@click.pass_context
@handle_errors
def dp(ctx, config_path, out, soc_step, power_step, write_values):
    """Solve the collective-control benchmark by dynamic programming."""
    overrides = {"run": {"mode": "csc"}, "dp": {}}
    if soc_step:
        overrides["dp"]["soc_step"] = soc_step
    if power_step:
        overrides["dp"]["fc_power_step"] = power_step
    config = load_config(config_path, overrides)
    run = RunContext("dp", out, config, ctx.obj["verbose"])

    n_steps = config.mpc_config.steps(config.dt)[0]
    horizon = config.horizon(n_steps, mode="csc")
    window = _mission_window(config, n_steps)
    grids: DpGrids = config.dp_grids
    with _spinner() as progress:
        progress.add_task("Backward induction...", total=None)
        policy = solve_dp(window, config.models, horizon, grids)
    result = rollout(policy)

    stats = policy_stats(policy)
    stats.update({"rollout_cost": result.breakdown.total, "predicted_cost": result.predicted_cost,
                  "soc_step": grids.soc_step, "fc_power_step": grids.fc_power_step})
    run.add(_write_json(stats, run.path("policy_stats.json")))
    if write_values:
        run.add(dump_values(policy, str(run.path("values.bin"))))
    record = RunRecord(label="dp-csc", trace=result.trace, breakdown=result.breakdown, wall_time=policy.wall_time,
                       metadata={"mode": "csc", "predicted_cost": result.predicted_cost})
    run.add(*save_run(record, str(run.run_dir), config.models))

    console.print(f"[green]DP:[/green] {stats['states']} states per step, "
                  f"{stats['reachable_fraction']:.1%} reachable, {policy.wall_time:.2f} s")
    _display_breakdown(result.breakdown, "Cost breakdown (DP, CSC)")
    run.finish({"mode": "csc", "n_steps": n_steps, "soc_step": grids.soc_step,
                "fc_power_step": grids.fc_power_step})


@cli.command()
@config_option
@out_option
@click.option('--mode', type=click.Choice(['isc', 'csc']), help='Stack control mode (default: run.mode)')
@click.option('--block-s', type=float, help='Seconds applied between re-optimizations')
@click.option('--horizon-policy', type=click.Choice(['shrinking', 'rolling']), help='Prediction horizon policy')
@click.option('--no-curtail', is_flag=True, help='Do not curtail regenerative demand')
@click.pass_context
@handle_errors
def simulate(ctx, config_path, out, mode, block_s, horizon_policy, no_curtail):
    """Run the closed-loop block MPC over the configured mission."""
    overrides = {"run": {}, "mpc": {}}
    if mode:
        overrides["run"]["mode"] = mode
    if block_s:
        overrides["mpc"]["block_s"] = block_s
    if horizon_policy:
        overrides["mpc"]["horizon_policy"] = horizon_policy
    if no_curtail:
        overrides["mpc"]["curtailment"] = False
    config = load_config(config_path, overrides)
    run = RunContext("simulate", out, config, ctx.obj["verbose"])

    horizon = config.horizon()
    with _spinner() as progress:
        progress.add_task(f"Block MPC ({horizon.mode.upper()})...", total=None)
        result = run_mpc(config.profile, config.models, horizon, config.mpc_config, config.solver_options)

    models = config.models
    record = RunRecord(label=f"mpc-{result.mode}", trace=result.trace, breakdown=result.breakdown,
                       wall_time=result.wall_time,
                       metadata={"mode": result.mode, "solve_time_s": result.solve_time,
                                 "curtailed_steps": len(result.curtailment)})
    run.add(*save_run(record, str(run.run_dir), models))
    run.add(_write_json({"blocks": list(result.blocks), "curtailment": list(result.curtailment)},
                        run.path("blocks.json")))
    run.add(_write_frame(cumulative_costs(result.trace, models), run.path("cumulative_costs.csv")))
    run.add(_write_frame(stack_power_matrix(result.trace), run.path("stack_power.csv")))
    run.add(_write_frame(battery_fidelity(result.trace, models), run.path("battery_fidelity.csv")))

    console.print(f"[green]MPC:[/green] {len(result.blocks)} blocks, solver {result.solve_time:.2f} s, "
                  f"total {result.wall_time:.2f} s, end SOC {result.trace.soc[-1]:.3f} %")
    _display_breakdown(result.breakdown, f"Cost breakdown ({result.mode.upper()})")
    mpc = config.data["mpc"]
    run.finish({"mode": result.mode, "horizon_s": mpc["horizon_s"], "block_s": mpc["block_s"],
                "horizon_policy": mpc["horizon_policy"], "curtailment": mpc["curtailment"]})


@cli.command(name="compare")
@click.argument('run_a', type=click.Path(exists=True, file_okay=False))
@click.argument('run_b', type=click.Path(exists=True, file_okay=False))
@out_option
@click.pass_context
@handle_errors
def compare_runs(ctx, run_a, run_b, out):
    """Compare the cost breakdowns of two run directories."""
    record_a, record_b = load_run(run_a), load_run(run_b)
    report = compare(record_a, record_b)
    run = RunContext("compare", out if out is not None else str(Path(run_a).parent), None, ctx.obj["verbose"])

    run.add(save_report(report, "json", str(run.path("comparison.json"))))
    path = run.path("comparison.txt")
    with open(path, 'w', encoding='utf-8') as f:
        f.write(format_comparison_table(report))
    run.add(path)

    table = Table(title="Cost comparison", show_header=True)
    table.add_column("Category", style="cyan")
    table.add_column(record_a.label, style="green", justify="right")
    table.add_column(record_b.label, style="green", justify="right")
    table.add_column("Delta", justify="right")
    table.add_column("Delta %", justify="right")
    for row in report["rows"]:
        pct = "n/a" if row["delta_pct"] is None else f"{row['delta_pct']:+.2f}%"
        table.add_row(row["category"], f"{row['a']:.6f}", f"{row['b']:.6f}", f"{row['delta']:+.6f}", pct)
    console.print(table)

    summary = report["summary"]
    if summary["total_reduction_pct"] is not None:
        console.print(f"Total cost reduction of {record_b.label} against {record_a.label}: "
                      f"{summary['total_reduction_pct']:.2f} %")
    run.finish({"run_a": str(Path(run_a).resolve()), "run_b": str(Path(run_b).resolve())})


if __name__ == '__main__':
    main()
