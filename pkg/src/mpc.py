"""
MPC Harness Module

This module closes the loop around the optimizer: it solves one horizon at a
time, applies the first block of the plan to the truth models (exact battery
current, SOC and health, threshold-based stack costs), carries the resulting
state into the next horizon and accounts every cost from the applied
trajectory.

Author: noomesk
"""

import logging
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from .battery import (
    BatteryModelError,
    BatteryState,
    degradation_cost_step,
    exact_degradation_cost,
    max_charge_power,
    power_to_current_exact,
    update_health,
)
from .formulation import (
    COST_CATEGORIES,
    EXTRACTION_TOL,
    HorizonSpec,
    Schedule,
    SystemModels,
    build,
    extract_schedule,
)
from .fuelcell import fuel_curve, loss_high_load, loss_idling, loss_load_change, loss_on_off
from .solver import (
    INFEASIBLE,
    UNBOUNDED,
    MiqpSolution,
    SolverOptions,
    WarmStartHint,
    solve,
    warm_start_from,
)
from .vehicle import PowerProfile


logger = logging.getLogger(__name__)

HORIZON_POLICIES = ("shrinking", "rolling")


class MpcError(Exception):
    """Custom exception for closed-loop simulation errors.

    ``status`` carries the solver status of a failed block, if any.
    """

    def __init__(self, message: str, status: Optional[str] = None):
        super().__init__(message)
        self.status = status


class _BlockInfeasible(Exception):
    def __init__(self, solution: MiqpSolution):
        super().__init__(solution.status)
        self.solution = solution


@dataclass(frozen=True)
class MpcConfig:
    horizon_s: float = 600.0
    block_s: float = 60.0
    horizon_policy: str = "shrinking"
    curtailment: bool = True

    def __post_init__(self):
        if self.horizon_policy not in HORIZON_POLICIES:
            raise MpcError(f"Unknown horizon policy '{self.horizon_policy}'")
        if not (self.horizon_s > 0 and self.block_s > 0):
            raise MpcError("Horizon and block lengths must be positive")
        if self.block_s > self.horizon_s + 1e-9:
            raise MpcError("Block length cannot exceed the horizon")

    def steps(self, dt: float) -> Tuple[int, int]:
        """Horizon and block lengths in steps of ``dt``.

        Raises:
            MpcError: If either length is not a multiple of dt
        """
        counts = []
        for name, seconds in (("horizon", self.horizon_s), ("block", self.block_s)):
            count = int(round(seconds / dt))
            if count < 1 or abs(count * dt - seconds) > 1e-6 * max(1.0, seconds):
                raise MpcError(f"MPC {name} {seconds} s is not a multiple of the step {dt} s")
            counts.append(count)
        return counts[0], counts[1]


@dataclass(frozen=True)
class CostBreakdown:
    """Mission cost per category in $.

    ``battery_surrogate_gap`` is the exact battery cost minus the surrogate
    cost of the planned current; it is reported but not part of ``total``.
    """

    battery_degradation: float = 0.0
    h2_cost: float = 0.0
    fc_idling: float = 0.0
    fc_high_load: float = 0.0
    fc_load_change: float = 0.0
    fc_on_off: float = 0.0
    battery_surrogate_gap: float = 0.0

    @property
    def total(self) -> float:
        return float(sum(getattr(self, name) for name in COST_CATEGORIES))

    def as_dict(self) -> Dict[str, float]:
        values = {name: getattr(self, name) for name in COST_CATEGORIES}
        values["total"] = self.total
        values["battery_surrogate_gap"] = self.battery_surrogate_gap
        return values

    @classmethod
    def from_dict(cls, values: Dict[str, float]) -> "CostBreakdown":
        return cls(**{name: float(values.get(name, 0.0)) for name in COST_CATEGORIES + ("battery_surrogate_gap",)})


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    """Applied trajectory of a run in physical stacks.

    ``soc``, ``soh`` and ``ah_throughput`` hold N + 1 values (start of every
    step plus the end state); every other per-step array holds N values.
    """

    dt: float
    h2_price: float
    requested_demand: np.ndarray
    demand: np.ndarray
    fc_power: np.ndarray
    fc_on: np.ndarray
    battery_power: np.ndarray
    battery_current: np.ndarray
    planned_current: np.ndarray
    soc: np.ndarray
    soh: np.ndarray
    ah_throughput: np.ndarray
    initial_power: Tuple[float, ...]
    initial_on: Tuple[bool, ...]
    initial_q_loss: float = 0.0

    @property
    def n_steps(self) -> int:
        return int(self.demand.size)

    @property
    def n_stacks(self) -> int:
        return int(self.fc_power.shape[1])

    @property
    def curtailed(self) -> np.ndarray:
        return self.demand - self.requested_demand

    def final_state(self) -> BatteryState:
        q_loss = max(self.initial_q_loss, 100.0 - float(self.soh[-1]))
        return BatteryState(soc=float(self.soc[-1]), ah_throughput=float(self.ah_throughput[-1]),
                            q_loss=q_loss, soh=float(self.soh[-1]))

    def to_frame(self, step_costs: Optional[Dict[str, np.ndarray]] = None) -> pd.DataFrame:
        """Per-step table; cost columns are added when ``step_costs`` is given."""
        columns = {
            "step": np.arange(self.n_steps),
            "t_s": np.arange(self.n_steps) * self.dt,
            "requested_kw": self.requested_demand,
            "demand_kw": self.demand,
            "curtailed_kw": self.curtailed,
        }
        for j in range(self.n_stacks):
            columns[f"p_fc_{j + 1}_kw"] = self.fc_power[:, j]
        for j in range(self.n_stacks):
            columns[f"on_{j + 1}"] = self.fc_on[:, j].astype(int)
        columns.update({
            "p_bat_kw": self.battery_power,
            "i_bat_a": self.battery_current,
            "i_plan_a": self.planned_current,
            "soc_pct": self.soc[:-1],
            "soc_end_pct": self.soc[1:],
            "soh_end_pct": self.soh[1:],
            "ah_end": self.ah_throughput[1:],
        })
        if step_costs is not None:
            for name in COST_CATEGORIES:
                columns[f"cost_{name}"] = step_costs[name]
        return pd.DataFrame(columns)

    def metadata(self) -> Dict:
        return {
            "dt": self.dt,
            "h2_price": self.h2_price,
            "n_steps": self.n_steps,
            "n_stacks": self.n_stacks,
            "initial_power": list(self.initial_power),
            "initial_on": list(self.initial_on),
            "initial_soc": float(self.soc[0]),
            "initial_soh": float(self.soh[0]),
            "initial_ah": float(self.ah_throughput[0]),
            "initial_q_loss": self.initial_q_loss,
        }

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, meta: Dict) -> "SimulationTrace":
        """Rebuild a trace from ``to_frame`` output and ``metadata``.

        Raises:
            MpcError: If columns are missing or the stack count disagrees
        """
        n_stacks = int(meta["n_stacks"])
        required = ["requested_kw", "demand_kw", "p_bat_kw", "i_bat_a", "i_plan_a", "soc_pct",
                    "soc_end_pct", "soh_end_pct", "ah_end"]
        required += [f"p_fc_{j + 1}_kw" for j in range(n_stacks)] + [f"on_{j + 1}" for j in range(n_stacks)]
        missing = [name for name in required if name not in frame.columns]
        if missing:
            raise MpcError(f"Trace is missing columns: {', '.join(missing)}")
        if len(frame) != int(meta["n_steps"]):
            raise MpcError(f"Trace has {len(frame)} rows, metadata says {meta['n_steps']}")

        def column(name):
            return frame[name].to_numpy(dtype=float)

        return cls(
            dt=float(meta["dt"]),
            h2_price=float(meta["h2_price"]),
            requested_demand=column("requested_kw"),
            demand=column("demand_kw"),
            fc_power=np.column_stack([column(f"p_fc_{j + 1}_kw") for j in range(n_stacks)]),
            fc_on=np.column_stack([column(f"on_{j + 1}") for j in range(n_stacks)]).astype(bool),
            battery_power=column("p_bat_kw"),
            battery_current=column("i_bat_a"),
            planned_current=column("i_plan_a"),
            soc=np.concatenate([[float(meta["initial_soc"])], column("soc_end_pct")]),
            soh=np.concatenate([[float(meta["initial_soh"])], column("soh_end_pct")]),
            ah_throughput=np.concatenate([[float(meta["initial_ah"])], column("ah_end")]),
            initial_power=tuple(float(p) for p in meta["initial_power"]),
            initial_on=tuple(bool(o) for o in meta["initial_on"]),
            initial_q_loss=float(meta.get("initial_q_loss", 0.0)),
        )


@dataclass(frozen=True, eq=False)
class MpcResult:
    mode: str
    trace: SimulationTrace
    breakdown: CostBreakdown
    blocks: Tuple[Dict, ...] = ()
    curtailment: Tuple[Dict, ...] = ()
    wall_time: float = 0.0
    solve_time: float = 0.0


def step_costs(trace: SimulationTrace, models: SystemModels) -> Dict[str, np.ndarray]:
    """Per-step cost of every category, plus ``battery_surrogate_gap``."""
    if trace.n_stacks != models.n_stacks:
        raise MpcError(f"Trace has {trace.n_stacks} stacks, models describe {models.n_stacks}")
    dt = trace.dt
    prev_power = np.vstack([np.asarray(trace.initial_power, dtype=float), trace.fc_power[:-1]])
    prev_on = np.vstack([np.asarray(trace.initial_on, dtype=bool), trace.fc_on[:-1]])
    costs = {name: np.zeros(trace.n_steps) for name in COST_CATEGORIES}
    for j, stack in enumerate(models.stacks):
        power, on = trace.fc_power[:, j], trace.fc_on[:, j]
        costs["h2_cost"] += dt * trace.h2_price * fuel_curve(power, stack) * on
        costs["fc_load_change"] += loss_load_change(np.abs(power - prev_power[:, j]), models.rates, stack)
        costs["fc_on_off"] += loss_on_off(on != prev_on[:, j], models.rates, stack)
        costs["fc_idling"] += loss_idling(power, on, dt, models.rates, stack)
        costs["fc_high_load"] += loss_high_load(power, dt, models.rates, stack)
    costs["battery_degradation"] = np.asarray(
        exact_degradation_cost(trace.battery_current, dt, models.cell, models.pack), dtype=float
    ) * np.ones(trace.n_steps)
    surrogate = np.asarray(
        degradation_cost_step(trace.planned_current, dt, models.surrogate, models.cell, models.pack), dtype=float
    ) * np.ones(trace.n_steps)
    costs["battery_surrogate_gap"] = costs["battery_degradation"] - surrogate
    return costs


def account_costs(trace: SimulationTrace, models: SystemModels) -> CostBreakdown:
    """Total cost per category of an applied trajectory.

    Args:
        trace (SimulationTrace): Applied trajectory
        models (SystemModels): Models the trajectory was simulated with

    Returns:
        CostBreakdown: Category totals (``total`` is their sum)
    """
    costs = step_costs(trace, models)
    return CostBreakdown(**{name: float(np.sum(values)) for name, values in costs.items()})


def _check_stack_powers(fc_power: np.ndarray, fc_on: np.ndarray, models: SystemModels) -> None:
    for j, stack in enumerate(models.stacks):
        power, on = fc_power[:, j], fc_on[:, j]
        if np.any(np.abs(power[~on]) > EXTRACTION_TOL):
            raise MpcError(f"Stack {j + 1} delivers power while off")
        if np.any(power[on] < stack.p_min - EXTRACTION_TOL) or np.any(power[on] > stack.p_max + EXTRACTION_TOL):
            raise MpcError(f"Stack {j + 1} power outside its operating band")


def _apply_battery(battery_power: np.ndarray, dt: float, models: SystemModels,
                   state: BatteryState) -> Tuple[np.ndarray, List[BatteryState]]:
    currents = np.zeros(battery_power.size)
    states = [state]
    per_kw = 1000.0 / models.pack.cell_count
    for i, p_bat in enumerate(battery_power):
        try:
            current = power_to_current_exact(p_bat * per_kw, state.soc, models.cell)
            state = update_health(state, current, dt, models.cell)
        except BatteryModelError as e:
            raise MpcError(f"Battery model failed at step {i}: {e}")
        currents[i] = current
        states.append(state)
    return currents, states


def simulate_schedule(schedule: Schedule, models: SystemModels, h2_price: float,
                      state: Optional[BatteryState] = None,
                      requested_demand: Optional[np.ndarray] = None) -> SimulationTrace:
    """Apply a schedule to the truth models.

    Battery power comes from the schedule's power balance; the battery
    current, SOC and health come from the exact cell model.

    Args:
        schedule (Schedule): Plan in physical stacks
        models (SystemModels): Truth models
        h2_price (float): Hydrogen price in $/kg
        state (BatteryState, optional): Battery state at the start (planned
            initial SOC if None)
        requested_demand (np.ndarray, optional): Demand before curtailment

    Returns:
        SimulationTrace: Applied trajectory

    Raises:
        MpcError: If a stack leaves its band or the battery cannot deliver
    """
    _check_stack_powers(schedule.fc_power, schedule.fc_on, models)
    state = state or BatteryState(soc=float(schedule.soc[0]))
    battery_power = schedule.demand - schedule.fc_power.sum(axis=1)
    currents, states = _apply_battery(battery_power, schedule.dt, models, state)
    return SimulationTrace(
        dt=schedule.dt,
        h2_price=h2_price,
        requested_demand=schedule.demand.copy() if requested_demand is None else np.asarray(requested_demand, float),
        demand=schedule.demand.copy(),
        fc_power=schedule.fc_power.copy(),
        fc_on=schedule.fc_on.copy(),
        battery_power=battery_power,
        battery_current=currents,
        planned_current=schedule.battery_current.copy(),
        soc=np.array([s.soc for s in states]),
        soh=np.array([s.soh for s in states]),
        ah_throughput=np.array([s.ah_throughput for s in states]),
        initial_power=tuple(schedule.initial_power),
        initial_on=tuple(schedule.initial_on),
        initial_q_loss=state.q_loss,
    )


def concatenate_traces(traces: Sequence[SimulationTrace]) -> SimulationTrace:
    first = traces[0]
    return replace(
        first,
        requested_demand=np.concatenate([t.requested_demand for t in traces]),
        demand=np.concatenate([t.demand for t in traces]),
        fc_power=np.vstack([t.fc_power for t in traces]),
        fc_on=np.vstack([t.fc_on for t in traces]),
        battery_power=np.concatenate([t.battery_power for t in traces]),
        battery_current=np.concatenate([t.battery_current for t in traces]),
        planned_current=np.concatenate([t.planned_current for t in traces]),
        soc=np.concatenate([first.soc[:1]] + [t.soc[1:] for t in traces]),
        soh=np.concatenate([first.soh[:1]] + [t.soh[1:] for t in traces]),
        ah_throughput=np.concatenate([first.ah_throughput[:1]] + [t.ah_throughput[1:] for t in traces]),
    )


def regeneration_limit(models: SystemModels, soc: float) -> float:
    """Most negative pack power (kW) the battery can absorb at ``soc``.

    Both the exact cell model and the linear current surrogate must accept
    the charge current, so the tighter of the two limits is used.
    """
    cell, surrogate = models.cell, models.surrogate
    exact = float(max_charge_power(soc, cell))
    if surrogate.a_bat < 0:
        planned = (cell.i_max - surrogate.b_bat * soc) / surrogate.a_bat
    elif surrogate.a_bat > 0:
        planned = (cell.i_min - surrogate.b_bat * soc) / surrogate.a_bat
    else:
        planned = -np.inf
    per_cell = max(exact, float(planned))
    return min(per_cell, 0.0) * models.pack.cell_count / 1000.0


def curtail_demand(demand: np.ndarray, limit_kw: float) -> Tuple[np.ndarray, List[Dict]]:
    """Raise regeneration below ``limit_kw`` to the limit; one log entry per raised step."""
    applied = np.maximum(demand, limit_kw)
    log = [
        {"step": int(i), "requested_kw": float(demand[i]), "applied_kw": float(applied[i])}
        for i in np.flatnonzero(applied != demand)
    ]
    return applied, log


def _widened(horizon: HorizonSpec) -> HorizonSpec:
    width = max(horizon.soc_final_max - horizon.soc_final_min, 1.0)
    center = 0.5 * (horizon.soc_final_max + horizon.soc_final_min)
    return replace(
        horizon,
        soc_final_min=max(horizon.soc_min, center - width),
        soc_final_max=min(horizon.soc_max, center + width),
    )


def _solve_block(profile: PowerProfile, horizon: HorizonSpec, models: SystemModels,
                 options: SolverOptions, hint: Optional[WarmStartHint]):
    problem = build(profile, horizon, models)
    solution = solve(problem, options, hint)
    if solution.status in (INFEASIBLE, UNBOUNDED):
        raise _BlockInfeasible(solution)
    return problem, solution


def run_mpc(profile: PowerProfile, models: SystemModels, horizon: HorizonSpec,
            config: Optional[MpcConfig] = None, options: Optional[SolverOptions] = None) -> MpcResult:
    """Closed-loop receding-horizon simulation.

    ``horizon`` supplies the mode, SOC windows, price and initial state;
    its ``n_steps`` is replaced per block. With the shrinking policy every
    block plans to the mission end; with the rolling policy each block plans
    ``horizon_s`` ahead and the terminal window applies at the window end.

    Args:
        profile (PowerProfile): Mission demand (at least ``horizon_s`` long)
        models (SystemModels): Component models
        horizon (HorizonSpec): Mission boundary conditions and control mode
        config (MpcConfig, optional): Horizon and block lengths
        options (SolverOptions, optional): Solver settings per block

    Returns:
        MpcResult: Applied trace, accounted costs and the per-block log

    Raises:
        MpcError: If a block stays infeasible after widening the terminal
            window once, or hits a limit without any incumbent
    """
    config = config or MpcConfig()
    options = options or SolverOptions()
    started = time.perf_counter()
    dt = profile.dt
    steps_h, steps_b = config.steps(dt)
    if profile.n_steps < steps_h:
        raise MpcError(f"Profile covers {profile.duration} s, horizon needs {config.horizon_s} s")
    total = steps_h if config.horizon_policy == "shrinking" else profile.n_steps

    requested = profile.demand[:total].copy()
    curtailment: List[Dict] = []

    state = BatteryState(soc=horizon.soc_initial)
    prev_power, prev_on = horizon.initial_power, horizon.initial_on
    hint: Optional[WarmStartHint] = None
    traces, blocks = [], []
    solve_time = 0.0
    t = 0
    while t < total:
        end = total if config.horizon_policy == "shrinking" else min(t + steps_h, total)
        n_apply = min(steps_b, end - t)
        demand = requested[t:end]
        if config.curtailment:
            # Charge capability at the SOC this block starts from.
            demand, log = curtail_demand(demand, regeneration_limit(models, state.soc))
            for entry in log:
                if entry["step"] < n_apply:
                    entry["step"] += t
                    curtailment.append(entry)
                    logger.warning("Curtailed regeneration at step %d: %.3f kW -> %.3f kW",
                                   entry["step"], entry["requested_kw"], entry["applied_kw"])
        window = PowerProfile(dt, demand)
        spec = replace(horizon, n_steps=end - t, soc_initial=state.soc,
                       initial_power=prev_power, initial_on=prev_on)
        widened = False
        try:
            for attempt in Retrying(stop=stop_after_attempt(2), retry=retry_if_exception_type(_BlockInfeasible),
                                    reraise=True):
                with attempt:
                    if attempt.retry_state.attempt_number > 1:
                        spec = _widened(spec)
                        widened = True
                        logger.warning("Block at step %d infeasible; terminal window widened to [%.2f, %.2f] %%",
                                       t, spec.soc_final_min, spec.soc_final_max)
                    problem, solution = _solve_block(window, spec, models, options, hint)
        except _BlockInfeasible as e:
            raise MpcError(
                f"Block starting at step {t} is {e.solution.status} even with a widened terminal window "
                f"(SOC {state.soc:.3f} %, {e.solution.nodes_explored} nodes)",
                status=e.solution.status,
            )
        if not solution.has_incumbent:
            raise MpcError(f"Block starting at step {t} ended {solution.status} without an incumbent",
                           status=solution.status)
        solve_time += solution.wall_time

        schedule = extract_schedule(problem, solution.values).head(n_apply)
        trace = simulate_schedule(schedule, models, horizon.h2_price, state, requested[t:t + n_apply])
        traces.append(trace)
        blocks.append({
            "block": len(blocks),
            "start_step": t,
            "n_steps": end - t,
            "applied_steps": n_apply,
            "status": solution.status,
            "objective": solution.objective,
            "gap": solution.gap,
            "nodes": solution.nodes_explored,
            "wall_time_s": solution.wall_time,
            "soc_start": state.soc,
            "terminal_widened": widened,
        })
        logger.info("Block %d: steps %d-%d %s, objective %.6g, %d nodes, %.2f s",
                    len(blocks) - 1, t, t + n_apply - 1, solution.status, solution.objective,
                    solution.nodes_explored, solution.wall_time)

        state = trace.final_state()
        prev_power = tuple(float(p) for p in trace.fc_power[-1])
        prev_on = tuple(bool(o) for o in trace.fc_on[-1])
        hint = warm_start_from(solution, n_apply)
        t += n_apply

    full = concatenate_traces(traces)
    return MpcResult(
        mode=horizon.mode,
        trace=full,
        breakdown=account_costs(full, models),
        blocks=tuple(blocks),
        curtailment=tuple(curtailment),
        wall_time=time.perf_counter() - started,
        solve_time=solve_time,
    )


def battery_fidelity(trace: SimulationTrace, models: SystemModels) -> pd.DataFrame:
    """Surrogate against exact battery current and cost along a trace."""
    p_cell = trace.battery_power * 1000.0 / models.pack.cell_count
    soc = trace.soc[:-1]
    surrogate_current = models.surrogate.current(p_cell, soc)
    return pd.DataFrame({
        "t_s": np.arange(trace.n_steps) * trace.dt,
        "soc_pct": soc,
        "p_cell_w": p_cell,
        "i_exact_a": trace.battery_current,
        "i_surrogate_a": surrogate_current,
        "i_plan_a": trace.planned_current,
        "i_error_a": surrogate_current - trace.battery_current,
        "cost_exact": exact_degradation_cost(trace.battery_current, trace.dt, models.cell, models.pack),
        "cost_surrogate": degradation_cost_step(surrogate_current, trace.dt, models.surrogate,
                                                models.cell, models.pack),
    })


def cumulative_costs(trace: SimulationTrace, models: SystemModels) -> pd.DataFrame:
    costs = step_costs(trace, models)
    frame = pd.DataFrame({"t_s": (np.arange(trace.n_steps) + 1) * trace.dt})
    for name in COST_CATEGORIES:
        frame[name] = np.cumsum(costs[name])
    frame["total"] = frame[list(COST_CATEGORIES)].sum(axis=1)
    return frame


def stack_power_matrix(trace: SimulationTrace) -> pd.DataFrame:
    frame = pd.DataFrame(trace.fc_power, columns=[f"stack_{j + 1}" for j in range(trace.n_stacks)])
    frame.insert(0, "t_s", np.arange(trace.n_steps) * trace.dt)
    return frame
