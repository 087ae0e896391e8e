"""
Dynamic Programming Benchmark Module

Backward-induction reference for the collective stack control problem. The
state is the battery SOC on a fine grid together with the previous
collective stack power; the control is the collective stack power on a
coarse grid. Stage costs use the exact battery current and ageing models, so
the DP result is an independent benchmark for the MIQP pipeline.

Author: noomesk
"""

import logging
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .battery import BatteryState, exact_degradation_cost, soc_increment
from .formulation import HorizonSpec, Schedule, SystemModels
from .fuelcell import fuel_curve, loss_high_load, loss_idling, load_change_rate, on_off_cost
from .mpc import CostBreakdown, SimulationTrace, account_costs, simulate_schedule
from .vehicle import PowerProfile


logger = logging.getLogger(__name__)

VALUES_MAGIC = b"DPV1"
_HEADER = struct.Struct("<4sIII")

# SOC rows evaluated together in the Bellman update.
SOC_CHUNK = 512


class DpError(Exception):
    """Custom exception for dynamic-programming errors."""
    pass


@dataclass(frozen=True)
class DpGrids:
    """State and control discretization.

    ``fc_power_range`` defaults to the collective operating band
    ``[n * p_min, n * p_max]``; zero (all stacks off) is always a control.
    """

    soc_step: float = 0.02
    fc_power_step: float = 5.0
    soc_range: Optional[Tuple[float, float]] = None
    fc_power_range: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if not (self.soc_step > 0 and self.fc_power_step > 0):
            raise DpError("Grid steps must be positive")

    def soc_grid(self, soc_min: float, soc_max: float) -> np.ndarray:
        low, high = self.soc_range or (soc_min, soc_max)
        if not high > low:
            raise DpError(f"Empty SOC range [{low}, {high}]")
        count = int(np.floor((high - low) / self.soc_step + 1e-9))
        grid = low + self.soc_step * np.arange(count + 1)
        if grid[-1] < high - 1e-9:
            grid = np.append(grid, high)
        return grid

    def control_grid(self, p_min: float, p_max: float, n_stacks: int) -> np.ndarray:
        low, high = self.fc_power_range or (n_stacks * p_min, n_stacks * p_max)
        if not high >= low > 0:
            raise DpError(f"Invalid collective power range [{low}, {high}]")
        count = int(np.floor((high - low) / self.fc_power_step + 1e-9))
        grid = low + self.fc_power_step * np.arange(count + 1)
        if grid[-1] < high - 1e-9:
            grid = np.append(grid, high)
        return np.concatenate([[0.0], grid])


class _StageModel:
    """Stage costs and SOC transitions for one mission."""

    def __init__(self, demand: np.ndarray, dt: float, models: SystemModels, horizon: HorizonSpec,
                 controls: np.ndarray):
        self.demand = demand
        self.dt = dt
        self.models = models
        self.horizon = horizon
        self.controls = controls
        n = horizon.n_stacks
        stack = models.stacks[0]
        per_stack = controls / n
        on = controls > 0
        self.on = on
        fc_cost = n * dt * horizon.h2_price * fuel_curve(per_stack, stack) * on
        fc_cost = fc_cost + n * loss_idling(per_stack, on, dt, models.rates, stack)
        fc_cost = fc_cost + n * loss_high_load(per_stack, dt, models.rates, stack)
        self.fc_cost = np.asarray(fc_cost, dtype=float)
        self.ramp_rate = load_change_rate(models.rates, stack)
        self.switch_cost = n * on_off_cost(models.rates, stack)
        self.transition = self.transition_from_many(controls, on)

    def transition_from_many(self, previous: np.ndarray, previous_on: np.ndarray) -> np.ndarray:
        """Load-change plus on/off cost, shape (len(previous), n_controls)."""
        ramp = self.ramp_rate * np.abs(self.controls[None, :] - previous[:, None])
        switch = self.switch_cost * (self.on[None, :] != previous_on[:, None])
        return ramp + switch

    def battery(self, step: int, soc: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Exact current, battery cost and next SOC for every (soc, control) pair.

        Infeasible pairs (beyond capability or current limits) cost ``inf``.
        """
        cell, pack = self.models.cell, self.models.pack
        p_cell = (self.demand[step] - self.controls)[None, :] * 1000.0 / pack.cell_count
        ocv = cell.ocv(soc)[:, None]
        r0 = cell.r0(soc)[:, None]
        discriminant = ocv ** 2 - 4.0 * r0 * p_cell
        feasible = discriminant >= 0
        current = -2.0 * p_cell / (ocv + np.sqrt(np.where(feasible, discriminant, 0.0)))
        feasible &= (current >= cell.i_min) & (current <= cell.i_max)
        current = np.where(feasible, current, 0.0)
        cost = exact_degradation_cost(current, self.dt, cell, pack)
        cost = np.where(feasible, cost, np.inf)
        soc_next = soc[:, None] + soc_increment(current, self.dt, cell)
        return current, cost, soc_next


def interpolate_soc(values: np.ndarray, grid: np.ndarray, soc: np.ndarray) -> np.ndarray:
    """Linear interpolation of ``values[:, u]`` at ``soc[:, u]`` along the SOC grid.

    Points outside the grid get ``inf``.
    """
    n = grid.size
    idx = np.clip(np.searchsorted(grid, soc, side="right") - 1, 0, n - 2)
    weight = np.clip((soc - grid[idx]) / (grid[idx + 1] - grid[idx]), 0.0, 1.0)
    cols = np.broadcast_to(np.arange(values.shape[1])[None, :], soc.shape)
    low, high = values[idx, cols], values[idx + 1, cols]
    with np.errstate(invalid="ignore"):
        blended = (1.0 - weight) * low + weight * high
    result = np.where(weight <= 0.0, low, np.where(weight >= 1.0, high, blended))
    outside = (soc < grid[0] - 1e-9) | (soc > grid[-1] + 1e-9)
    return np.where(outside, np.inf, result)


@dataclass(frozen=True, eq=False)
class DpPolicy:
    """Value function and argmin policy on the state grid.

    ``values[i, s, v]`` is the cost-to-go from step ``i`` at SOC grid point
    ``s`` with previous control ``v``; ``values[N]`` is zero inside the
    terminal SOC window and ``inf`` outside it.
    """

    soc_grid: np.ndarray
    control_grid: np.ndarray
    values: np.ndarray
    controls: np.ndarray
    horizon: HorizonSpec
    models: SystemModels
    demand: np.ndarray
    dt: float
    wall_time: float = 0.0

    @property
    def n_steps(self) -> int:
        return int(self.demand.size)

    def _stage(self) -> _StageModel:
        stage = getattr(self, "_stage_cache", None)
        if stage is None:
            stage = _StageModel(self.demand, self.dt, self.models, self.horizon, self.control_grid)
            object.__setattr__(self, "_stage_cache", stage)
        return stage

    def q_values(self, step: int, soc: float, previous_power: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Bellman right-hand side over all controls at one off-grid state.

        Returns:
            Tuple[np.ndarray, np.ndarray, np.ndarray]: Total cost, exact
            current and next SOC per control
        """
        stage = self._stage()
        current, battery_cost, soc_next = stage.battery(step, np.array([soc]))
        total = battery_cost[0] + stage.fc_cost + interpolate_soc(self.values[step + 1], self.soc_grid, soc_next)[0]
        transition = stage.transition_from_many(np.array([previous_power]), np.array([previous_power > 0]))[0]
        return total + transition, current[0], soc_next[0]

    def initial_value(self) -> float:
        prev = float(sum(self.horizon.initial_power))
        costs, _, _ = self.q_values(0, self.horizon.soc_initial, prev)
        return float(costs.min())


def solve_dp(profile: PowerProfile, models: SystemModels, horizon: HorizonSpec,
             grids: Optional[DpGrids] = None) -> DpPolicy:
    """Backward induction over the SOC and previous-control grid.

    Args:
        profile (PowerProfile): Mission demand (length must equal n_steps)
        models (SystemModels): Models with identical stacks
        horizon (HorizonSpec): Collective-control horizon
        grids (DpGrids, optional): Discretization (0.02 % SOC, 5 kW control)

    Returns:
        DpPolicy: Value function, policy and timing

    Raises:
        DpError: For individual control, heterogeneous stacks, a length
            mismatch or an empty reachable set
    """
    grids = grids or DpGrids()
    if horizon.mode != "csc":
        raise DpError("The DP benchmark covers collective stack control only")
    if not models.homogeneous or models.n_stacks != horizon.n_stacks:
        raise DpError("The DP benchmark needs identical stacks matching the horizon")
    if profile.n_steps != horizon.n_steps:
        raise DpError(f"Profile has {profile.n_steps} steps, horizon expects {horizon.n_steps}")

    started = time.perf_counter()
    stack = models.stacks[0]
    soc_grid = grids.soc_grid(horizon.soc_min, horizon.soc_max)
    controls = grids.control_grid(stack.p_min, stack.p_max, horizon.n_stacks)
    demand = np.asarray(profile.demand, dtype=float)
    stage = _StageModel(demand, profile.dt, models, horizon, controls)
    N, n_soc, n_u = horizon.n_steps, soc_grid.size, controls.size
    logger.info("DP grid: %d steps x %d SOC points x %d controls", N, n_soc, n_u)

    values = np.zeros((N + 1, n_soc, n_u))
    policy = np.zeros((N, n_soc, n_u), dtype=np.int16)
    outside_window = (soc_grid < horizon.soc_final_min - 1e-9) | (soc_grid > horizon.soc_final_max + 1e-9)
    values[N, outside_window, :] = np.inf
    for i in range(N - 1, -1, -1):
        for start in range(0, n_soc, SOC_CHUNK):
            soc = soc_grid[start:start + SOC_CHUNK]
            _, battery_cost, soc_next = stage.battery(i, soc)
            total = battery_cost + stage.fc_cost[None, :] + interpolate_soc(values[i + 1], soc_grid, soc_next)
            q = total[:, None, :] + stage.transition[None, :, :]
            best = np.argmin(q, axis=2)
            policy[i, start:start + SOC_CHUNK] = best
            values[i, start:start + SOC_CHUNK] = np.take_along_axis(q, best[:, :, None], axis=2)[:, :, 0]

    result = DpPolicy(
        soc_grid=soc_grid,
        control_grid=controls,
        values=values,
        controls=policy,
        horizon=horizon,
        models=models,
        demand=demand,
        dt=profile.dt,
    )
    initial = result.initial_value()
    if not np.isfinite(initial):
        raise DpError("No feasible trajectory reaches the terminal SOC window from the initial state")
    elapsed = time.perf_counter() - started
    object.__setattr__(result, "wall_time", elapsed)
    logger.info("DP solved in %.2f s, value at the initial state %.6f", elapsed, initial)
    return result


@dataclass(frozen=True, eq=False)
class DpRollout:
    trace: SimulationTrace
    breakdown: CostBreakdown
    collective_power: np.ndarray
    predicted_cost: float


def rollout(policy: DpPolicy) -> DpRollout:
    """Forward simulation of the policy from the exact initial state.

    Each step re-evaluates the Bellman right-hand side at the exact SOC, so
    the applied controls never rely on SOC snapping.

    Raises:
        DpError: If the rollout leaves the feasible grid
    """
    horizon, models = policy.horizon, policy.models
    soc = horizon.soc_initial
    previous = float(sum(horizon.initial_power))
    chosen = np.zeros(policy.n_steps)
    currents = np.zeros(policy.n_steps)
    socs = np.zeros(policy.n_steps)
    for i in range(policy.n_steps):
        costs, current, soc_next = policy.q_values(i, soc, previous)
        u = int(np.argmin(costs))
        if not np.isfinite(costs[u]):
            raise DpError(f"Rollout left the feasible grid at step {i} (SOC {soc:.4f} %)")
        chosen[i], currents[i], socs[i] = policy.control_grid[u], current[u], soc
        previous, soc = chosen[i], float(soc_next[u])

    n = horizon.n_stacks
    per_stack = np.repeat((chosen / n)[:, None], n, axis=1)
    schedule = Schedule(
        dt=policy.dt,
        mode="csc",
        demand=policy.demand.copy(),
        fc_power=per_stack,
        fc_on=per_stack > 0,
        battery_power=policy.demand - chosen,
        battery_current=currents,
        soc=socs,
        initial_power=horizon.initial_power,
        initial_on=horizon.initial_on,
    )
    trace = simulate_schedule(schedule, models, horizon.h2_price, BatteryState(soc=horizon.soc_initial))
    return DpRollout(
        trace=trace,
        breakdown=account_costs(trace, models),
        collective_power=chosen,
        predicted_cost=policy.initial_value(),
    )


def policy_stats(policy: DpPolicy) -> Dict:
    finite = np.isfinite(policy.values[:-1])
    return {
        "n_steps": policy.n_steps,
        "soc_points": int(policy.soc_grid.size),
        "controls": int(policy.control_grid.size),
        "states": int(policy.soc_grid.size * policy.control_grid.size),
        "reachable_fraction": float(finite.mean()),
        "initial_value": policy.initial_value(),
        "wall_time_s": policy.wall_time,
    }


def dump_values(policy: DpPolicy, output_path: str) -> str:
    """Write the value table as ``DPV1`` header, grids and little-endian float64 values."""
    N, n_soc, n_u = policy.n_steps, policy.soc_grid.size, policy.control_grid.size
    with open(output_path, "wb") as f:
        f.write(_HEADER.pack(VALUES_MAGIC, N, n_soc, n_u))
        f.write(policy.soc_grid.astype("<f8").tobytes())
        f.write(policy.control_grid.astype("<f8").tobytes())
        f.write(policy.values.astype("<f8").tobytes())
    return str(Path(output_path).resolve())


def load_values(file_path: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a value table written by ``dump_values``.

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: SOC grid, control grid and
        values of shape (N + 1, n_soc, n_controls)

    Raises:
        DpError: On a bad magic number or a truncated file
    """
    data = Path(file_path).read_bytes()
    if len(data) < _HEADER.size:
        raise DpError(f"{file_path} is too short for a value table")
    magic, N, n_soc, n_u = _HEADER.unpack_from(data)
    if magic != VALUES_MAGIC:
        raise DpError(f"{file_path} is not a value table (magic {magic!r})")
    expected = _HEADER.size + 8 * (n_soc + n_u + (N + 1) * n_soc * n_u)
    if len(data) != expected:
        raise DpError(f"{file_path} has {len(data)} bytes, expected {expected}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    soc_grid = body[:n_soc].copy()
    controls = body[n_soc:n_soc + n_u].copy()
    values = body[n_soc + n_u:].reshape(N + 1, n_soc, n_u).copy()
    return soc_grid, controls, values
