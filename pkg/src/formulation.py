"""
MIQP Formulation Module

This module translates a power-demand horizon and the component models into a
sparse convex mixed-integer quadratic program. The objective prices hydrogen,
fuel-cell voltage degradation (load change, on/off, idling, high load) and
battery wear; the constraints encode power balance, stack gating, switch and
ramp epigraphs, threshold indicators, the linear battery-current surrogate and
the SOC recursion.

Two control modes are supported:

- ``isc``: every stack has its own variables
- ``csc``: one shared set of stack variables scaled by the stack count

Author: noomesk
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from .battery import BatteryCellParams, BatteryPackParams, BatterySurrogate, soc_increment
from .fuelcell import (
    THRESHOLD_EPS,
    DegradationRates,
    FcStackParams,
    PolarizationParams,
    high_load_rate,
    idling_rate,
    load_change_rate,
    on_off_cost,
)
from .vehicle import PowerProfile


logger = logging.getLogger(__name__)

MODES = ("isc", "csc")

STACK_FIELDS = ("p_fc", "dp_fc", "on", "switch", "high", "idle", "z_idle")
STEP_FIELDS = ("p_bat", "i_bat", "i_abs", "soc")
BINARY_FIELDS = ("on", "switch", "high", "idle")

COST_CATEGORIES = (
    "battery_degradation",
    "h2_cost",
    "fc_idling",
    "fc_high_load",
    "fc_load_change",
    "fc_on_off",
)

# Integrality and gating tolerance applied when reading solver output.
EXTRACTION_TOL = 1e-6


class FormulationError(Exception):
    """Custom exception for problem construction errors."""
    pass


class ExtractionError(FormulationError):
    """Raised when solver values do not form a valid schedule."""
    pass


@dataclass(frozen=True)
class SystemModels:
    """Component models shared by the optimizer, the DP benchmark and the simulator."""

    cell: BatteryCellParams
    pack: BatteryPackParams
    surrogate: BatterySurrogate
    stacks: Tuple[FcStackParams, ...]
    rates: DegradationRates = field(default_factory=DegradationRates)
    polarization: PolarizationParams = field(default_factory=PolarizationParams)

    def __post_init__(self):
        object.__setattr__(self, "stacks", tuple(self.stacks))
        if not self.stacks:
            raise FormulationError("At least one fuel-cell stack is required")

    @property
    def n_stacks(self) -> int:
        return len(self.stacks)

    @property
    def homogeneous(self) -> bool:
        return all(stack == self.stacks[0] for stack in self.stacks)


@dataclass(frozen=True)
class HorizonSpec:
    """Optimization window and boundary conditions.

    ``initial_power`` and ``initial_on`` describe each physical stack in the
    step before the window; they default to all stacks off.
    """

    n_steps: int
    dt: float
    n_stacks: int
    mode: str = "isc"
    soc_initial: float = 50.0
    soc_final_min: float = 47.0
    soc_final_max: float = 53.0
    soc_min: float = 20.0
    soc_max: float = 90.0
    h2_price: float = 4.0
    initial_power: Tuple[float, ...] = ()
    initial_on: Tuple[bool, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise FormulationError(f"Unknown control mode '{self.mode}' (expected isc or csc)")
        if self.n_steps < 1:
            raise FormulationError("Horizon needs at least one step")
        if self.n_stacks < 1:
            raise FormulationError("Horizon needs at least one stack")
        if not self.dt > 0:
            raise FormulationError("Horizon step must be positive")
        if not (self.soc_min <= self.soc_final_min <= self.soc_final_max <= self.soc_max):
            raise FormulationError(
                "SOC windows must be nested: soc_min <= soc_final_min <= soc_final_max <= soc_max"
            )
        if self.h2_price < 0:
            raise FormulationError("Hydrogen price must be non-negative")

        power = tuple(float(p) for p in self.initial_power) or (0.0,) * self.n_stacks
        on = tuple(bool(o) for o in self.initial_on) or tuple(p > THRESHOLD_EPS for p in power)
        if len(power) != self.n_stacks or len(on) != self.n_stacks:
            raise FormulationError("Initial stack states must list one value per stack")
        for j, (p, o) in enumerate(zip(power, on)):
            if not o and abs(p) > THRESHOLD_EPS:
                raise FormulationError(f"Stack {j} is initially off but has initial power {p} kW")
        object.__setattr__(self, "initial_power", power)
        object.__setattr__(self, "initial_on", on)

    @property
    def n_modeled(self) -> int:
        return 1 if self.mode == "csc" else self.n_stacks

    @property
    def multiplier(self) -> int:
        return self.n_stacks if self.mode == "csc" else 1

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt


@dataclass(frozen=True)
class VariableLayout:
    """Step-major variable indexing.

    Each step holds, for every modeled stack, ``p_fc, dp_fc, on, switch,
    high, idle, z_idle`` followed by ``p_bat, i_bat, i_abs, soc``.
    """

    n_steps: int
    n_modeled: int
    mode: str = "isc"

    @property
    def vars_per_step(self) -> int:
        return len(STACK_FIELDS) * self.n_modeled + len(STEP_FIELDS)

    @property
    def n_variables(self) -> int:
        return self.n_steps * self.vars_per_step

    def stack_var(self, name: str, step: int, stack: int) -> int:
        return step * self.vars_per_step + stack * len(STACK_FIELDS) + STACK_FIELDS.index(name)

    def step_var(self, name: str, step: int) -> int:
        return step * self.vars_per_step + len(STACK_FIELDS) * self.n_modeled + STEP_FIELDS.index(name)

    def stack_indices(self, name: str) -> np.ndarray:
        """Indices of a stack field as an (n_steps, n_modeled) array."""
        steps = np.arange(self.n_steps)[:, None] * self.vars_per_step
        stacks = np.arange(self.n_modeled)[None, :] * len(STACK_FIELDS)
        return steps + stacks + STACK_FIELDS.index(name)

    def step_indices(self, name: str) -> np.ndarray:
        return np.arange(self.n_steps) * self.vars_per_step + len(STACK_FIELDS) * self.n_modeled + STEP_FIELDS.index(name)

    def names(self) -> List[str]:
        names = []
        for i in range(self.n_steps):
            for j in range(self.n_modeled):
                names.extend(f"{name}[{i},{j}]" for name in STACK_FIELDS)
            names.extend(f"{name}[{i}]" for name in STEP_FIELDS)
        return names

    def binary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_variables, dtype=bool)
        for name in BINARY_FIELDS:
            mask[self.stack_indices(name).ravel()] = True
        return mask


@dataclass(frozen=True, eq=False)
class MiqpProblem:
    """Sparse convex MIQP: min sum(quad * x**2) + lin @ x + constant.

    Rows read ``row_lower <= A @ x <= row_upper``; ``row_sense`` keeps the
    written form (``E``, ``L``, ``G``) and ``row_labels`` names the constraint
    family and indices each row came from. ``layout``, ``horizon``, ``models``
    and ``demand`` are set for problems produced by ``build``.
    """

    quad: np.ndarray
    lin: np.ndarray
    constant: float
    A: sparse.csr_matrix
    row_lower: np.ndarray
    row_upper: np.ndarray
    row_sense: Tuple[str, ...]
    row_labels: Tuple[str, ...]
    var_lower: np.ndarray
    var_upper: np.ndarray
    integer: np.ndarray
    var_names: Tuple[str, ...]
    layout: Optional[VariableLayout] = None
    horizon: Optional[HorizonSpec] = None
    models: Optional[SystemModels] = None
    demand: Optional[np.ndarray] = None
    objective_terms: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def n_variables(self) -> int:
        return int(self.quad.size)

    @property
    def n_rows(self) -> int:
        return int(self.A.shape[0])

    @property
    def n_integers(self) -> int:
        return int(np.count_nonzero(self.integer))

    def objective(self, values: np.ndarray) -> float:
        values = np.asarray(values, dtype=float)
        return float(np.dot(self.quad, values ** 2) + np.dot(self.lin, values) + self.constant)


def make_problem(quad: Sequence[float], lin: Sequence[float], A, row_lower: Sequence[float],
                 row_upper: Sequence[float], var_lower: Sequence[float], var_upper: Sequence[float],
                 integer: Optional[Sequence[bool]] = None, constant: float = 0.0,
                 row_labels: Optional[Sequence[str]] = None,
                 var_names: Optional[Sequence[str]] = None) -> MiqpProblem:
    """Assemble a generic problem from arrays (no horizon context).

    Row senses are inferred from which side is finite.
    """
    quad = np.asarray(quad, dtype=float)
    n = quad.size
    A = sparse.csr_matrix(A, shape=(len(row_lower), n), dtype=float)
    row_lower = np.asarray(row_lower, dtype=float)
    row_upper = np.asarray(row_upper, dtype=float)
    senses = []
    for lo, up in zip(row_lower, row_upper):
        if lo == up:
            senses.append("E")
        elif np.isfinite(lo) and not np.isfinite(up):
            senses.append("G")
        elif np.isfinite(up) and not np.isfinite(lo):
            senses.append("L")
        else:
            senses.append("R")
    return MiqpProblem(
        quad=quad,
        lin=np.asarray(lin, dtype=float),
        constant=float(constant),
        A=A,
        row_lower=row_lower,
        row_upper=row_upper,
        row_sense=tuple(senses),
        row_labels=tuple(row_labels) if row_labels is not None else tuple(f"row[{r}]" for r in range(A.shape[0])),
        var_lower=np.asarray(var_lower, dtype=float),
        var_upper=np.asarray(var_upper, dtype=float),
        integer=np.zeros(n, dtype=bool) if integer is None else np.asarray(integer, dtype=bool),
        var_names=tuple(var_names) if var_names is not None else tuple(f"x[{k}]" for k in range(n)),
    )


class _RowCollector:
    """Accumulates labeled sparse rows in COO form."""

    def __init__(self):
        self.rows: List[int] = []
        self.cols: List[int] = []
        self.vals: List[float] = []
        self.lower: List[float] = []
        self.upper: List[float] = []
        self.sense: List[str] = []
        self.labels: List[str] = []

    def add(self, terms: Sequence[Tuple[int, float]], sense: str, rhs: float, label: str) -> None:
        row = len(self.labels)
        for col, val in terms:
            if val != 0.0:
                self.rows.append(row)
                self.cols.append(col)
                self.vals.append(float(val))
        if sense == "E":
            self.lower.append(rhs)
            self.upper.append(rhs)
        elif sense == "L":
            self.lower.append(-np.inf)
            self.upper.append(rhs)
        elif sense == "G":
            self.lower.append(rhs)
            self.upper.append(np.inf)
        else:
            raise FormulationError(f"Unknown row sense '{sense}'")
        self.sense.append(sense)
        self.labels.append(label)

    def matrix(self, n_cols: int) -> sparse.csr_matrix:
        return sparse.csr_matrix(
            (self.vals, (self.rows, self.cols)), shape=(len(self.labels), n_cols), dtype=float
        )


def row_label(family: str, step: int, stack: Optional[int] = None) -> str:
    return f"{family}[{step}]" if stack is None else f"{family}[{step},{stack}]"


def build(profile: PowerProfile, horizon: HorizonSpec, models: SystemModels) -> MiqpProblem:
    """Build the energy-management MIQP for one horizon.

    Args:
        profile (PowerProfile): Demand over the horizon (length must equal n_steps)
        horizon (HorizonSpec): Window, boundary conditions and control mode
        models (SystemModels): Battery, surrogate, stacks and degradation rates

    Returns:
        MiqpProblem: Immutable problem with provenance labels

    Raises:
        FormulationError: On length/stack mismatches, an initial SOC outside
            the SOC bounds, heterogeneous stacks in csc mode or non-convex
            coefficients
    """
    N, M = horizon.n_steps, horizon.n_stacks
    if profile.n_steps != N:
        raise FormulationError(f"Profile has {profile.n_steps} steps, horizon expects {N}")
    if abs(profile.dt - horizon.dt) > 1e-12:
        raise FormulationError(f"Profile step {profile.dt} s differs from horizon step {horizon.dt} s")
    if models.n_stacks != M:
        raise FormulationError(f"Models describe {models.n_stacks} stacks, horizon expects {M}")
    if not (horizon.soc_min <= horizon.soc_initial <= horizon.soc_max):
        raise FormulationError(
            f"Initial SOC {horizon.soc_initial} % outside [{horizon.soc_min}, {horizon.soc_max}] %"
        )
    if horizon.mode == "csc":
        if not models.homogeneous:
            raise FormulationError("Collective stack control requires identical stacks")
        if len(set(horizon.initial_power)) != 1 or len(set(horizon.initial_on)) != 1:
            raise FormulationError("Collective stack control requires identical initial stack states")
    if models.surrogate.a_d < 0 or any(stack.a_fc < 0 for stack in models.stacks):
        raise FormulationError("Non-convex objective coefficients (a_d or a_fc negative)")

    layout = VariableLayout(N, horizon.n_modeled, horizon.mode)
    K, mult, dt = layout.n_modeled, horizon.multiplier, horizon.dt
    stacks = models.stacks[:K]
    n = layout.n_variables
    demand = np.asarray(profile.demand, dtype=float)
    cell, pack, surrogate = models.cell, models.pack, models.surrogate

    terms = {category: (np.zeros(n), np.zeros(n)) for category in COST_CATEGORIES}
    lower = np.zeros(n)
    upper = np.zeros(n)
    rows = _RowCollector()
    eps2 = 2.0 * THRESHOLD_EPS
    soc_gain = float(soc_increment(1.0, dt, cell))
    cell_power_per_kw = 1000.0 / pack.cell_count
    current_cap = max(-cell.i_min, cell.i_max)
    fc_capacity = mult * sum(stack.p_max for stack in stacks)
    battery_scale = pack.cell_count * (dt / 7200.0) * pack.replacement_cost

    for i in range(N):
        for j, stack in enumerate(stacks):
            p = layout.stack_var("p_fc", i, j)
            dp = layout.stack_var("dp_fc", i, j)
            o = layout.stack_var("on", i, j)
            s = layout.stack_var("switch", i, j)
            h = layout.stack_var("high", i, j)
            idle = layout.stack_var("idle", i, j)
            z = layout.stack_var("z_idle", i, j)

            lower[[p, dp, o, s, h, idle, z]] = 0.0
            upper[[p, dp]] = stack.p_max
            upper[[o, s, h, idle, z]] = 1.0

            rows.add([(p, 1.0), (o, -stack.p_max)], "L", 0.0, row_label("gating-max", i, j))
            rows.add([(p, 1.0), (o, -stack.p_min)], "G", 0.0, row_label("gating-min", i, j))

            if i == 0:
                o_prev = 1.0 if horizon.initial_on[j] else 0.0
                p_prev = horizon.initial_power[j]
                rows.add([(s, 1.0), (o, -1.0)], "G", -o_prev, row_label("switch-on", i, j))
                rows.add([(s, 1.0), (o, 1.0)], "G", o_prev, row_label("switch-off", i, j))
                rows.add([(dp, 1.0), (p, -1.0)], "G", -p_prev, row_label("ramp-up", i, j))
                rows.add([(dp, 1.0), (p, 1.0)], "G", p_prev, row_label("ramp-down", i, j))
            else:
                o_last = layout.stack_var("on", i - 1, j)
                p_last = layout.stack_var("p_fc", i - 1, j)
                rows.add([(s, 1.0), (o, -1.0), (o_last, 1.0)], "G", 0.0, row_label("switch-on", i, j))
                rows.add([(s, 1.0), (o, 1.0), (o_last, -1.0)], "G", 0.0, row_label("switch-off", i, j))
                rows.add([(dp, 1.0), (p, -1.0), (p_last, 1.0)], "G", 0.0, row_label("ramp-up", i, j))
                rows.add([(dp, 1.0), (p, 1.0), (p_last, -1.0)], "G", 0.0, row_label("ramp-down", i, j))

            rows.add([(p, 1.0), (h, -stack.p_high)], "G", 0.0, row_label("high-load-lower", i, j))
            rows.add([(p, 1.0), (h, -(stack.p_max - stack.p_high + eps2))], "L",
                     stack.p_high - eps2, row_label("high-load-upper", i, j))
            rows.add([(h, 1.0), (o, -1.0)], "L", 0.0, row_label("high-load-gate", i, j))
            rows.add([(p, 1.0), (o, -(stack.p_low + eps2)), (idle, stack.p_low + eps2)], "G", 0.0,
                     row_label("idle-lower", i, j))
            rows.add([(p, 1.0), (idle, stack.p_max - stack.p_low)], "L", stack.p_max,
                     row_label("idle-upper", i, j))
            rows.add([(z, 1.0), (idle, -1.0), (o, -1.0)], "G", -1.0, row_label("idle-aux", i, j))

            fuel_scale = mult * dt * horizon.h2_price
            terms["h2_cost"][0][p] += fuel_scale * stack.a_fc
            terms["h2_cost"][1][p] += fuel_scale * stack.b_fc
            terms["h2_cost"][1][o] += fuel_scale * stack.c_fc
            terms["fc_load_change"][1][dp] += mult * load_change_rate(models.rates, stack)
            terms["fc_on_off"][1][s] += mult * on_off_cost(models.rates, stack)
            terms["fc_idling"][1][z] += mult * dt * idling_rate(models.rates, stack)
            terms["fc_high_load"][1][h] += mult * dt * high_load_rate(models.rates, stack)

        p_bat = layout.step_var("p_bat", i)
        i_bat = layout.step_var("i_bat", i)
        i_abs = layout.step_var("i_abs", i)
        soc = layout.step_var("soc", i)

        lower[p_bat], upper[p_bat] = demand[i] - fc_capacity, demand[i]
        lower[i_bat], upper[i_bat] = cell.i_min, cell.i_max
        lower[i_abs], upper[i_abs] = 0.0, current_cap
        lower[soc], upper[soc] = horizon.soc_min, horizon.soc_max

        balance = [(layout.stack_var("p_fc", i, j), float(mult)) for j in range(K)] + [(p_bat, 1.0)]
        rows.add(balance, "E", demand[i], row_label("power-balance", i))
        rows.add([(i_bat, 1.0), (p_bat, -surrogate.a_bat * cell_power_per_kw), (soc, -surrogate.b_bat)],
                 "E", 0.0, row_label("battery-current", i))
        rows.add([(i_abs, 1.0), (i_bat, -1.0)], "G", 0.0, row_label("current-abs-pos", i))
        rows.add([(i_abs, 1.0), (i_bat, 1.0)], "G", 0.0, row_label("current-abs-neg", i))
        if i == 0:
            rows.add([(soc, 1.0)], "E", horizon.soc_initial, row_label("soc-initial", i))
        else:
            rows.add([(soc, 1.0), (layout.step_var("soc", i - 1), -1.0),
                      (layout.step_var("i_bat", i - 1), -soc_gain)], "E", 0.0, row_label("soc-recursion", i))

        terms["battery_degradation"][0][i_abs] += battery_scale * surrogate.a_d / cell.capacity_ah
        terms["battery_degradation"][1][i_abs] += battery_scale * surrogate.b_d

    # Mission-end SOC is the state after the last step's current.
    end_soc = [(layout.step_var("soc", N - 1), 1.0), (layout.step_var("i_bat", N - 1), soc_gain)]
    rows.add(end_soc, "G", horizon.soc_final_min, row_label("soc-terminal-min", N - 1))
    rows.add(end_soc, "L", horizon.soc_final_max, row_label("soc-terminal-max", N - 1))

    quad = sum(term[0] for term in terms.values())
    lin = sum(term[1] for term in terms.values())
    if np.any(quad < 0):
        raise FormulationError("Non-convex objective: negative quadratic coefficient")

    problem = MiqpProblem(
        quad=quad,
        lin=lin,
        constant=0.0,
        A=rows.matrix(n),
        row_lower=np.asarray(rows.lower, dtype=float),
        row_upper=np.asarray(rows.upper, dtype=float),
        row_sense=tuple(rows.sense),
        row_labels=tuple(rows.labels),
        var_lower=lower,
        var_upper=upper,
        integer=layout.binary_mask(),
        var_names=tuple(layout.names()),
        layout=layout,
        horizon=horizon,
        models=models,
        demand=demand.copy(),
        objective_terms=terms,
    )
    logger.debug("Built %s problem: %d variables (%d binary), %d rows",
                 horizon.mode, problem.n_variables, problem.n_integers, problem.n_rows)
    return problem


def validate(problem: MiqpProblem) -> Dict:
    """Check structural soundness of a problem.

    Args:
        problem (MiqpProblem): Problem to check

    Returns:
        Dict: ``is_valid``, ``findings`` (each with ``check`` and ``message``)
        and a ``summary`` of sizes
    """
    findings = []

    def finding(check: str, message: str) -> None:
        findings.append({"check": check, "message": message})

    n = problem.n_variables
    for name in ("lin", "var_lower", "var_upper", "integer"):
        if getattr(problem, name).shape != (n,):
            finding("shape", f"{name} has shape {getattr(problem, name).shape}, expected ({n},)")
    if problem.A.shape[1] != n:
        finding("shape", f"constraint matrix has {problem.A.shape[1]} columns, expected {n}")
    if findings:
        return {"is_valid": False, "findings": findings, "summary": {"variables": n, "rows": problem.n_rows}}

    bad_quad = np.flatnonzero(~np.isfinite(problem.quad) | (problem.quad < 0))
    for k in bad_quad[:10]:
        finding("convexity", f"quadratic coefficient of {problem.var_names[k]} is {problem.quad[k]}")

    A = problem.A.tocsr()
    row_nnz = np.diff(A.indptr)
    for r in np.flatnonzero(row_nnz == 0)[:10]:
        label = problem.row_labels[r] if r < len(problem.row_labels) else f"row {r}"
        finding("empty-row", f"{label} references no variable")

    if len(problem.row_labels) != problem.n_rows or any(not label for label in problem.row_labels):
        finding("coverage", "row labels do not cover every constraint row")
    if len(problem.row_sense) != problem.n_rows:
        finding("coverage", "row senses do not cover every constraint row")

    col_nnz = np.diff(A.tocsc().indptr)
    orphan = np.flatnonzero((col_nnz == 0) & (problem.quad == 0) & (problem.lin == 0))
    for k in orphan[:10]:
        finding("coverage", f"variable {problem.var_names[k]} appears in no row and not in the objective")

    for k in np.flatnonzero(problem.var_lower > problem.var_upper)[:10]:
        finding("bounds", f"variable {problem.var_names[k]} has lower bound above upper bound")
    for r in np.flatnonzero(problem.row_lower > problem.row_upper)[:10]:
        finding("bounds", f"{problem.row_labels[r]} has lower side above upper side")

    int_idx = np.flatnonzero(problem.integer)
    for bound in (problem.var_lower[int_idx], problem.var_upper[int_idx]):
        finite = bound[np.isfinite(bound)]
        if np.any(np.abs(finite - np.round(finite)) > 0):
            finding("integrality", "integer variable with a fractional bound")
            break

    return {
        "is_valid": not findings,
        "findings": findings,
        "summary": {
            "variables": n,
            "rows": problem.n_rows,
            "integers": problem.n_integers,
            "nonzeros": int(A.nnz),
        },
    }


@dataclass(frozen=True, eq=False)
class Schedule:
    """Per-step plan for every physical stack and the battery.

    ``battery_current`` is the planned surrogate current and ``soc`` the
    planned SOC at the start of each step; ``soc_end`` is the planned SOC
    after the last step.
    """

    dt: float
    mode: str
    demand: np.ndarray
    fc_power: np.ndarray
    fc_on: np.ndarray
    battery_power: np.ndarray
    battery_current: np.ndarray
    soc: np.ndarray
    initial_power: Tuple[float, ...]
    initial_on: Tuple[bool, ...]
    soc_end: Optional[float] = None

    @property
    def n_steps(self) -> int:
        return int(self.demand.size)

    @property
    def n_stacks(self) -> int:
        return int(self.fc_power.shape[1])

    def head(self, n_steps: int) -> "Schedule":
        """First ``n_steps`` steps of the plan."""
        return replace(
            self,
            demand=self.demand[:n_steps],
            fc_power=self.fc_power[:n_steps],
            fc_on=self.fc_on[:n_steps],
            battery_power=self.battery_power[:n_steps],
            battery_current=self.battery_current[:n_steps],
            soc=self.soc[:n_steps],
            soc_end=float(self.soc[n_steps]) if n_steps < self.n_steps else self.soc_end,
        )


def extract_schedule(problem: MiqpProblem, raw_values: Sequence[float]) -> Schedule:
    """Turn a solver vector into a typed schedule.

    Binaries are rounded and re-checked against the gating rows; powers of
    off stacks are snapped to zero and battery power is recomputed from the
    power balance.

    Args:
        problem (MiqpProblem): Problem produced by ``build``
        raw_values (Sequence[float]): Solver values, one per variable

    Returns:
        Schedule: Per-step plan expanded to every physical stack

    Raises:
        ExtractionError: On a wrong-length vector, an integrality violation or
            a gating violation (the message names the row)
    """
    if problem.layout is None or problem.horizon is None:
        raise ExtractionError("Problem carries no horizon layout")
    values = np.asarray(raw_values, dtype=float)
    if values.shape != (problem.n_variables,):
        raise ExtractionError(f"Expected {problem.n_variables} values, got {values.size}")

    layout, horizon = problem.layout, problem.horizon
    int_idx = np.flatnonzero(problem.integer)
    deviation = np.abs(values[int_idx] - np.round(values[int_idx]))
    if np.any(deviation > EXTRACTION_TOL):
        k = int_idx[int(np.argmax(deviation))]
        raise ExtractionError(f"Integrality violated for {problem.var_names[k]} = {values[k]:.9g}")

    on = np.round(values[layout.stack_indices("on")]).astype(bool)
    power = values[layout.stack_indices("p_fc")].copy()
    stacks = problem.models.stacks[:layout.n_modeled]
    for j, stack in enumerate(stacks):
        column = power[:, j]
        for i in range(layout.n_steps):
            if not on[i, j]:
                if abs(column[i]) > EXTRACTION_TOL:
                    raise ExtractionError(
                        f"Gating violated at {row_label('gating-max', i, j)}: stack off with {column[i]:.9g} kW"
                    )
                column[i] = 0.0
            else:
                if column[i] < stack.p_min - EXTRACTION_TOL:
                    raise ExtractionError(
                        f"Gating violated at {row_label('gating-min', i, j)}: {column[i]:.9g} kW below p_min"
                    )
                if column[i] > stack.p_max + EXTRACTION_TOL:
                    raise ExtractionError(
                        f"Gating violated at {row_label('gating-max', i, j)}: {column[i]:.9g} kW above p_max"
                    )
                column[i] = min(max(column[i], stack.p_min), stack.p_max)

    mult = horizon.multiplier
    demand = np.asarray(problem.demand, dtype=float)
    battery_power = demand - mult * power.sum(axis=1)
    drift = np.abs(battery_power - values[layout.step_indices("p_bat")])
    if np.any(drift > 1e-4):
        i = int(np.argmax(drift))
        raise ExtractionError(f"Power balance violated at {row_label('power-balance', i)} by {drift[i]:.3g} kW")
    if np.any(drift > 1e-6):
        logger.warning("Power balance residual up to %.3g kW absorbed by the battery", float(drift.max()))

    if mult > 1:
        power = np.repeat(power, mult, axis=1)
        on = np.repeat(on, mult, axis=1)

    currents = values[layout.step_indices("i_bat")].copy()
    soc = values[layout.step_indices("soc")].copy()
    soc_gain = float(soc_increment(1.0, horizon.dt, problem.models.cell))
    return Schedule(
        dt=horizon.dt,
        mode=horizon.mode,
        demand=demand,
        fc_power=power,
        fc_on=on,
        battery_power=battery_power,
        battery_current=currents,
        soc=soc,
        initial_power=horizon.initial_power,
        initial_on=horizon.initial_on,
        soc_end=float(soc[-1] + soc_gain * currents[-1]),
    )


def objective_breakdown(problem: MiqpProblem, values: Sequence[float]) -> Dict[str, float]:
    """Objective value per cost category (sums to the objective for built problems)."""
    values = np.asarray(values, dtype=float)
    return {
        category: float(np.dot(quad, values ** 2) + np.dot(lin, values))
        for category, (quad, lin) in problem.objective_terms.items()
    }


def _format_terms(problem: MiqpProblem, row: int) -> str:
    start, stop = problem.A.indptr[row], problem.A.indptr[row + 1]
    parts = []
    for col, val in zip(problem.A.indices[start:stop], problem.A.data[start:stop]):
        parts.append(f"{val:+.9g} {problem.var_names[col]}")
    return " ".join(parts)


def dump_problem(problem: MiqpProblem, output_path: str) -> str:
    """Write a plain-text listing of variables, labeled rows and objective.

    Returns:
        str: Resolved path of the written file
    """
    A = problem.A.tocsr()
    problem = replace(problem, A=A)
    symbols = {"E": "=", "L": "<=", "G": ">=", "R": "in"}
    with open(output_path, "w", encoding="utf-8") as f:
        f.write(f"# variables {problem.n_variables}, integers {problem.n_integers}, rows {problem.n_rows}\n")
        f.write(f"# objective constant {problem.constant!r}\n")
        f.write("[variables]\n")
        for k, name in enumerate(problem.var_names):
            kind = "binary" if problem.integer[k] else "continuous"
            f.write(f"{name} {kind} [{problem.var_lower[k]!r}, {problem.var_upper[k]!r}] "
                    f"quad={problem.quad[k]!r} lin={problem.lin[k]!r}\n")
        f.write("[rows]\n")
        for r, label in enumerate(problem.row_labels):
            sense = problem.row_sense[r]
            if sense == "R":
                rhs = f"[{problem.row_lower[r]!r}, {problem.row_upper[r]!r}]"
            else:
                rhs = repr(problem.row_upper[r] if sense == "L" else problem.row_lower[r])
            f.write(f"{label}: {_format_terms(problem, r)} {symbols[sense]} {rhs}\n")
    return str(Path(output_path).resolve())
