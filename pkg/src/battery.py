"""
Battery Model Module

This module provides the battery cell equivalent-circuit model (open-circuit
voltage plus series resistance), the empirical capacity-fade model, and the two
linear surrogates that let the optimizer price battery use:

- a power-to-current map, current = a_bat * cell power + b_bat * SOC
- an end-of-life map, 1 / Ah_EOL = a_d * C-rate + b_d

Sign convention: positive current charges the cell; positive power is power
delivered by the cell (discharge).

Author: noomesk
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .fitting import FitError, linear_least_squares


logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

EOL_CAPACITY_LOSS = 20.0  # % of initial capacity
GAS_CONSTANT = 8.314
R2_THRESHOLD = 0.98  # minimum R² of the battery current map

DEFAULT_SOC_POINTS = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0)
DEFAULT_OCV = (3.00, 3.45, 3.55, 3.62, 3.67, 3.73, 3.82, 3.91, 4.00, 4.08, 4.18)
DEFAULT_R0 = (0.060, 0.045, 0.040, 0.038, 0.037, 0.036, 0.036, 0.036, 0.037, 0.038, 0.040)
DEFAULT_M_TABLE = ((0.5, 31630.0), (2.0, 21681.0), (6.0, 12934.0), (10.0, 15512.0))


class BatteryModelError(Exception):
    """Custom exception for battery model domain and range errors."""
    pass


def _frozen(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class BatteryCellParams:
    """Electrical and ageing parameters of one cell.

    ``b_c`` scales the C-rate dependence of the activation energy; the
    default is negative so that higher C-rates age the cell faster.
    """

    capacity_ah: float = 3.2
    ocv_soc: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_SOC_POINTS))
    ocv_values: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_OCV))
    r0_soc: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_SOC_POINTS))
    r0_values: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_R0))
    i_min: float = -3.84
    i_max: float = 3.84
    temperature: float = 298.15
    a_c: float = 31700.0
    b_c: float = -370.3
    z: float = 0.55
    m_table: Tuple[Tuple[float, float], ...] = DEFAULT_M_TABLE
    gas_constant: float = GAS_CONSTANT

    def __post_init__(self):
        for name in ("ocv_soc", "ocv_values", "r0_soc", "r0_values"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "m_table", tuple((float(c), float(m)) for c, m in self.m_table))

        if not self.capacity_ah > 0:
            raise BatteryModelError("Cell capacity must be positive")
        if not self.i_min < 0 < self.i_max:
            raise BatteryModelError(f"Current limits must satisfy i_min < 0 < i_max, got [{self.i_min}, {self.i_max}]")
        for soc, values, label in ((self.ocv_soc, self.ocv_values, "OCV"), (self.r0_soc, self.r0_values, "R0")):
            if soc.size < 2 or soc.shape != values.shape:
                raise BatteryModelError(f"{label} curve needs matching breakpoints and values (at least 2)")
            if np.any(np.diff(soc) <= 0):
                raise BatteryModelError(f"{label} curve breakpoints must be strictly increasing")
        if np.any(self.ocv_values <= 0):
            raise BatteryModelError("OCV must be positive over the SOC domain")
        if np.any(self.r0_values < 0):
            raise BatteryModelError("R0 must be non-negative over the SOC domain")
        keys = [c for c, _ in self.m_table]
        if not keys or any(b <= a for a, b in zip(keys, keys[1:])):
            raise BatteryModelError("Pre-exponential table C-rates must be strictly increasing")
        if not self.z > 0:
            raise BatteryModelError("Power-law exponent z must be positive")

    @property
    def capacity_as(self) -> float:
        return self.capacity_ah * 3600.0

    @property
    def soc_domain(self) -> Tuple[float, float]:
        return (max(self.ocv_soc[0], self.r0_soc[0]), min(self.ocv_soc[-1], self.r0_soc[-1]))

    def _check_domain(self, soc: ArrayLike) -> None:
        low, high = self.soc_domain
        soc = np.asarray(soc, dtype=float)
        if np.any(soc < low - 1e-9) or np.any(soc > high + 1e-9):
            raise BatteryModelError(f"SOC outside curve domain [{low}, {high}] (extrapolation)")

    def ocv(self, soc: ArrayLike) -> ArrayLike:
        self._check_domain(soc)
        return np.interp(soc, self.ocv_soc, self.ocv_values)

    def r0(self, soc: ArrayLike) -> ArrayLike:
        self._check_domain(soc)
        return np.interp(soc, self.r0_soc, self.r0_values)


@dataclass(frozen=True)
class BatteryPackParams:
    cell_count: int = 7594
    energy_kwh: float = 90.0
    price_per_kwh: float = 178.41

    def __post_init__(self):
        if int(self.cell_count) != self.cell_count or self.cell_count < 1:
            raise BatteryModelError("Pack cell count must be an integer >= 1")
        if not (self.energy_kwh > 0 and self.price_per_kwh > 0):
            raise BatteryModelError("Pack energy and price must be positive")

    @property
    def replacement_cost(self) -> float:
        return self.energy_kwh * self.price_per_kwh


@dataclass(frozen=True)
class BatteryState:
    soc: float
    ah_throughput: float = 0.0
    q_loss: float = 0.0
    soh: float = 100.0


@dataclass(frozen=True)
class BatterySurrogate:
    """Linear current map and end-of-life map used inside the optimizer."""

    a_bat: float
    b_bat: float
    a_d: float
    b_d: float
    r_squared_current: float = 1.0
    r_squared_eol: float = 1.0
    fit_domain: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.a_d < 0:
            raise BatteryModelError(f"End-of-life slope a_d must be non-negative (convexity), got {self.a_d}")

    def current(self, p_cell: ArrayLike, soc: ArrayLike) -> ArrayLike:
        """Surrogate cell current for a per-cell power in W."""
        return self.a_bat * np.asarray(p_cell, dtype=float) + self.b_bat * np.asarray(soc, dtype=float)

    def as_dict(self) -> Dict:
        return {
            "a_bat": self.a_bat,
            "b_bat": self.b_bat,
            "a_d": self.a_d,
            "b_d": self.b_d,
            "r_squared_current": self.r_squared_current,
            "r_squared_eol": self.r_squared_eol,
            "fit_domain": {key: list(value) for key, value in self.fit_domain.items()},
        }


def soc_increment(current: ArrayLike, dt: float, params: BatteryCellParams) -> ArrayLike:
    return 100.0 * dt * np.asarray(current, dtype=float) / (3600.0 * params.capacity_ah)


def soc_step(state: BatteryState, current: float, dt: float, params: BatteryCellParams) -> BatteryState:
    """Advance SOC and Ah throughput by one step of constant current.

    Args:
        state (BatteryState): State at the start of the step
        current (float): Cell current in A (positive charges)
        dt (float): Step length in s
        params (BatteryCellParams): Cell parameters

    Returns:
        BatteryState: State at the end of the step

    Raises:
        BatteryModelError: If dt is not positive or SOC leaves [0, 100]
    """
    if not dt > 0:
        raise BatteryModelError(f"Step length must be positive, got {dt}")
    soc = state.soc + float(soc_increment(current, dt, params))
    if soc < 0.0 or soc > 100.0:
        raise BatteryModelError(f"SOC range violation: {soc:.6f} % outside [0, 100]")
    return replace(state, soc=soc, ah_throughput=state.ah_throughput + abs(current) * dt / 3600.0)


def terminal_voltage(soc: ArrayLike, current: ArrayLike, params: BatteryCellParams) -> ArrayLike:
    return params.ocv(soc) + params.r0(soc) * np.asarray(current, dtype=float)


def power_to_current_exact(p_cell: ArrayLike, soc: ArrayLike, params: BatteryCellParams) -> ArrayLike:
    """Exact cell current for a delivered per-cell power.

    Solves OCV * r - R0 * r**2 = p for the small root r (discharge current
    magnitude) and returns -r. The root is written as 2p / (OCV + sqrt(disc))
    which stays finite when R0 is zero.

    Args:
        p_cell (ArrayLike): Delivered power per cell in W (negative charges)
        soc (ArrayLike): SOC in %
        params (BatteryCellParams): Cell parameters

    Returns:
        ArrayLike: Cell current in A

    Raises:
        BatteryModelError: If the power exceeds battery capability
    """
    p_cell = np.asarray(p_cell, dtype=float)
    ocv = params.ocv(soc)
    r0 = params.r0(soc)
    discriminant = ocv ** 2 - 4.0 * r0 * p_cell
    if np.any(discriminant < 0):
        raise BatteryModelError("power exceeds battery capability")
    current = -2.0 * p_cell / (ocv + np.sqrt(discriminant))
    return float(current) if np.ndim(current) == 0 else current


def current_to_power(current: ArrayLike, soc: ArrayLike, params: BatteryCellParams) -> ArrayLike:
    """Delivered per-cell power for a cell current (inverse of the exact map)."""
    current = np.asarray(current, dtype=float)
    power = -(params.ocv(soc) + params.r0(soc) * current) * current
    return float(power) if np.ndim(power) == 0 else power


def max_charge_power(soc: ArrayLike, params: BatteryCellParams) -> ArrayLike:
    """Most negative per-cell power the cell can absorb at ``i_max`` (W)."""
    return current_to_power(params.i_max, soc, params)


def max_discharge_power(soc: ArrayLike, params: BatteryCellParams) -> ArrayLike:
    """Largest per-cell power deliverable at ``i_min`` (W)."""
    return current_to_power(params.i_min, soc, params)


def pre_exponential(c_rate: ArrayLike, params: BatteryCellParams) -> ArrayLike:
    """Pre-exponential factor, linear between table nodes and clamped at the ends."""
    keys = [c for c, _ in params.m_table]
    values = [m for _, m in params.m_table]
    return np.interp(c_rate, keys, values)


def _check_ageing_inputs(c_rate: ArrayLike, temperature: float) -> None:
    if not temperature > 0:
        raise BatteryModelError(f"Temperature must be positive (K), got {temperature}")
    if np.any(np.asarray(c_rate) < 0):
        raise BatteryModelError("C-rate must be non-negative")


def _arrhenius(c_rate: ArrayLike, temperature: float, params: BatteryCellParams) -> ArrayLike:
    activation = params.a_c + params.b_c * np.asarray(c_rate, dtype=float)
    return pre_exponential(c_rate, params) * np.exp(-activation / (params.gas_constant * temperature))


def capacity_loss(c_rate: ArrayLike, temperature: float, ah: ArrayLike,
                  params: BatteryCellParams) -> ArrayLike:
    """Capacity loss in % after ``ah`` ampere-hours of throughput.

    Raises:
        BatteryModelError: If temperature is not positive or c_rate / ah is negative
    """
    _check_ageing_inputs(c_rate, temperature)
    ah = np.asarray(ah, dtype=float)
    if np.any(ah < 0):
        raise BatteryModelError("Ah throughput must be non-negative")
    loss = _arrhenius(c_rate, temperature, params) * ah ** params.z
    return float(loss) if np.ndim(loss) == 0 else loss


def ah_eol(c_rate: ArrayLike, temperature: float, params: BatteryCellParams) -> ArrayLike:
    """Ah throughput at which capacity loss reaches the end-of-life threshold."""
    _check_ageing_inputs(c_rate, temperature)
    value = (EOL_CAPACITY_LOSS / _arrhenius(c_rate, temperature, params)) ** (1.0 / params.z)
    return float(value) if np.ndim(value) == 0 else value


def update_health(state: BatteryState, current: float, dt: float, params: BatteryCellParams,
                  temperature: Optional[float] = None) -> BatteryState:
    """Advance SOC and re-evaluate capacity loss and SOH for one step.

    Capacity loss is evaluated at the step's C-rate over the accumulated
    throughput and never decreases.
    """
    temperature = params.temperature if temperature is None else temperature
    stepped = soc_step(state, current, dt, params)
    c_rate = abs(current) / params.capacity_ah
    q_loss = max(state.q_loss, capacity_loss(c_rate, temperature, stepped.ah_throughput, params))
    return replace(stepped, q_loss=q_loss, soh=100.0 - q_loss)


def fit_current_surrogate(params: BatteryCellParams,
                          soc_range: Tuple[float, float] = (20.0, 90.0),
                          power_range: Tuple[float, float] = (-12.0, 12.0),
                          grid_counts: Tuple[int, int] = (20, 20)) -> Dict:
    """Fit current = a_bat * cell power + b_bat * SOC over a grid.

    Args:
        params (BatteryCellParams): Cell parameters
        soc_range (Tuple[float, float]): SOC span in %
        power_range (Tuple[float, float]): Per-cell power span in W
        grid_counts (Tuple[int, int]): Points along SOC and power

    Returns:
        Dict: ``a_bat``, ``b_bat``, ``r_squared`` and the fit domain

    Raises:
        FitError: For grids smaller than 10x10 or points beyond capability
    """
    n_soc, n_power = grid_counts
    if n_soc < 10 or n_power < 10:
        raise FitError(f"Current surrogate grid must be at least 10x10, got {n_soc}x{n_power}")

    soc_grid, power_grid = np.meshgrid(
        np.linspace(soc_range[0], soc_range[1], n_soc),
        np.linspace(power_range[0], power_range[1], n_power),
        indexing="ij",
    )
    soc_flat, power_flat = soc_grid.ravel(), power_grid.ravel()
    try:
        current = power_to_current_exact(power_flat, soc_flat, params)
    except BatteryModelError as e:
        raise FitError(f"Current surrogate grid outside the cell model: {e}")

    coef, r2 = linear_least_squares(np.column_stack([power_flat, soc_flat]), current)
    return {
        "a_bat": float(coef[0]),
        "b_bat": float(coef[1]),
        "r_squared": r2,
        "fit_domain": {"soc_pct": tuple(soc_range), "p_cell_w": tuple(power_range)},
    }


def fit_line(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float, float]:
    """Least-squares line y = slope * x + intercept; returns (slope, intercept, r²)."""
    x = np.asarray(x, dtype=float)
    coef, r2 = linear_least_squares(np.column_stack([x, np.ones_like(x)]), np.asarray(y, dtype=float))
    return float(coef[0]), float(coef[1]), r2


def fit_eol_surrogate(params: BatteryCellParams,
                      c_rate_range: Tuple[float, float] = (0.5, 10.0),
                      temperature: Optional[float] = None,
                      n_samples: int = 20,
                      c_rates: Optional[Sequence[float]] = None) -> Tuple[float, float, float]:
    """Fit 1 / Ah_EOL = a_d * C-rate + b_d.

    Args:
        params (BatteryCellParams): Cell parameters
        c_rate_range (Tuple[float, float]): Sampled C-rate span
        temperature (float, optional): Temperature in K (cell default if None)
        n_samples (int): Number of evenly spaced C-rates (at least 4)
        c_rates (Sequence[float], optional): Explicit C-rates, overriding the range

    Returns:
        Tuple[float, float, float]: a_d, b_d and the fit R²

    Raises:
        FitError: For degenerate samples or a negative slope
    """
    temperature = params.temperature if temperature is None else temperature
    if c_rates is None:
        if n_samples < 4:
            raise FitError(f"End-of-life fit needs at least 4 C-rates, got {n_samples}")
        c_rates = np.linspace(c_rate_range[0], c_rate_range[1], n_samples)
    c_rates = np.asarray(c_rates, dtype=float)
    if np.unique(c_rates).size < 2:
        raise FitError("End-of-life fit needs at least 2 distinct C-rates")

    inverse = 1.0 / ah_eol(c_rates, temperature, params)
    a_d, b_d, r2 = fit_line(c_rates, inverse)
    if a_d < 0:
        raise FitError(f"End-of-life fit slope a_d = {a_d:.3e} is negative (non-convex cost)")
    return a_d, b_d, r2


def fit_battery_surrogate(cell: BatteryCellParams,
                          soc_range: Tuple[float, float] = (20.0, 90.0),
                          power_range: Tuple[float, float] = (-12.0, 12.0),
                          grid_counts: Tuple[int, int] = (20, 20),
                          c_rate_range: Tuple[float, float] = (0.5, 10.0),
                          temperature: Optional[float] = None) -> BatterySurrogate:
    """Run both battery fits and bundle them with their domains."""
    current_fit = fit_current_surrogate(cell, soc_range, power_range, grid_counts)
    a_d, b_d, r2_eol = fit_eol_surrogate(cell, c_rate_range, temperature)
    domain = dict(current_fit["fit_domain"])
    domain["c_rate"] = tuple(c_rate_range)
    logger.debug("Battery surrogate: a_bat=%.6g b_bat=%.6g (R2 %.4f), a_d=%.6g b_d=%.6g (R2 %.4f)",
                 current_fit["a_bat"], current_fit["b_bat"], current_fit["r_squared"], a_d, b_d, r2_eol)
    surrogate = BatterySurrogate(
        a_bat=current_fit["a_bat"],
        b_bat=current_fit["b_bat"],
        a_d=a_d,
        b_d=b_d,
        r_squared_current=current_fit["r_squared"],
        r_squared_eol=r2_eol,
        fit_domain=domain,
    )
    surrogate_check(surrogate)
    return surrogate


def degradation_cost_step(current: ArrayLike, dt: float, surrogate: BatterySurrogate,
                          cell: BatteryCellParams, pack: BatteryPackParams,
                          per_cell: bool = False) -> ArrayLike:
    """Surrogate degradation cost of one step, in $.

    The per-cell loss is (a_d * |I|**2 / Q + b_d * |I|) * dt / 7200 * E * C;
    the pack loss multiplies it by the cell count.
    """
    magnitude = np.abs(np.asarray(current, dtype=float))
    cost = ((surrogate.a_d * magnitude ** 2 / cell.capacity_ah + surrogate.b_d * magnitude)
            * (dt / 7200.0) * pack.replacement_cost)
    if not per_cell:
        cost = cost * pack.cell_count
    return float(cost) if np.ndim(cost) == 0 else cost


def exact_degradation_cost(current: ArrayLike, dt: float, cell: BatteryCellParams,
                           pack: BatteryPackParams, temperature: Optional[float] = None,
                           per_cell: bool = False) -> ArrayLike:
    """Degradation cost of one step from the throughput over twice the end-of-life Ah."""
    temperature = cell.temperature if temperature is None else temperature
    magnitude = np.abs(np.asarray(current, dtype=float))
    throughput = magnitude * dt / 3600.0
    cost = throughput / (2.0 * ah_eol(magnitude / cell.capacity_ah, temperature, cell)) * pack.replacement_cost
    if not per_cell:
        cost = cost * pack.cell_count
    return float(cost) if np.ndim(cost) == 0 else cost


def surrogate_check(surrogate: BatterySurrogate, threshold: float = R2_THRESHOLD) -> bool:
    """Whether the current-map fit reaches the R² quality gate; logs a warning if not."""
    ok = surrogate.r_squared_current >= threshold
    if not ok:
        logger.warning("Battery current surrogate R2 %.4f below %.2f", surrogate.r_squared_current, threshold)
    return ok
