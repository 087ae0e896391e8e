"""
Fuel Cell Stack Module

This module provides the fuel-cell stack models used both as simulation truth
and as optimizer cost coefficients:

- the quadratic hydrogen consumption curve and its efficiency
- the polarization (voltage against current density) curve
- the four voltage-degradation loss rules (load change, on/off, idling,
  high load) priced against the stack replacement cost

Author: noomesk
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .fitting import FitError, linear_least_squares
from .parser import load_fuel_samples


logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Band membership tolerance in kW, shared with the optimizer formulation.
THRESHOLD_EPS = 1e-6
HYDROGEN_LHV = 1.2e8  # J/kg

# Least-squares fit of data/fc_fuel_curve.csv (R2 0.99996), see config/default.toml.
DEFAULT_FUEL_COEFFS = (1.024488e-07, 1.582266e-05, 2.244297e-05)


class FuelCellModelError(Exception):
    """Custom exception for fuel-cell model domain errors."""
    pass


@dataclass(frozen=True)
class FcStackParams:
    """Operating band, fuel curve and economics of one stack.

    ``stack_cost`` overrides the default cost basis of ``p_max`` times
    ``specific_price``.
    """

    cell_count: int = 500
    active_area: float = 280.0
    p_max: float = 70.0
    p_min: float = 14.0
    p_low: float = 14.0
    p_high: float = 56.0
    a_fc: float = DEFAULT_FUEL_COEFFS[0]
    b_fc: float = DEFAULT_FUEL_COEFFS[1]
    c_fc: float = DEFAULT_FUEL_COEFFS[2]
    specific_price: float = 960.0
    stack_cost: Optional[float] = None
    v_drop_max: float = 70000.0

    def __post_init__(self):
        if not (0 < self.p_min <= self.p_low <= self.p_high <= self.p_max):
            raise FuelCellModelError(
                f"Stack band must satisfy 0 < p_min <= p_low <= p_high <= p_max, got "
                f"{self.p_min}, {self.p_low}, {self.p_high}, {self.p_max}"
            )
        if not self.p_low < self.p_high:
            raise FuelCellModelError("Idle threshold p_low must be below the high-load threshold p_high")
        if self.a_fc < 0:
            raise FuelCellModelError(f"Fuel curve a_fc must be non-negative (convexity), got {self.a_fc}")
        if self.c_fc < 0:
            raise FuelCellModelError(f"Fuel curve c_fc must be non-negative, got {self.c_fc}")
        if not self.v_drop_max > 0:
            raise FuelCellModelError("v_drop_max must be positive")
        if self.cost <= 0:
            raise FuelCellModelError("Stack cost must be positive")

    @property
    def cost(self) -> float:
        """Stack replacement cost C_fc in $."""
        if self.stack_cost is not None:
            return float(self.stack_cost)
        return self.p_max * self.specific_price


@dataclass(frozen=True)
class DegradationRates:
    """Voltage degradation rates: μV/kW, μV/event, μV/h, μV/h."""

    load_change: float = 1.79
    on_off: float = 13.79
    idling: float = 8.66
    high_load: float = 10.0

    def __post_init__(self):
        for name in ("load_change", "on_off", "idling", "high_load"):
            if getattr(self, name) < 0:
                raise FuelCellModelError(f"Degradation rate '{name}' must be non-negative")


@dataclass(frozen=True)
class PolarizationParams:
    gibbs_energy: float = 237130.0
    faraday: float = 96485.33
    temperature: float = 343.15
    alpha: float = 8.5e-5
    beta: float = 0.05
    i0: float = 1e-4
    i_loss: float = 2e-3
    i_l: float = 1.5
    r_ohm: float = 0.1

    def __post_init__(self):
        if not self.i0 > 0:
            raise FuelCellModelError("Exchange current density i0 must be positive")
        if not self.i_l > 0:
            raise FuelCellModelError("Limiting current density i_l must be positive")
        if self.r_ohm < 0:
            raise FuelCellModelError("Ohmic resistance must be non-negative")


def fuel_curve(p_fc: ArrayLike, params: FcStackParams) -> ArrayLike:
    """Unchecked quadratic hydrogen flow in kg/s for an on stack."""
    p_fc = np.asarray(p_fc, dtype=float)
    return params.a_fc * p_fc ** 2 + params.b_fc * p_fc + params.c_fc


def fuel_rate(p_fc: float, on: bool, params: FcStackParams) -> float:
    """Hydrogen mass flow of one stack.

    Args:
        p_fc (float): Stack output power in kW
        on (bool): Whether the stack is on
        params (FcStackParams): Stack parameters

    Returns:
        float: Hydrogen flow in kg/s (0 when off)

    Raises:
        FuelCellModelError: If an on stack is outside its band or an off stack delivers power
    """
    if not on:
        if abs(p_fc) > THRESHOLD_EPS:
            raise FuelCellModelError(f"Stack is off but delivers {p_fc} kW")
        return 0.0
    if p_fc < params.p_min - THRESHOLD_EPS or p_fc > params.p_max + THRESHOLD_EPS:
        raise FuelCellModelError(f"Stack power {p_fc} kW outside band [{params.p_min}, {params.p_max}]")
    return float(fuel_curve(p_fc, params))


def efficiency(p_fc: float, params: FcStackParams, lhv: float = HYDROGEN_LHV,
               check_band: bool = True) -> float:
    """Stack efficiency: electrical power over hydrogen lower-heating-value power."""
    mdot = fuel_rate(p_fc, True, params) if check_band else float(fuel_curve(p_fc, params))
    if mdot <= 0:
        raise FuelCellModelError("Zero fuel rate, efficiency undefined")
    return p_fc * 1000.0 / (mdot * lhv)


def efficiency_curve(params: FcStackParams, n_points: int = 57, lhv: float = HYDROGEN_LHV) -> pd.DataFrame:
    """Fuel flow and efficiency sampled across the operating band."""
    power = np.linspace(params.p_min, params.p_max, n_points)
    mdot = fuel_curve(power, params)
    return pd.DataFrame({
        "p_kw": power,
        "mdot_kg_per_s": mdot,
        "efficiency": power * 1000.0 / (mdot * lhv),
    })


def polarization_voltage(i_fc: ArrayLike, params: PolarizationParams) -> ArrayLike:
    """Cell voltage from the polarization equation.

    Args:
        i_fc (ArrayLike): Current density in A/cm²
        params (PolarizationParams): Polarization parameters

    Returns:
        ArrayLike: Cell voltage in V

    Raises:
        FuelCellModelError: Beyond the limiting current, or for a non-positive
            activation argument
    """
    i_fc = np.asarray(i_fc, dtype=float)
    if np.any(i_fc < 0):
        raise FuelCellModelError("Current density must be non-negative")
    if np.any(i_fc >= params.i_l):
        raise FuelCellModelError("Current density beyond limiting current")
    if np.any(i_fc + params.i_loss <= 0):
        raise FuelCellModelError("Activation term undefined for i_fc + i_loss <= 0")

    v_ocv = params.gibbs_energy / (2.0 * params.faraday)
    v_act = params.alpha * params.temperature * np.log((i_fc + params.i_loss) / params.i0)
    v_ohm = params.r_ohm * i_fc
    v_con = -params.beta * np.log(1.0 - i_fc / params.i_l)
    voltage = v_ocv - v_act - v_ohm - v_con
    return float(voltage) if np.ndim(voltage) == 0 else voltage


def polarization_curve(params: PolarizationParams, n_points: int = 100) -> pd.DataFrame:
    current = np.linspace(0.0, 0.999 * params.i_l, n_points)
    return pd.DataFrame({"i_a_per_cm2": current, "v_cell": polarization_voltage(current, params)})


def load_fuel_curve(file_path: str) -> List[Tuple[float, float]]:
    """Read (power kW, hydrogen flow kg/s) samples for the fuel-curve fit."""
    samples = load_fuel_samples(file_path)
    logger.debug("Loaded %d fuel-curve samples from %s", len(samples), file_path)
    return samples


def fit_fuel_curve(samples: List[Tuple[float, float]]) -> Tuple[float, float, float, float]:
    """Least-squares quadratic fuel curve with a_fc >= 0 and c_fc >= 0.

    Args:
        samples (List[Tuple[float, float]]): (power kW, flow kg/s) pairs

    Returns:
        Tuple[float, float, float, float]: a_fc, b_fc, c_fc and R²

    Raises:
        FitError: With fewer than 3 samples or rank-deficient powers
    """
    if len(samples) < 3:
        raise FitError(f"Fuel curve fit needs at least 3 samples, got {len(samples)}")
    data = np.asarray(samples, dtype=float)
    power, mdot = data[:, 0], data[:, 1]
    design = np.column_stack([power ** 2, power, np.ones_like(power)])
    coef, r2 = linear_least_squares(design, mdot, lower=(0.0, -np.inf, 0.0))
    return float(coef[0]), float(coef[1]), float(coef[2]), r2


def load_change_rate(rates: DegradationRates, params: FcStackParams) -> float:
    """Load-change cost per kW of absolute power change ($/kW)."""
    return rates.load_change * params.cost / params.v_drop_max


def on_off_cost(rates: DegradationRates, params: FcStackParams) -> float:
    return rates.on_off * params.cost / params.v_drop_max


def idling_rate(rates: DegradationRates, params: FcStackParams) -> float:
    """Idling cost per second ($/s)."""
    return rates.idling * params.cost / (3600.0 * params.v_drop_max)


def high_load_rate(rates: DegradationRates, params: FcStackParams) -> float:
    """High-load cost per second ($/s)."""
    return rates.high_load * params.cost / (3600.0 * params.v_drop_max)


def is_idling(p_fc: ArrayLike, on: ArrayLike, params: FcStackParams) -> ArrayLike:
    return np.logical_and(np.asarray(on, dtype=bool), np.asarray(p_fc) <= params.p_low + THRESHOLD_EPS)


def is_high_load(p_fc: ArrayLike, params: FcStackParams) -> ArrayLike:
    return np.asarray(p_fc) >= params.p_high - THRESHOLD_EPS


def _scalar(value):
    return float(value) if np.ndim(value) == 0 else value


def loss_load_change(delta_p: ArrayLike, rates: DegradationRates, params: FcStackParams) -> ArrayLike:
    """Degradation cost of an absolute power change ``delta_p`` in kW.

    Raises:
        FuelCellModelError: If delta_p is negative
    """
    delta_p = np.asarray(delta_p, dtype=float)
    if np.any(delta_p < 0):
        raise FuelCellModelError("Load change must be passed as an absolute value")
    return _scalar(delta_p * load_change_rate(rates, params))


def loss_on_off(switched: ArrayLike, rates: DegradationRates, params: FcStackParams) -> ArrayLike:
    return _scalar(np.asarray(switched, dtype=bool) * on_off_cost(rates, params))


def loss_idling(p_fc: ArrayLike, on: ArrayLike, dt: float, rates: DegradationRates,
                params: FcStackParams) -> ArrayLike:
    if not dt > 0:
        raise FuelCellModelError("Step length must be positive")
    return _scalar(is_idling(p_fc, on, params) * dt * idling_rate(rates, params))


def loss_high_load(p_fc: ArrayLike, dt: float, rates: DegradationRates, params: FcStackParams) -> ArrayLike:
    if not dt > 0:
        raise FuelCellModelError("Step length must be positive")
    return _scalar(is_high_load(p_fc, params) * dt * high_load_rate(rates, params))
