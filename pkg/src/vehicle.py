"""
Vehicle and Drive Cycle Module

This module turns a drive cycle (speed against time) into the electrical
power demand seen by the fuel-cell/battery bus using longitudinal vehicle
dynamics, and provides the small amount of profile plumbing around it
(resampling and CSV round trips).

Author: noomesk
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .parser import ParsingError, read_numeric_table


logger = logging.getLogger(__name__)

# Below this magnitude a negative speed is treated as rounding noise.
NEGATIVE_SPEED_TOLERANCE = 1e-9


class CycleError(Exception):
    """Custom exception for drive-cycle and vehicle parameter errors."""
    pass


def _frozen_array(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class VehicleParams:
    """Longitudinal model parameters of the city bus."""

    mass: float = 13500.0
    gravity: float = 9.8
    frontal_area: float = 7.5
    rolling_coeff: float = 0.018
    drag_coeff: float = 0.7
    air_density: float = 1.29
    eff_transmission: float = 0.9
    eff_machine: float = 0.85
    eff_regen: float = 0.5

    def __post_init__(self):
        for name in ("mass", "gravity", "frontal_area", "rolling_coeff", "drag_coeff", "air_density"):
            if not getattr(self, name) > 0:
                raise CycleError(f"Vehicle parameter '{name}' must be strictly positive")
        for name in ("eff_transmission", "eff_machine", "eff_regen"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise CycleError(f"Vehicle efficiency '{name}' must lie in (0, 1], got {value}")


@dataclass(frozen=True, eq=False)
class DriveCycle:
    """Speed samples of a drive cycle, with an optional road grade."""

    time: np.ndarray
    speed: np.ndarray
    grade: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "time", _frozen_array(self.time))
        object.__setattr__(self, "speed", _frozen_array(self.speed))
        if self.grade is not None:
            object.__setattr__(self, "grade", _frozen_array(self.grade))

        if self.time.size == 0:
            raise CycleError("Drive cycle has no samples")
        if self.speed.shape != self.time.shape:
            raise CycleError("Drive cycle time and speed columns differ in length")
        if self.grade is not None and self.grade.shape != self.time.shape:
            raise CycleError("Drive cycle grade column differs in length")
        steps = np.diff(self.time)
        if np.any(steps <= 0):
            index = int(np.argmax(steps <= 0)) + 1
            raise CycleError(f"Time is not strictly increasing at sample {index}")
        if np.any(self.speed < 0):
            index = int(np.argmax(self.speed < 0))
            raise CycleError(f"Negative speed at sample {index}")

    @property
    def n_samples(self) -> int:
        return int(self.time.size)


@dataclass(frozen=True, eq=False)
class PowerProfile:
    """Electrical power demand per step, in kW."""

    dt: float
    demand: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "demand", _frozen_array(self.demand))
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise CycleError(f"Profile step must be a positive finite number, got {self.dt}")
        if self.demand.ndim != 1:
            raise CycleError("Profile demand must be one-dimensional")
        if not np.all(np.isfinite(self.demand)):
            raise CycleError("Profile demand contains non-finite values")

    @property
    def n_steps(self) -> int:
        return int(self.demand.size)

    @property
    def duration(self) -> float:
        return self.dt * self.n_steps

    def window(self, start: int, stop: int) -> "PowerProfile":
        """Return the steps ``start:stop`` as a new profile."""
        return PowerProfile(self.dt, self.demand[start:stop])

    def scaled(self, factor: float) -> "PowerProfile":
        return PowerProfile(self.dt, self.demand * factor)


def load_drive_cycle(file_path: str) -> DriveCycle:
    """Load and validate a drive cycle CSV with columns ``t,v[,grade]``.

    Args:
        file_path (str): Path to the drive-cycle CSV (SI units)

    Returns:
        DriveCycle: Validated cycle; tiny negative speeds are clamped to 0

    Raises:
        ParsingError: If a row is malformed (the message names the line)
        CycleError: If time is not strictly increasing or a speed is negative
    """
    table = read_numeric_table(file_path, ["t", "v"], ["grade"])
    time, speed = table["t"], table["v"].copy()
    name = Path(file_path).name

    steps = np.diff(time)
    if np.any(steps <= 0):
        row = int(np.argmax(steps <= 0)) + 1
        raise CycleError(f"{name}, sample {row + 1}: time is not strictly increasing")

    negative = speed < 0
    if np.any(negative):
        worst = int(np.argmin(speed))
        if speed[worst] < -NEGATIVE_SPEED_TOLERANCE:
            raise CycleError(f"{name}, sample {worst + 1}: negative speed {speed[worst]}")
        logger.warning("%s: clamped %d tiny negative speed(s) to 0", name, int(negative.sum()))
        speed[negative] = 0.0

    return DriveCycle(time=time, speed=speed, grade=table.get("grade"))


def wheel_power(cycle: DriveCycle, params: VehicleParams) -> np.ndarray:
    """Mechanical power required at the wheels, in kW.

    Acceleration is the forward difference of speed; the last sample repeats
    the previous acceleration.
    """
    speed = cycle.speed
    if cycle.n_samples > 1:
        acceleration = np.diff(speed) / np.diff(cycle.time)
        acceleration = np.append(acceleration, acceleration[-1])
    else:
        acceleration = np.zeros(1)
    grade = cycle.grade if cycle.grade is not None else np.zeros_like(speed)

    weight = params.mass * params.gravity
    rolling = weight * params.rolling_coeff * np.cos(grade)
    climbing = weight * np.sin(grade)
    aero = 0.5 * params.air_density * params.drag_coeff * params.frontal_area * speed ** 2
    inertia = params.mass * acceleration
    return speed * (rolling + climbing + aero + inertia) / 1000.0


def electrical_demand(p_wheel: np.ndarray, params: VehicleParams) -> np.ndarray:
    """Convert wheel power to DC-bus demand (traction divides, regeneration multiplies)."""
    p_wheel = np.asarray(p_wheel, dtype=float)
    traction = p_wheel / (params.eff_transmission * params.eff_machine)
    regeneration = p_wheel * params.eff_regen
    return np.where(p_wheel >= 0, traction, regeneration)


def power_demand(cycle: DriveCycle, params: VehicleParams) -> PowerProfile:
    """Compute the electrical power-demand profile of a drive cycle.

    Args:
        cycle (DriveCycle): Uniformly sampled drive cycle
        params (VehicleParams): Vehicle parameters

    Returns:
        PowerProfile: Demand in kW with the cycle's sampling step

    Raises:
        CycleError: If the cycle is not uniformly sampled
    """
    if cycle.n_samples > 1:
        steps = np.diff(cycle.time)
        dt = float(steps[0])
        if not np.allclose(steps, dt, rtol=1e-9, atol=1e-9):
            raise CycleError("Drive cycle must be uniformly sampled to build a power profile")
    else:
        dt = 1.0

    demand = electrical_demand(wheel_power(cycle, params), params)
    return PowerProfile(dt=dt, demand=demand)


def resample(profile: PowerProfile, dt_new: float) -> PowerProfile:
    """Zero-order-hold resampling of a power profile.

    Each new step takes the sample that is active at its start, so total
    duration is kept to within one step.

    Args:
        profile (PowerProfile): Profile to resample
        dt_new (float): New step in seconds

    Returns:
        PowerProfile: Resampled profile

    Raises:
        CycleError: If dt_new is not a positive finite number
    """
    try:
        dt_new = float(dt_new)
    except (TypeError, ValueError):
        raise CycleError(f"Resampling step must be a positive finite number, got {dt_new!r}")
    if not (math.isfinite(dt_new) and dt_new > 0):
        raise CycleError(f"Resampling step must be a positive finite number, got {dt_new}")
    if dt_new == profile.dt:
        return PowerProfile(profile.dt, profile.demand)

    n_new = max(1, int(math.floor(profile.duration / dt_new + 1e-9)))
    source = np.floor(np.arange(n_new) * dt_new / profile.dt + 1e-9).astype(int)
    source = np.minimum(source, profile.n_steps - 1)
    return PowerProfile(dt_new, profile.demand[source])


def save_profile(profile: PowerProfile, output_path: str) -> str:
    """Write a profile as CSV with columns ``t_s,p_d_kw``.

    Returns:
        str: Resolved path of the written file
    """
    frame = pd.DataFrame({
        "t_s": np.arange(profile.n_steps) * profile.dt,
        "p_d_kw": profile.demand,
    })
    frame.to_csv(output_path, index=False, lineterminator="\n", float_format="%.17g")
    return str(Path(output_path).resolve())


def load_profile(file_path: str) -> PowerProfile:
    """Read a profile written by ``save_profile``.

    Raises:
        ParsingError: If the file is malformed or not uniformly sampled
    """
    table = read_numeric_table(file_path, ["t_s", "p_d_kw"])
    time = table["t_s"]
    if time.size > 1:
        steps = np.diff(time)
        dt = float(steps[0])
        if dt <= 0 or not np.allclose(steps, dt, rtol=1e-9, atol=1e-9):
            raise ParsingError(f"{Path(file_path).name}: t_s must be uniformly increasing")
    else:
        dt = 1.0
    return PowerProfile(dt=dt, demand=table["p_d_kw"])
