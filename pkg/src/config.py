"""
Run Configuration Module

This module loads run configurations from TOML (or JSON with the same
schema), merges them over the published defaults, validates them and builds
the model objects every command works with.

Author: noomesk
"""

import copy
import hashlib
import json
import logging
from functools import cached_property
from pathlib import Path
from typing import Dict, Optional

import toml

from .battery import (BatteryCellParams, BatteryModelError, BatteryPackParams, BatterySurrogate,
                      fit_battery_surrogate)
from .dp import DpGrids
from .fitting import FitError
from .formulation import HorizonSpec, SystemModels
from .fuelcell import DegradationRates, FcStackParams, FuelCellModelError, PolarizationParams, fit_fuel_curve, \
    load_fuel_curve
from .mpc import MpcConfig
from .parser import ParsingError, load_curve_table
from .solver import SolverOptions
from .validator import FUEL_COEFFICIENTS, SURROGATE_COEFFICIENTS, validate_config
from .vehicle import PowerProfile, VehicleParams, load_drive_cycle, power_demand, resample


logger = logging.getLogger(__name__)

ROOT_DIR = Path(__file__).resolve().parent.parent
DATA_DIR = ROOT_DIR / "data"
CONFIG_DIR = ROOT_DIR / "config"

# Keys holding file paths, resolved against the directory of the config file.
PATH_KEYS = (
    ("run", "cycle"),
    ("battery", "curves", "ocv"),
    ("battery", "curves", "r0"),
    ("fuelcell", "fuel_curve", "file"),
)


class ConfigError(Exception):
    """Custom exception for configuration loading errors."""
    pass


def default_config() -> Dict:
    """Published parameter set with the shipped data files."""
    return {
        "run": {
            "cycle": str(DATA_DIR / "cycle_urban_bus.csv"),
            "dt": 1.0,
            "demand_scale": 1.0,
            "mode": "isc",
            "output_dir": "runs",
        },
        "vehicle": {
            "mass": 13500.0,
            "gravity": 9.8,
            "frontal_area": 7.5,
            "rolling_coeff": 0.018,
            "drag_coeff": 0.7,
            "air_density": 1.29,
            "eff_transmission": 0.9,
            "eff_machine": 0.85,
            "eff_regen": 0.5,
        },
        "battery": {
            "cell": {
                "capacity_ah": 3.2,
                "i_min": -3.84,
                "i_max": 3.84,
                "temperature": 298.15,
                "a_c": 31700.0,
                "b_c": -370.3,
                "z": 0.55,
                "gas_constant": 8.314,
                "m_table": [[0.5, 31630.0], [2.0, 21681.0], [6.0, 12934.0], [10.0, 15512.0]],
            },
            "pack": {
                "cell_count": 7594,
                "energy_kwh": 90.0,
                "price_per_kwh": 178.41,
            },
            "curves": {
                "ocv": str(DATA_DIR / "battery_ocv.csv"),
                "r0": str(DATA_DIR / "battery_r0.csv"),
            },
            "surrogate": {
                "soc_range": [20.0, 90.0],
                "power_range": [-12.0, 12.0],
                "grid_counts": [20, 20],
                "c_rate_range": [0.5, 10.0],
            },
        },
        "fuelcell": {
            "n_stacks": 8,
            "cell_count": 500,
            "active_area": 280.0,
            "p_max": 70.0,
            "p_min": 14.0,
            "p_low": 14.0,
            "p_high": 56.0,
            "specific_price": 960.0,
            "v_drop_max": 70000.0,
            "fuel_curve": {
                "file": str(DATA_DIR / "fc_fuel_curve.csv"),
                "a_fc": 1.024488e-07,
                "b_fc": 1.582266e-05,
                "c_fc": 2.244297e-05,
                "r_squared": 0.99996,
                "source": "fc_fuel_curve.csv",
            },
            "polarization": {
                "gibbs_energy": 237130.0,
                "faraday": 96485.33,
                "temperature": 343.15,
                "alpha": 8.5e-5,
                "beta": 0.05,
                "i0": 1e-4,
                "i_loss": 2e-3,
                "i_l": 1.5,
                "r_ohm": 0.1,
            },
        },
        "degradation": {
            "load_change": 1.79,
            "on_off": 13.79,
            "idling": 8.66,
            "high_load": 10.0,
        },
        "horizon": {
            "soc_initial": 50.0,
            "soc_final_min": 47.0,
            "soc_final_max": 53.0,
            "soc_min": 20.0,
            "soc_max": 90.0,
            "h2_price": 4.0,
            "initial_power": 0.0,
            "initial_on": False,
        },
        "mpc": {
            "horizon_s": 600.0,
            "block_s": 60.0,
            "horizon_policy": "shrinking",
            "curtailment": True,
        },
        "solver": {
            "abs_gap_tol": 1e-4,
            "rel_gap_tol": 1e-6,
            "time_limit": 60.0,
            "node_limit": 100000,
            "integrality_tol": 1e-6,
            "kkt_tol": 1e-8,
            "branching": "most-fractional",
            "node_selection": "best-bound",
            "threads": 1,
            "heuristic_interval": 50,
            "max_qp_iter": 50000,
        },
        "dp": {
            "soc_step": 0.02,
            "fc_power_step": 5.0,
        },
    }


def deep_merge(base: Dict, override: Dict) -> Dict:
    """Recursively merge ``override`` into a copy of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _read_file(path: Path) -> Dict:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            if path.suffix.lower() == ".json":
                return json.load(f)
            return toml.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except (toml.TomlDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot parse {path.name}: {e}")


def _resolve_paths(config: Dict, base_dir: Path) -> None:
    for keys in PATH_KEYS:
        section = config
        for key in keys[:-1]:
            section = section.get(key, {})
        value = section.get(keys[-1])
        if isinstance(value, str) and not Path(value).is_absolute():
            section[keys[-1]] = str((base_dir / value).resolve())


def _drop_default_fuel_fit(config: Dict, override: Dict) -> None:
    # A config that names its own fuel-curve file without coefficients wants them fitted.
    fuel_override = override.get("fuelcell", {}).get("fuel_curve", {})
    if "file" in fuel_override and not any(name in fuel_override for name in FUEL_COEFFICIENTS):
        fuel = config["fuelcell"]["fuel_curve"]
        for name in FUEL_COEFFICIENTS + ("r_squared", "source"):
            fuel.pop(name, None)


def load_config(path: Optional[str] = None, overrides: Optional[Dict] = None) -> "RunConfig":
    """Load, merge and validate a run configuration.

    Args:
        path (str, optional): TOML or JSON file; the defaults alone if None
        overrides (Dict, optional): Values merged last (command-line flags)

    Returns:
        RunConfig: Validated configuration

    Raises:
        ConfigError: Listing every schema, cross-field and missing-file error
    """
    config = default_config()
    source = None
    if path is not None:
        source = Path(path).resolve()
        data = _read_file(source)
        if not isinstance(data, dict):
            raise ConfigError(f"{source.name}: top level must be a table")
        _resolve_paths(data, source.parent)
        config = deep_merge(config, data)
        _drop_default_fuel_fit(config, data)
    if overrides:
        config = deep_merge(config, overrides)
        _drop_default_fuel_fit(config, overrides)

    result = validate_config(config)
    errors = list(result["errors"])
    if result["is_valid"]:
        for keys in PATH_KEYS:
            section = config
            for key in keys[:-1]:
                section = section[key]
            value = section.get(keys[-1])
            if value is not None and not Path(value).is_file():
                errors.append(f"{'.'.join(keys)}: file not found: {value}")
    if errors:
        raise ConfigError("Invalid configuration:\n  " + "\n  ".join(errors))
    for warning in result["warnings"]:
        logger.warning("Config: %s", warning)
    return RunConfig(config, source)


def config_hash(config: Dict) -> str:
    """SHA-256 of the canonical JSON encoding."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RunConfig:
    """Validated configuration with lazily built model objects.

    Model construction errors (bad curves, failed fits) surface when the
    corresponding property is first read.
    """

    def __init__(self, data: Dict, source: Optional[Path] = None):
        self.data = data
        self.source = source

    def section(self, name: str) -> Dict:
        return self.data[name]

    @property
    def config_hash(self) -> str:
        return config_hash(self.data)

    @property
    def mode(self) -> str:
        return self.data["run"]["mode"]

    @property
    def dt(self) -> float:
        return float(self.data["run"]["dt"])

    @property
    def output_dir(self) -> Path:
        return Path(self.data["run"]["output_dir"])

    @cached_property
    def vehicle(self) -> VehicleParams:
        return VehicleParams(**self.data["vehicle"])

    @cached_property
    def cell(self) -> BatteryCellParams:
        battery = self.data["battery"]
        try:
            ocv_soc, ocv = load_curve_table(battery["curves"]["ocv"])
            r0_soc, r0 = load_curve_table(battery["curves"]["r0"])
            return BatteryCellParams(ocv_soc=ocv_soc, ocv_values=ocv, r0_soc=r0_soc, r0_values=r0,
                                     **{k: v for k, v in battery["cell"].items()})
        except (ParsingError, BatteryModelError) as e:
            raise ConfigError(f"battery: {e}")

    @cached_property
    def pack(self) -> BatteryPackParams:
        return BatteryPackParams(**self.data["battery"]["pack"])

    @cached_property
    def surrogate(self) -> BatterySurrogate:
        settings = self.data["battery"]["surrogate"]
        if all(name in settings for name in SURROGATE_COEFFICIENTS):
            return BatterySurrogate(
                a_bat=settings["a_bat"],
                b_bat=settings["b_bat"],
                a_d=settings["a_d"],
                b_d=settings["b_d"],
                r_squared_current=settings.get("r_squared_current", 1.0),
                r_squared_eol=settings.get("r_squared_eol", 1.0),
                fit_domain={
                    "soc_pct": tuple(settings["soc_range"]),
                    "p_cell_w": tuple(settings["power_range"]),
                    "c_rate": tuple(settings["c_rate_range"]),
                },
            )
        logger.info("Fitting battery surrogate on a %dx%d grid", *settings["grid_counts"])
        return fit_battery_surrogate(
            self.cell,
            soc_range=tuple(settings["soc_range"]),
            power_range=tuple(settings["power_range"]),
            grid_counts=tuple(settings["grid_counts"]),
            c_rate_range=tuple(settings["c_rate_range"]),
        )

    @cached_property
    def fuel_coefficients(self) -> Dict:
        fuel = self.data["fuelcell"]["fuel_curve"]
        if all(name in fuel for name in FUEL_COEFFICIENTS):
            return {name: float(fuel[name]) for name in FUEL_COEFFICIENTS}
        a_fc, b_fc, c_fc, r2 = fit_fuel_curve(load_fuel_curve(fuel["file"]))
        logger.info("Fitted fuel curve from %s (R2 %.5f)", Path(fuel["file"]).name, r2)
        return {"a_fc": a_fc, "b_fc": b_fc, "c_fc": c_fc}

    @cached_property
    def stack(self) -> FcStackParams:
        settings = {k: v for k, v in self.data["fuelcell"].items()
                    if k not in ("n_stacks", "fuel_curve", "polarization")}
        try:
            return FcStackParams(**settings, **self.fuel_coefficients)
        except FuelCellModelError as e:
            raise ConfigError(f"fuelcell: {e}")

    @property
    def n_stacks(self) -> int:
        return int(self.data["fuelcell"]["n_stacks"])

    @cached_property
    def rates(self) -> DegradationRates:
        return DegradationRates(**self.data["degradation"])

    @cached_property
    def polarization(self) -> PolarizationParams:
        return PolarizationParams(**self.data["fuelcell"]["polarization"])

    @cached_property
    def models(self) -> SystemModels:
        return SystemModels(
            cell=self.cell,
            pack=self.pack,
            surrogate=self.surrogate,
            stacks=(self.stack,) * self.n_stacks,
            rates=self.rates,
            polarization=self.polarization,
        )

    @cached_property
    def profile(self) -> PowerProfile:
        """Drive-cycle demand at ``run.dt``, scaled by ``run.demand_scale``."""
        run = self.data["run"]
        profile = power_demand(load_drive_cycle(run["cycle"]), self.vehicle)
        if abs(profile.dt - self.dt) > 1e-12:
            profile = resample(profile, self.dt)
        if run["demand_scale"] != 1.0:
            profile = profile.scaled(run["demand_scale"])
        return profile

    def horizon(self, n_steps: Optional[int] = None, mode: Optional[str] = None) -> HorizonSpec:
        """Boundary conditions; ``n_steps`` defaults to the MPC horizon."""
        settings = self.data["horizon"]
        if n_steps is None:
            n_steps = self.mpc_config.steps(self.dt)[0]
        on = bool(settings["initial_on"])
        return HorizonSpec(
            n_steps=n_steps,
            dt=self.dt,
            n_stacks=self.n_stacks,
            mode=mode or self.mode,
            soc_initial=settings["soc_initial"],
            soc_final_min=settings["soc_final_min"],
            soc_final_max=settings["soc_final_max"],
            soc_min=settings["soc_min"],
            soc_max=settings["soc_max"],
            h2_price=settings["h2_price"],
            initial_power=(float(settings["initial_power"]) if on else 0.0,) * self.n_stacks,
            initial_on=(on,) * self.n_stacks,
        )

    @cached_property
    def mpc_config(self) -> MpcConfig:
        return MpcConfig(**self.data["mpc"])

    @cached_property
    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self.data["solver"])

    @cached_property
    def dp_grids(self) -> DpGrids:
        return DpGrids(**self.data["dp"])

    def surrogate_fragment(self) -> Dict:
        """Fitted coefficients as a config fragment (the ``fit`` command output)."""
        surrogate = self.surrogate
        fuel = self.data["fuelcell"]["fuel_curve"]
        fuel_fragment = {}
        if "file" in fuel:
            try:
                a_fc, b_fc, c_fc, r2 = fit_fuel_curve(load_fuel_curve(fuel["file"]))
            except ParsingError as e:
                raise FitError(f"fuel curve samples: {e}")
            fuel_fragment = {"a_fc": a_fc, "b_fc": b_fc, "c_fc": c_fc, "r_squared": r2,
                             "source": Path(fuel["file"]).name}
        return {
            "battery": {"surrogate": {
                "a_bat": surrogate.a_bat,
                "b_bat": surrogate.b_bat,
                "a_d": surrogate.a_d,
                "b_d": surrogate.b_d,
                "r_squared_current": surrogate.r_squared_current,
                "r_squared_eol": surrogate.r_squared_eol,
                "soc_range": list(surrogate.fit_domain.get("soc_pct", ())),
                "power_range": list(surrogate.fit_domain.get("p_cell_w", ())),
                "c_rate_range": list(surrogate.fit_domain.get("c_rate", ())),
            }},
            "fuelcell": {"fuel_curve": fuel_fragment},
        }
