"""
Configuration Validation Module

This module checks a run configuration against its JSON schema and against
the cross-field rules the models rely on (nested SOC windows, ordered stack
thresholds, block lengths that divide the horizon).

Author: noomesk
"""

from typing import Dict, List

from jsonschema import Draft202012Validator


def _number(minimum=None, exclusive=False) -> Dict:
    schema = {"type": "number"}
    if minimum is not None:
        schema["exclusiveMinimum" if exclusive else "minimum"] = minimum
    return schema


def _pair(item: Dict = None) -> Dict:
    return {"type": "array", "items": item or {"type": "number"}, "minItems": 2, "maxItems": 2}


def _section(properties: Dict) -> Dict:
    return {"type": "object", "properties": properties, "additionalProperties": False}


POSITIVE = _number(0, exclusive=True)
NON_NEGATIVE = _number(0)

CONFIG_SCHEMA = _section({
    "run": _section({
        "cycle": {"type": "string"},
        "dt": POSITIVE,
        "demand_scale": POSITIVE,
        "mode": {"enum": ["isc", "csc"]},
        "output_dir": {"type": "string"},
    }),
    "vehicle": _section({
        "mass": POSITIVE,
        "gravity": POSITIVE,
        "frontal_area": POSITIVE,
        "rolling_coeff": POSITIVE,
        "drag_coeff": POSITIVE,
        "air_density": POSITIVE,
        "eff_transmission": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "eff_machine": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "eff_regen": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    }),
    "battery": _section({
        "cell": _section({
            "capacity_ah": POSITIVE,
            "i_min": {"type": "number", "exclusiveMaximum": 0},
            "i_max": POSITIVE,
            "temperature": POSITIVE,
            "a_c": {"type": "number"},
            "b_c": {"type": "number"},
            "z": POSITIVE,
            "gas_constant": POSITIVE,
            "m_table": {"type": "array", "items": _pair(), "minItems": 1},
        }),
        "pack": _section({
            "cell_count": {"type": "integer", "minimum": 1},
            "energy_kwh": POSITIVE,
            "price_per_kwh": POSITIVE,
        }),
        "curves": _section({
            "ocv": {"type": "string"},
            "r0": {"type": "string"},
        }),
        "surrogate": _section({
            "soc_range": _pair(),
            "power_range": _pair(),
            "grid_counts": _pair({"type": "integer", "minimum": 10}),
            "c_rate_range": _pair(NON_NEGATIVE),
            "a_bat": {"type": "number"},
            "b_bat": {"type": "number"},
            "a_d": NON_NEGATIVE,
            "b_d": {"type": "number"},
            "r_squared_current": {"type": "number"},
            "r_squared_eol": {"type": "number"},
        }),
    }),
    "fuelcell": _section({
        "n_stacks": {"type": "integer", "minimum": 1},
        "cell_count": {"type": "integer", "minimum": 1},
        "active_area": POSITIVE,
        "p_max": POSITIVE,
        "p_min": POSITIVE,
        "p_low": POSITIVE,
        "p_high": POSITIVE,
        "specific_price": POSITIVE,
        "stack_cost": POSITIVE,
        "v_drop_max": POSITIVE,
        "fuel_curve": _section({
            "file": {"type": "string"},
            "a_fc": NON_NEGATIVE,
            "b_fc": {"type": "number"},
            "c_fc": NON_NEGATIVE,
            "r_squared": {"type": "number"},
            "source": {"type": "string"},
        }),
        "polarization": _section({
            "gibbs_energy": POSITIVE,
            "faraday": POSITIVE,
            "temperature": POSITIVE,
            "alpha": NON_NEGATIVE,
            "beta": NON_NEGATIVE,
            "i0": POSITIVE,
            "i_loss": NON_NEGATIVE,
            "i_l": POSITIVE,
            "r_ohm": NON_NEGATIVE,
        }),
    }),
    "degradation": _section({
        "load_change": NON_NEGATIVE,
        "on_off": NON_NEGATIVE,
        "idling": NON_NEGATIVE,
        "high_load": NON_NEGATIVE,
    }),
    "horizon": _section({
        "soc_initial": {"type": "number", "minimum": 0, "maximum": 100},
        "soc_final_min": {"type": "number", "minimum": 0, "maximum": 100},
        "soc_final_max": {"type": "number", "minimum": 0, "maximum": 100},
        "soc_min": {"type": "number", "minimum": 0, "maximum": 100},
        "soc_max": {"type": "number", "minimum": 0, "maximum": 100},
        "h2_price": NON_NEGATIVE,
        "initial_power": NON_NEGATIVE,
        "initial_on": {"type": "boolean"},
    }),
    "mpc": _section({
        "horizon_s": POSITIVE,
        "block_s": POSITIVE,
        "horizon_policy": {"enum": ["shrinking", "rolling"]},
        "curtailment": {"type": "boolean"},
    }),
    "solver": _section({
        "abs_gap_tol": POSITIVE,
        "rel_gap_tol": POSITIVE,
        "time_limit": POSITIVE,
        "node_limit": {"type": "integer", "minimum": 1},
        "integrality_tol": POSITIVE,
        "kkt_tol": POSITIVE,
        "branching": {"enum": ["most-fractional", "pseudo-cost"]},
        "node_selection": {"enum": ["best-bound", "depth-first"]},
        "threads": {"type": "integer", "minimum": 1},
        "heuristic_interval": {"type": "integer", "minimum": 1},
        "max_qp_iter": {"type": "integer", "minimum": 1},
    }),
    "dp": _section({
        "soc_step": POSITIVE,
        "fc_power_step": POSITIVE,
    }),
})

SURROGATE_COEFFICIENTS = ("a_bat", "b_bat", "a_d", "b_d")
FUEL_COEFFICIENTS = ("a_fc", "b_fc", "c_fc")


def _schema_errors(config: Dict) -> List[str]:
    validator = Draft202012Validator(CONFIG_SCHEMA)
    errors = []
    for error in sorted(validator.iter_errors(config), key=lambda e: list(map(str, e.absolute_path))):
        location = ".".join(str(part) for part in error.absolute_path) or "<root>"
        errors.append(f"{location}: {error.message}")
    return errors


def validate_config(config: Dict) -> Dict:
    """Validate a merged run configuration.

    Args:
        config (Dict): Configuration with every section present

    Returns:
        Dict: Validation result containing:
            - is_valid (bool): Whether the configuration can be used
            - errors (List[str]): Schema and cross-field errors
            - warnings (List[str]): Settings that are legal but suspicious
    """
    result = {"is_valid": True, "errors": _schema_errors(config), "warnings": []}
    if result["errors"]:
        result["is_valid"] = False
        return result

    errors, warnings = result["errors"], result["warnings"]
    horizon = config["horizon"]
    if not (horizon["soc_min"] <= horizon["soc_final_min"] <= horizon["soc_final_max"] <= horizon["soc_max"]):
        errors.append("horizon: SOC windows must satisfy soc_min <= soc_final_min <= soc_final_max <= soc_max")
    if not horizon["soc_min"] <= horizon["soc_initial"] <= horizon["soc_max"]:
        errors.append(f"horizon.soc_initial: {horizon['soc_initial']} outside [soc_min, soc_max]")

    fc = config["fuelcell"]
    if not fc["p_min"] <= fc["p_low"] < fc["p_high"] <= fc["p_max"]:
        errors.append("fuelcell: thresholds must satisfy p_min <= p_low < p_high <= p_max")
    if horizon["initial_on"] and not fc["p_min"] <= horizon["initial_power"] <= fc["p_max"]:
        errors.append("horizon.initial_power: an initially-on stack must run inside [p_min, p_max]")
    if not horizon["initial_on"] and horizon["initial_power"] != 0:
        errors.append("horizon.initial_power: an initially-off stack must have zero power")

    cell = config["battery"]["cell"]
    if not cell["i_min"] < 0 < cell["i_max"]:
        errors.append("battery.cell: current limits must satisfy i_min < 0 < i_max")
    rates = [row[0] for row in cell["m_table"]]
    if any(b <= a for a, b in zip(rates, rates[1:])):
        errors.append("battery.cell.m_table: C-rates must be strictly increasing")

    surrogate = config["battery"]["surrogate"]
    present = [name for name in SURROGATE_COEFFICIENTS if name in surrogate]
    if present and len(present) != len(SURROGATE_COEFFICIENTS):
        errors.append("battery.surrogate: give all of a_bat, b_bat, a_d, b_d or none of them")
    for name in ("soc_range", "power_range", "c_rate_range"):
        low, high = surrogate[name]
        if not high > low:
            errors.append(f"battery.surrogate.{name}: upper end must exceed lower end")
    if surrogate.get("r_squared_current", 1.0) < 0.98:
        warnings.append("battery.surrogate: current fit R2 below 0.98")

    fuel = fc["fuel_curve"]
    present = [name for name in FUEL_COEFFICIENTS if name in fuel]
    if present and len(present) != len(FUEL_COEFFICIENTS):
        errors.append("fuelcell.fuel_curve: give all of a_fc, b_fc, c_fc or none of them")
    if not present and "file" not in fuel:
        errors.append("fuelcell.fuel_curve: coefficients or a sample file are required")

    mpc = config["mpc"]
    if mpc["block_s"] > mpc["horizon_s"]:
        errors.append("mpc: block_s cannot exceed horizon_s")
    dt = config["run"]["dt"]
    for name in ("horizon_s", "block_s"):
        steps = mpc[name] / dt
        if abs(steps - round(steps)) > 1e-6:
            errors.append(f"mpc.{name}: {mpc[name]} s is not a multiple of run.dt = {dt} s")

    if config["run"]["demand_scale"] != 1.0:
        warnings.append(f"run.demand_scale = {config['run']['demand_scale']} rescales the drive-cycle demand")
    if config["run"]["mode"] == "isc" and fc["n_stacks"] * mpc["horizon_s"] / dt > 2400:
        warnings.append("individual control over a long fine-grained horizon can hit the solver time limit")

    result["is_valid"] = not errors
    return result


def get_validation_summary(result: Dict) -> Dict:
    """Counts for display."""
    return {
        "is_valid": result["is_valid"],
        "error_count": len(result["errors"]),
        "warning_count": len(result["warnings"]),
    }
