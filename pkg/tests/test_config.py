"""
Unit tests for config module.

Author: noomesk
"""

import json

import pytest

from src.config import (CONFIG_DIR, DATA_DIR, ConfigError, config_hash, deep_merge, default_config,
                        load_config)


class TestDeepMerge:
    """Test cases for nested merging."""

    def test_nested_override(self):
        """Test nested tables merge key by key without touching the base."""
        base = {"a": {"x": 1, "y": 2}, "b": 3}

        merged = deep_merge(base, {"a": {"y": 5}})

        assert merged == {"a": {"x": 1, "y": 5}, "b": 3}
        assert base["a"]["y"] == 2


class TestLoadConfig:
    """Test cases for loading run configurations."""

    def test_defaults(self):
        """Test loading without a file gives the published set."""
        config = load_config()

        assert config.data == default_config()
        assert config.mode == "isc"
        assert config.dt == 1.0
        assert config.source is None

    def test_shipped_default_file_matches(self):
        """Test the shipped TOML holds the same values as the built-in defaults."""
        config = load_config(str(CONFIG_DIR / "default.toml"))

        assert config.data == default_config()
        assert config.config_hash == config_hash(default_config())

    def test_hash_tracks_content(self):
        """Test the hash is stable and changes with any value."""
        assert config_hash(default_config()) == config_hash(default_config())
        assert load_config(overrides={"horizon": {"h2_price": 5.0}}).config_hash != config_hash(default_config())

    def test_overrides_applied_last(self):
        """Test command-line values win over the file."""
        config = load_config(str(CONFIG_DIR / "desk.toml"), overrides={"run": {"mode": "isc"}})

        assert config.mode == "isc"
        assert config.n_stacks == 2

    def test_json_config(self, temp_csv):
        """Test JSON files use the same schema."""
        path = temp_csv(json.dumps({"run": {"dt": 10.0}, "mpc": {"block_s": 120.0}}), suffix=".json")

        config = load_config(path)

        assert config.dt == 10.0
        assert config.mpc_config.steps(config.dt) == (60, 12)

    def test_relative_paths_resolve_against_file(self, temp_csv):
        """Test data paths are read relative to the config file."""
        path = temp_csv('[run]\ncycle = "missing_cycle.csv"\n', suffix=".toml")

        with pytest.raises(ConfigError, match="run.cycle: file not found"):
            load_config(path)

    def test_missing_file(self):
        """Test a missing config file is reported."""
        with pytest.raises(ConfigError, match="Config file not found"):
            load_config("/nonexistent/run.toml")

    def test_unparsable_file(self, temp_csv):
        """Test TOML syntax errors are reported."""
        path = temp_csv("[run\ndt = ", suffix=".toml")

        with pytest.raises(ConfigError, match="Cannot parse"):
            load_config(path)

    def test_top_level_not_a_table(self, temp_csv):
        """Test a JSON list is not a configuration."""
        path = temp_csv("[1, 2]", suffix=".json")

        with pytest.raises(ConfigError, match="top level must be a table"):
            load_config(path)

    def test_all_errors_listed(self):
        """Test every validation error appears in one message."""
        with pytest.raises(ConfigError) as excinfo:
            load_config(overrides={"run": {"mode": "both"}, "solver": {"threads": 0}})

        message = str(excinfo.value)
        assert "run.mode" in message
        assert "solver.threads" in message


class TestRunConfig:
    """Test cases for the model objects built from a configuration."""

    def test_desk_scenario(self):
        """Test the desk scenario builds two stacks at 5 s steps."""
        config = load_config(str(CONFIG_DIR / "desk.toml"))

        horizon = config.horizon()

        assert config.models.n_stacks == 2
        assert config.profile.dt == 5.0
        assert horizon.n_steps == 120
        assert horizon.mode == "csc"
        assert horizon.initial_on == (False, False)
        assert config.dp_grids.fc_power_step == 5.0

    def test_shipped_fuel_coefficients(self):
        """Test coefficients in the config are used without refitting."""
        config = load_config()

        assert config.fuel_coefficients["a_fc"] == 1.024488e-07
        assert config.stack.cost == pytest.approx(67200.0)

    def test_fuel_file_without_coefficients_is_fitted(self):
        """Test naming a sample file alone triggers a fit."""
        config = load_config(overrides={"fuelcell": {"fuel_curve": {"file": str(DATA_DIR / "fc_fuel_curve.csv")}}})

        assert "a_fc" not in config.data["fuelcell"]["fuel_curve"]
        assert config.fuel_coefficients["a_fc"] == pytest.approx(1.024488e-07, rel=1e-3)

    def test_surrogate_fragment(self):
        """Test the fit output is a mergeable config fragment."""
        config = load_config(str(CONFIG_DIR / "desk.toml"))

        fragment = config.surrogate_fragment()
        merged = load_config(str(CONFIG_DIR / "desk.toml"), overrides=fragment)

        assert set(fragment["battery"]["surrogate"]) >= {"a_bat", "b_bat", "a_d", "b_d"}
        assert merged.surrogate.a_bat == pytest.approx(config.surrogate.a_bat)
        assert fragment["fuelcell"]["fuel_curve"]["source"] == "fc_fuel_curve.csv"
