"""
Unit tests for formulation module.

Author: noomesk
"""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from src.battery import soc_increment
from src.formulation import (COST_CATEGORIES, ExtractionError, FormulationError, HorizonSpec, SystemModels,
                             VariableLayout, build, dump_problem, extract_schedule, make_problem,
                             objective_breakdown, validate)
from src.fuelcell import THRESHOLD_EPS, FcStackParams, fuel_rate
from src.vehicle import PowerProfile

from tests.conftest import make_horizon, make_models


def consistent_point(problem, power):
    """Variable vector realising ``power`` (steps x modeled stacks) with the battery covering the rest."""
    layout, horizon, models = problem.layout, problem.horizon, problem.models
    cell, pack, surrogate = models.cell, models.pack, models.surrogate
    power = np.asarray(power, dtype=float)
    x = np.zeros(problem.n_variables)
    prev_p = list(horizon.initial_power)
    prev_on = list(horizon.initial_on)
    soc = horizon.soc_initial
    for i in range(layout.n_steps):
        for j in range(layout.n_modeled):
            stack = models.stacks[j]
            p = power[i, j]
            on = p > 0
            idle = on and p <= stack.p_low + THRESHOLD_EPS
            x[layout.stack_var("p_fc", i, j)] = p
            x[layout.stack_var("dp_fc", i, j)] = abs(p - prev_p[j])
            x[layout.stack_var("on", i, j)] = float(on)
            x[layout.stack_var("switch", i, j)] = float(on != prev_on[j])
            x[layout.stack_var("high", i, j)] = float(p >= stack.p_high - THRESHOLD_EPS)
            x[layout.stack_var("idle", i, j)] = float(idle)
            x[layout.stack_var("z_idle", i, j)] = float(idle)
            prev_p[j], prev_on[j] = p, on
        p_bat = problem.demand[i] - horizon.multiplier * power[i].sum()
        current = surrogate.current(p_bat * 1000.0 / pack.cell_count, soc)
        x[layout.step_var("p_bat", i)] = p_bat
        x[layout.step_var("i_bat", i)] = current
        x[layout.step_var("i_abs", i)] = abs(current)
        x[layout.step_var("soc", i)] = soc
        soc += float(soc_increment(current, horizon.dt, cell))
    return x


def violated_rows(problem, x, tol=1e-9):
    ax = problem.A @ x
    bad = np.flatnonzero((ax < problem.row_lower - tol) | (ax > problem.row_upper + tol))
    return [problem.row_labels[r] for r in bad]


class TestLayout:
    """Test cases for the variable layout."""

    def test_sizes_match_stack_count(self, surrogate):
        """Test 600 steps with 8 stacks give the published problem size."""
        models = make_models(surrogate, 8)
        problem = build(PowerProfile(1.0, np.full(600, 100.0)), make_horizon(600, 8, dt=1.0), models)

        assert problem.n_variables == 600 * (7 * 8 + 4) == 36000
        assert problem.n_integers == 600 * 4 * 8 == 19200
        assert problem.n_rows == 600 * (12 * 8 + 5) + 2

    def test_collective_mode_shares_stack_variables(self, models_2):
        """Test csc models one stack whatever the stack count."""
        problem = build(PowerProfile(10.0, np.full(5, 40.0)), make_horizon(5, 2, mode="csc"), models_2)

        assert problem.layout.n_modeled == 1
        assert problem.n_variables == 5 * (7 + 4)

    def test_names_follow_indices(self):
        """Test variable names agree with their indices."""
        layout = VariableLayout(3, 2)
        names = layout.names()

        assert names[layout.stack_var("switch", 2, 1)] == "switch[2,1]"
        assert names[layout.step_var("soc", 1)] == "soc[1]"
        assert len(names) == layout.n_variables
        assert np.count_nonzero(layout.binary_mask()) == 3 * 2 * 4


class TestBuild:
    """Test cases for problem construction."""

    def test_built_problem_is_valid(self, models_2):
        """Test the structural checks pass on a built problem."""
        rng = np.random.default_rng(0)
        problem = build(PowerProfile(10.0, rng.uniform(0.0, 100.0, 6)), make_horizon(6, 2), models_2)

        report = validate(problem)

        assert report["is_valid"], report["findings"]
        assert report["summary"]["integers"] == problem.n_integers
        assert set(problem.objective_terms) == set(COST_CATEGORIES)

    def test_consistent_schedule_satisfies_rows(self, models_1):
        """Test a physically consistent plan meets every constraint."""
        demand = np.array([30.0, 56.0, 14.0, 0.0, 20.0])
        power = np.array([[30.0], [56.0], [14.0], [0.0], [20.0]])
        problem = build(PowerProfile(10.0, demand), make_horizon(5, 1), models_1)

        assert violated_rows(problem, consistent_point(problem, power)) == []

    def test_terminal_window_binds_end_state(self, models_1):
        """Test the terminal rows apply to the SOC after the last step's current."""
        demand = np.array([150.0])
        narrow = build(PowerProfile(10.0, demand), make_horizon(1, 1, soc_final_min=49.9, soc_final_max=50.1),
                       models_1)
        wide = build(PowerProfile(10.0, demand), make_horizon(1, 1, soc_final_min=49.0, soc_final_max=50.1),
                     models_1)

        assert violated_rows(narrow, consistent_point(narrow, [[70.0]])) == ["soc-terminal-min[0]"]
        assert violated_rows(wide, consistent_point(wide, [[70.0]])) == []

    def test_high_load_indicator_forced(self, models_1):
        """Test running at p_high without the high-load flag breaks a row."""
        problem = build(PowerProfile(10.0, np.array([56.0])), make_horizon(1, 1), models_1)
        x = consistent_point(problem, [[56.0]])
        x[problem.layout.stack_var("high", 0, 0)] = 0.0

        assert "high-load-upper[0,0]" in violated_rows(problem, x)

    def test_high_load_indicator_excluded_below_threshold(self, models_1):
        """Test the high-load flag cannot be set below p_high."""
        problem = build(PowerProfile(10.0, np.array([30.0])), make_horizon(1, 1), models_1)
        x = consistent_point(problem, [[30.0]])
        x[problem.layout.stack_var("high", 0, 0)] = 1.0

        assert "high-load-lower[0,0]" in violated_rows(problem, x)

    def test_idle_indicator_forced_at_p_low(self, models_1):
        """Test an on stack at p_low must be flagged idle."""
        problem = build(PowerProfile(10.0, np.array([14.0])), make_horizon(1, 1), models_1)
        x = consistent_point(problem, [[14.0]])
        x[problem.layout.stack_var("idle", 0, 0)] = 0.0

        assert "idle-lower[0,0]" in violated_rows(problem, x)

    def test_idle_indicator_excluded_above_p_low(self, models_1):
        """Test the idle flag cannot be set well above p_low."""
        problem = build(PowerProfile(10.0, np.array([30.0])), make_horizon(1, 1), models_1)
        x = consistent_point(problem, [[30.0]])
        x[problem.layout.stack_var("idle", 0, 0)] = 1.0

        assert "idle-upper[0,0]" in violated_rows(problem, x)

    def test_off_stack_cannot_deliver(self, models_1):
        """Test gating forbids power from an off stack."""
        problem = build(PowerProfile(10.0, np.array([30.0])), make_horizon(1, 1), models_1)
        x = consistent_point(problem, [[30.0]])
        x[problem.layout.stack_var("on", 0, 0)] = 0.0

        assert "gating-max[0,0]" in violated_rows(problem, x)

    def test_breakdown_sums_to_objective(self, models_1):
        """Test the category terms add up to the objective."""
        demand = np.array([30.0, 56.0, 14.0])
        problem = build(PowerProfile(10.0, demand), make_horizon(3, 1), models_1)
        x = consistent_point(problem, demand[:, None])

        breakdown = objective_breakdown(problem, x)

        assert sum(breakdown.values()) == pytest.approx(problem.objective(x), rel=1e-12)

    def test_hydrogen_term_prices_fuel(self, models_1):
        """Test the hydrogen term equals price times fuel mass."""
        demand = np.array([30.0, 56.0, 0.0])
        horizon = make_horizon(3, 1, h2_price=4.0)
        problem = build(PowerProfile(10.0, demand), horizon, models_1)
        x = consistent_point(problem, demand[:, None])
        stack = models_1.stacks[0]

        expected = sum(4.0 * 10.0 * fuel_rate(p, p > 0, stack) for p in demand)

        assert objective_breakdown(problem, x)["h2_cost"] == pytest.approx(expected, rel=1e-12)

    def test_collective_costs_scale_with_stack_count(self, models_2):
        """Test csc multiplies per-stack costs by the stack count."""
        demand = np.array([60.0, 60.0])
        problem = build(PowerProfile(10.0, demand), make_horizon(2, 2, mode="csc"), models_2)
        x = consistent_point(problem, [[30.0], [30.0]])
        stack = models_2.stacks[0]

        assert violated_rows(problem, x) == []
        assert objective_breakdown(problem, x)["h2_cost"] == pytest.approx(
            2 * 2 * 4.0 * 10.0 * fuel_rate(30.0, True, stack), rel=1e-12)

    def test_profile_length_mismatch(self, models_1):
        """Test the profile must cover the horizon exactly."""
        with pytest.raises(FormulationError, match="horizon expects 4"):
            build(PowerProfile(10.0, np.zeros(3)), make_horizon(4, 1), models_1)

    def test_initial_soc_outside_bounds(self, models_1):
        """Test an initial SOC outside the operating window is rejected."""
        with pytest.raises(FormulationError, match="Initial SOC"):
            build(PowerProfile(10.0, np.zeros(2)), make_horizon(2, 1, soc_initial=95.0), models_1)

    def test_collective_requires_identical_stacks(self, surrogate, models_1):
        """Test csc rejects stacks with different parameters."""
        models = SystemModels(cell=models_1.cell, pack=models_1.pack, surrogate=surrogate,
                              stacks=(FcStackParams(), FcStackParams(p_max=80.0)))

        with pytest.raises(FormulationError, match="identical stacks"):
            build(PowerProfile(10.0, np.zeros(2)), make_horizon(2, 2, mode="csc"), models)

    def test_collective_requires_identical_initial_states(self, models_2):
        """Test csc rejects stacks that start in different states."""
        horizon = make_horizon(2, 2, mode="csc", initial_power=(20.0, 0.0))

        with pytest.raises(FormulationError, match="identical initial stack states"):
            build(PowerProfile(10.0, np.zeros(2)), horizon, models_2)

    def test_unknown_mode(self):
        """Test an unknown control mode is rejected."""
        with pytest.raises(FormulationError, match="Unknown control mode"):
            HorizonSpec(n_steps=2, dt=1.0, n_stacks=1, mode="joint")

    def test_off_stack_with_initial_power(self):
        """Test initial states must be consistent."""
        with pytest.raises(FormulationError, match="initially off"):
            HorizonSpec(n_steps=2, dt=1.0, n_stacks=1, initial_power=(20.0,), initial_on=(False,))


class TestValidate:
    """Test cases for structural validation."""

    def test_negative_quadratic(self):
        """Test a concave objective coefficient is reported."""
        problem = make_problem([-1.0, 0.0], [0.0, 1.0], [[1.0, 1.0]], [0.0], [1.0], [0, 0], [1, 1])

        report = validate(problem)

        assert not report["is_valid"]
        assert report["findings"][0]["check"] == "convexity"

    def test_empty_row_and_orphan_variable(self):
        """Test rows without variables and unused variables are reported."""
        problem = make_problem([1.0, 0.0], [0.0, 0.0], [[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0], [1.0, 1.0],
                               [0, 0], [1, 1], row_labels=["used", "empty"])

        checks = {(f["check"], f["message"]) for f in validate(problem)["findings"]}

        assert ("empty-row", "empty references no variable") in checks
        assert ("coverage", "variable x[1] appears in no row and not in the objective") in checks

    def test_crossed_bounds(self):
        """Test a lower bound above its upper bound is reported."""
        problem = make_problem([1.0], [0.0], [[1.0]], [0.0], [1.0], [2.0], [1.0])

        assert "bounds" in {f["check"] for f in validate(problem)["findings"]}

    def test_fractional_integer_bound(self):
        """Test integer variables need integral bounds."""
        problem = make_problem([1.0], [0.0], [[1.0]], [0.0], [1.0], [0.0], [0.5], integer=[True])

        assert "integrality" in {f["check"] for f in validate(problem)["findings"]}

    def test_row_senses_inferred(self):
        """Test make_problem reads senses from the finite sides."""
        problem = make_problem([0.0, 0.0], [1.0, 1.0], np.eye(4, 2), [1.0, 0.0, -np.inf, 0.0],
                               [1.0, np.inf, 2.0, 3.0], [0, 0], [5, 5])

        assert problem.row_sense == ("E", "G", "L", "R")


class TestExtraction:
    """Test cases for schedule extraction."""

    def test_extract_consistent_point(self, models_1):
        """Test a consistent point becomes the matching schedule."""
        demand = np.array([30.0, 56.0, 0.0])
        problem = build(PowerProfile(10.0, demand), make_horizon(3, 1), models_1)

        schedule = extract_schedule(problem, consistent_point(problem, demand[:, None]))

        np.testing.assert_allclose(schedule.fc_power[:, 0], demand)
        np.testing.assert_array_equal(schedule.fc_on[:, 0], [True, True, False])
        np.testing.assert_allclose(schedule.battery_power, 0.0, atol=1e-12)
        assert schedule.soc[0] == 50.0

    def test_near_binary_values_rounded(self, models_1):
        """Test binaries within tolerance are accepted and rounded."""
        problem = build(PowerProfile(10.0, np.array([30.0])), make_horizon(1, 1), models_1)
        x = consistent_point(problem, [[30.0]])
        x[problem.layout.stack_var("on", 0, 0)] = 1.0 - 1e-9

        assert extract_schedule(problem, x).fc_on[0, 0]

    def test_integrality_violation(self, models_1):
        """Test a fractional binary names its variable."""
        problem = build(PowerProfile(10.0, np.array([30.0])), make_horizon(1, 1), models_1)
        x = consistent_point(problem, [[30.0]])
        x[problem.layout.stack_var("on", 0, 0)] = 0.5

        with pytest.raises(ExtractionError, match=r"Integrality violated for on\[0,0\]"):
            extract_schedule(problem, x)

    def test_gating_violation(self, models_1):
        """Test an off stack with power names the gating row."""
        problem = build(PowerProfile(10.0, np.array([30.0, 30.0])), make_horizon(2, 1), models_1)
        x = consistent_point(problem, [[30.0], [30.0]])
        x[problem.layout.stack_var("on", 1, 0)] = 0.0

        with pytest.raises(ExtractionError, match=r"gating-max\[1,0\]"):
            extract_schedule(problem, x)

    def test_power_balance_violation(self, models_1):
        """Test a battery power that breaks the balance is rejected."""
        problem = build(PowerProfile(10.0, np.array([30.0])), make_horizon(1, 1), models_1)
        x = consistent_point(problem, [[30.0]])
        x[problem.layout.step_var("p_bat", 0)] = 5.0

        with pytest.raises(ExtractionError, match=r"power-balance\[0\]"):
            extract_schedule(problem, x)

    def test_wrong_length(self, models_1):
        """Test the value vector must match the problem."""
        problem = build(PowerProfile(10.0, np.array([30.0])), make_horizon(1, 1), models_1)

        with pytest.raises(ExtractionError, match="Expected"):
            extract_schedule(problem, np.zeros(3))

    def test_collective_schedule_expanded(self, models_2):
        """Test csc schedules list every physical stack."""
        problem = build(PowerProfile(10.0, np.array([60.0])), make_horizon(1, 2, mode="csc"), models_2)

        schedule = extract_schedule(problem, consistent_point(problem, [[30.0]]))

        assert schedule.n_stacks == 2
        np.testing.assert_allclose(schedule.fc_power[0], [30.0, 30.0])

    def test_head(self, models_1):
        """Test head keeps the first steps."""
        demand = np.array([30.0, 56.0, 0.0])
        problem = build(PowerProfile(10.0, demand), make_horizon(3, 1), models_1)

        head = extract_schedule(problem, consistent_point(problem, demand[:, None])).head(2)

        assert head.n_steps == 2
        np.testing.assert_allclose(head.fc_power[:, 0], [30.0, 56.0])

    def test_planned_end_soc(self, models_1):
        """Test the schedule carries the SOC after its last step, also when cut."""
        demand = np.array([30.0, 56.0, 0.0])
        problem = build(PowerProfile(10.0, demand), make_horizon(3, 1), models_1)
        x = consistent_point(problem, demand[:, None])
        layout = problem.layout
        gain = float(soc_increment(1.0, 10.0, models_1.cell))

        schedule = extract_schedule(problem, x)

        end = x[layout.step_var("soc", 2)] + gain * x[layout.step_var("i_bat", 2)]
        assert schedule.soc_end == pytest.approx(end, abs=1e-12)
        assert schedule.head(2).soc_end == x[layout.step_var("soc", 2)]
        assert schedule.head(3).soc_end == schedule.soc_end


    """Test cases for the text listing."""

    def test_listing_names_rows(self, models_1):
        """Test the listing holds the size header and labeled rows."""
        problem = build(PowerProfile(10.0, np.array([30.0, 20.0])), make_horizon(2, 1), models_1)

        with tempfile.TemporaryDirectory() as temp_dir:
            path = dump_problem(problem, str(Path(temp_dir) / "problem.txt"))
            lines = Path(path).read_text(encoding="utf-8").splitlines()

        assert lines[0] == f"# variables {problem.n_variables}, integers {problem.n_integers}, rows {problem.n_rows}"
        assert any(line.startswith("power-balance[1]:") for line in lines)
        assert any(line.startswith("on[0,0] binary") for line in lines)
