"""
End-to-end acceptance checks: reformulation exactness on random instances,
the DP cross-check and speedup on the desk scenario, and the individual
versus collective control comparison on the low-demand scenario.

Author: noomesk
"""

from pathlib import Path

import numpy as np
import pytest

from src.config import load_config
from src.dp import rollout, solve_dp
from src.formulation import build
from src.fuelcell import THRESHOLD_EPS
from src.mpc import curtail_demand, regeneration_limit, run_mpc
from src.solver import OPTIMAL, SolverOptions, solve
from src.vehicle import PowerProfile

from tests.conftest import make_horizon, make_models, random_profile


CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"
EXACT = SolverOptions(abs_gap_tol=1e-7, rel_gap_tol=1e-9, kkt_tol=1e-9, time_limit=120.0)


def mission_window(config):
    """Whole-mission demand, curtailed at the initial SOC like the optimize and dp commands."""
    n_steps = config.mpc_config.steps(config.dt)[0]
    window = config.profile.window(0, n_steps)
    limit = regeneration_limit(config.models, config.horizon(n_steps).soc_initial)
    demand, _ = curtail_demand(window.demand, limit)
    return PowerProfile(window.dt, demand), n_steps


def check_auxiliaries(problem, values, tol=1e-4):
    """Assert every auxiliary variable equals the quantity it linearizes."""
    layout, horizon = problem.layout, problem.horizon
    stack = problem.models.stacks[0]
    K = layout.n_modeled

    def column(name):
        return values[layout.stack_indices(name)]

    power, on, switch = column("p_fc"), column("on"), column("switch")
    prev_power = np.vstack([np.array(horizon.initial_power[:K])[None, :], power[:-1]])
    prev_on = np.vstack([np.array(horizon.initial_on[:K], dtype=float)[None, :], on[:-1]])

    np.testing.assert_allclose(switch, np.abs(on - prev_on), atol=1e-6)
    np.testing.assert_allclose(column("dp_fc"), np.abs(power - prev_power), atol=tol)
    np.testing.assert_allclose(column("z_idle"), np.maximum(0.0, column("idle") + on - 1.0), atol=1e-6)

    high = np.round(column("high")).astype(bool)
    assert np.all(power[high] >= stack.p_high - tol)
    assert np.all(power[~high] <= stack.p_high - 2.0 * THRESHOLD_EPS + tol)

    current = values[layout.step_indices("i_bat")]
    np.testing.assert_allclose(values[layout.step_indices("i_abs")], np.abs(current), atol=1e-5)


@pytest.mark.slow
class TestReformulation:
    """Auxiliary variables are exact at the optimum."""

    def test_random_instances(self, surrogate):
        """Test 200 solved random instances against the absolute-value and product definitions."""
        rng = np.random.default_rng(314)
        solved = 0

        for _ in range(200):
            n_stacks = int(rng.integers(1, 3))
            mode = "isc" if n_stacks == 1 else str(rng.choice(["isc", "csc"]))
            n_steps = int(rng.integers(2, 4))
            start = float(rng.uniform(14.0, 70.0)) if rng.integers(0, 2) else 0.0
            horizon = make_horizon(n_steps, n_stacks, mode=mode, initial_power=(start,) * n_stacks)
            problem = build(random_profile(rng, n_steps, n_stacks), horizon, make_models(surrogate, n_stacks))

            result = solve(problem, EXACT)

            assert result.status == OPTIMAL
            check_auxiliaries(problem, result.values)
            solved += 1

        assert solved >= 200


@pytest.mark.slow
class TestDeskScenario:
    """MIQP against the DP benchmark on the two-stack desk mission."""

    @pytest.fixture(scope="class")
    def desk_runs(self):
        config = load_config(str(CONFIG_DIR / "desk.toml"))
        window, n_steps = mission_window(config)
        horizon = config.horizon(n_steps, mode="csc")

        solution = solve(build(window, horizon, config.models), config.solver_options)
        policy = solve_dp(window, config.models, horizon, config.dp_grids)
        return solution, policy, rollout(policy)

    def test_miqp_not_worse_than_dp(self, desk_runs):
        """Test the MIQP objective is at most the DP rollout cost."""
        solution, _, result = desk_runs

        assert solution.status == OPTIMAL
        assert solution.objective <= result.breakdown.total + 1e-6

    def test_miqp_fifty_times_faster(self, desk_runs):
        """Test the MIQP solve takes at most a fiftieth of the DP wall time."""
        solution, policy, _ = desk_runs

        assert solution.wall_time <= policy.wall_time / 50.0


@pytest.mark.slow
class TestLowDemandScenario:
    """Individual against collective stack control with ample stack capacity."""

    @pytest.fixture(scope="class")
    def mpc_runs(self):
        config = load_config(str(CONFIG_DIR / "low_demand.toml"))
        runs = {}
        for mode in ("isc", "csc"):
            runs[mode] = run_mpc(config.profile, config.models, config.horizon(mode=mode), config.mpc_config,
                                 config.solver_options)
        return runs, config.solver_options

    def test_individual_not_costlier(self, mpc_runs):
        """Test ISC costs no more than CSC, allowing each block its optimality gap."""
        runs, options = mpc_runs
        isc, csc = runs["isc"], runs["csc"]
        allowance = sum(max(options.abs_gap_tol, options.rel_gap_tol * abs(block["objective"]))
                        for block in isc.blocks)

        assert isc.breakdown.total <= csc.breakdown.total + allowance

    def test_idling_nearly_removed(self, mpc_runs):
        """Test ISC idling cost is at most a tenth of the CSC idling cost."""
        runs, _ = mpc_runs

        assert runs["csc"].breakdown.fc_idling > 0
        assert runs["isc"].breakdown.fc_idling <= 0.1 * runs["csc"].breakdown.fc_idling

    def test_total_reduction(self, mpc_runs):
        """Test ISC saves at least 30 % of the CSC mission cost."""
        runs, _ = mpc_runs
        isc, csc = runs["isc"].breakdown.total, runs["csc"].breakdown.total

        assert (csc - isc) / csc >= 0.30
