#!/usr/bin/env python3
"""
Demo script to show the fuel-cell hybrid EMS on the desk scenario

Author: noomesk
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.battery import BatteryState
from src.config import CONFIG_DIR, load_config
from src.dp import DpGrids, rollout, solve_dp
from src.formulation import build, extract_schedule
from src.mpc import account_costs, simulate_schedule
from src.solver import solve
from src.stats import RunRecord, compare, format_comparison_table, save_report


def demo_basic_functionality():
    """Demonstrate the MIQP and DP pipelines on a two-minute collective-control window."""

    print("🚌 Fuel-Cell Hybrid EMS - Demo Script")
    print("=" * 50)

    # Test 1: Load the desk scenario, shortened to two minutes
    print("\n1. Loading the desk scenario:")
    try:
        config = load_config(str(CONFIG_DIR / "desk.toml"), {"mpc": {"horizon_s": 120.0, "block_s": 120.0}})
        n_steps = config.mpc_config.steps(config.dt)[0]
        horizon = config.horizon(n_steps)
        window = config.profile.window(0, n_steps)
        models = config.models

        print(f"   ✅ {config.n_stacks} stacks, {n_steps} steps of {config.dt:g} s ({horizon.mode.upper()})")
        print(f"   📈 Demand peak {window.demand.max():.1f} kW, minimum {window.demand.min():.1f} kW")
        print(f"   🔋 Battery surrogate: a_bat={models.surrogate.a_bat:.4g}, "
              f"R2={models.surrogate.r_squared_current:.4f}")

    except Exception as e:
        print(f"   ❌ Error: {e}")
        return

    # Test 2: Build and solve the MIQP
    print("\n2. Solving the MIQP:")
    try:
        problem = build(window, horizon, models)
        print(f"   📐 {problem.n_variables} variables, {problem.n_integers} binaries, {problem.n_rows} rows")

        solution = solve(problem, config.solver_options)
        print(f"   ✅ Status {solution.status}, objective {solution.objective:.4f} $, "
              f"{solution.nodes_explored} nodes in {solution.wall_time:.2f} s")

        trace = simulate_schedule(extract_schedule(problem, solution.values), models, horizon.h2_price,
                                  BatteryState(soc=horizon.soc_initial))
        miqp = RunRecord(label="miqp-csc", trace=trace, breakdown=account_costs(trace, models),
                         wall_time=solution.wall_time)
        print(f"   💰 Applied cost {miqp.breakdown.total:.4f} $, end SOC {trace.soc[-1]:.2f} %")

    except Exception as e:
        print(f"   ❌ Error: {e}")
        return

    # Test 3: Dynamic-programming benchmark on a coarse grid
    print("\n3. Running the DP benchmark:")
    try:
        policy = solve_dp(window, models, horizon, DpGrids(soc_step=0.1, fc_power_step=5.0))
        result = rollout(policy)
        dp = RunRecord(label="dp-csc", trace=result.trace, breakdown=result.breakdown, wall_time=policy.wall_time)

        print(f"   ✅ {policy.soc_grid.size} SOC points x {policy.control_grid.size} controls "
              f"in {policy.wall_time:.2f} s")
        print(f"   💰 Rollout cost {result.breakdown.total:.4f} $ (predicted {result.predicted_cost:.4f} $)")

    except Exception as e:
        print(f"   ❌ Error: {e}")
        return

    # Test 4: Compare and save the report
    print("\n4. Comparing MIQP against DP:")
    try:
        report = compare(dp, miqp)
        print(format_comparison_table(report))

        json_path = save_report(report, 'json', 'demo_report.json')
        print(f"   ✅ JSON report saved to: {json_path}")

    except Exception as e:
        print(f"   ❌ Error: {e}")

    # Test 5: Demo CLI functionality (show command structure)
    print("\n5. CLI Commands available:")
    print("   💻 python -m src.cli --help")
    print("   💻 python -m src.cli optimize -c config/desk.toml --export-mps")
    print("   💻 python -m src.cli dp -c config/desk.toml --soc-step 0.05")
    print("   💻 python -m src.cli simulate -c config/low_demand.toml --mode isc")
    print("   💻 python -m src.cli compare runs/<run-a> runs/<run-b>")

    print("\n🎉 Demo completed successfully!")


if __name__ == "__main__":
    demo_basic_functionality()
