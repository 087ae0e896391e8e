# Health-Aware Fuel-Cell Hybrid EMS
# Author: noomesk
# License: MIT License


"""
Health-aware energy management for a multi-stack fuel-cell / battery bus.

This package provides:
- Drive-cycle to power-demand conversion
- Battery and fuel-cell stack models with their optimizer surrogates
- A sparse MIQP formulation and a branch-and-bound solver on OSQP
- A dynamic-programming benchmark
- A closed-loop MPC harness with cost accounting
- Command-line interface
"""

__version__ = "1.0.0"
__author__ = "noomesk"

from .formulation import HorizonSpec, SystemModels, build, extract_schedule
from .solver import SolverOptions, solve
from .mpc import MpcConfig, account_costs, run_mpc
from .stats import compare, save_report

__all__ = [
    "HorizonSpec",
    "SystemModels",
    "build",
    "extract_schedule",
    "SolverOptions",
    "solve",
    "MpcConfig",
    "account_costs",
    "run_mpc",
    "compare",
    "save_report",
]
