"""
MIQP Solver Module

Branch-and-bound for convex mixed-integer quadratic programs. Node
relaxations are continuous QPs solved with OSQP; a single OSQP workspace is
set up once per problem and only the variable bounds change from node to
node, so each solve is warm started from the previous one.

The search combines:

- activity-based bound propagation with integer rounding
- best-bound or depth-first node selection
- most-fractional or pseudo-cost branching (ties go to the lowest index)
- rounding and diving heuristics plus an optional warm-start incumbent

Author: noomesk
"""

import heapq
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import osqp
from scipy import sparse

from .formulation import MiqpProblem, VariableLayout, validate


logger = logging.getLogger(__name__)

OSQP_INF = 1e30
FEASIBILITY_TOL = 1e-6

OPTIMAL = "optimal"
GAP_LIMIT = "gap-limit"
TIME_LIMIT = "time-limit"
NODE_LIMIT = "node-limit"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
# No incumbent, and some node relaxations could not be solved or branched.
UNRESOLVED = "unresolved"

# Iteration budget and tolerance floor of the cold retry after a stalled QP.
RETRY_ITER_FACTOR = 4
RETRY_TOL = 1e-6

BRANCHING_RULES = ("most-fractional", "pseudo-cost")
NODE_SELECTION = ("best-bound", "depth-first")


class SolverError(Exception):
    """Custom exception for solver setup and numerical errors."""
    pass


@dataclass(frozen=True)
class SolverOptions:
    """Termination tolerances and search strategy."""

    abs_gap_tol: float = 1e-4
    rel_gap_tol: float = 1e-6
    time_limit: float = 60.0
    node_limit: int = 100000
    integrality_tol: float = 1e-6
    kkt_tol: float = 1e-8
    branching: str = "most-fractional"
    node_selection: str = "best-bound"
    threads: int = 1
    heuristic_interval: int = 50
    max_qp_iter: int = 50000

    def __post_init__(self):
        if self.branching not in BRANCHING_RULES:
            raise SolverError(f"Unknown branching rule '{self.branching}'")
        if self.node_selection not in NODE_SELECTION:
            raise SolverError(f"Unknown node selection '{self.node_selection}'")
        for name in ("abs_gap_tol", "rel_gap_tol", "time_limit", "integrality_tol", "kkt_tol"):
            if not getattr(self, name) > 0:
                raise SolverError(f"Solver option '{name}' must be positive")
        if self.node_limit < 1 or self.threads < 1 or self.max_qp_iter < 1:
            raise SolverError("node_limit, threads and max_qp_iter must be at least 1")


@dataclass(frozen=True, eq=False)
class QpSolution:
    """Result of one continuous QP solve.

    ``status`` is ``optimal``, ``infeasible``, ``unbounded`` or ``failed``;
    ``certificate`` holds the OSQP infeasibility certificate when present.
    ``accurate`` is False when OSQP reported an inaccurate solution or the
    solve needed the looser retry tolerance.
    """

    status: str
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    objective: float = math.inf
    residuals: Dict[str, float] = field(default_factory=dict)
    accurate: bool = True
    iterations: int = 0
    certificate: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class MiqpSolution:
    status: str
    objective: float
    best_bound: float
    gap: float
    values: Optional[np.ndarray]
    nodes_explored: int
    wall_time: float
    layout: Optional[VariableLayout] = None
    failed_nodes: int = 0
    inaccurate_nodes: int = 0
    log: Tuple[str, ...] = ()

    @property
    def has_incumbent(self) -> bool:
        return self.values is not None

    def as_dict(self) -> Dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "best_bound": self.best_bound,
            "gap": self.gap,
            "nodes_explored": self.nodes_explored,
            "wall_time_s": self.wall_time,
            "failed_nodes": self.failed_nodes,
            "inaccurate_nodes": self.inaccurate_nodes,
        }


@dataclass(frozen=True, eq=False)
class WarmStartHint:
    """Step-major solution values carried to the next solve."""

    values: np.ndarray
    vars_per_step: int
    mode: str

    @property
    def n_steps(self) -> int:
        return int(self.values.size // self.vars_per_step)


def warm_start_from(solution: MiqpSolution, shift: int) -> Optional[WarmStartHint]:
    """Drop the first ``shift`` steps of a solution to seed the next block."""
    if solution.values is None or solution.layout is None:
        return None
    vps = solution.layout.vars_per_step
    values = np.asarray(solution.values, dtype=float)[shift * vps:]
    if values.size == 0:
        return None
    return WarmStartHint(values=values.copy(), vars_per_step=vps, mode=solution.layout.mode)


def _clip_inf(values: np.ndarray) -> np.ndarray:
    return np.clip(values, -OSQP_INF, OSQP_INF)


def kkt_residuals(problem: MiqpProblem, lower: np.ndarray, upper: np.ndarray,
                  x: np.ndarray, y: np.ndarray) -> Dict[str, float]:
    """Primal, dual and complementarity residuals in OSQP's sign convention.

    ``y`` stacks the row multipliers followed by the bound multipliers.
    """
    A_full = sparse.vstack([problem.A, sparse.identity(problem.n_variables, format="csr")]).tocsr()
    l_full = np.concatenate([problem.row_lower, lower])
    u_full = np.concatenate([problem.row_upper, upper])
    ax = A_full @ x
    primal = float(np.max(np.maximum(l_full - ax, 0.0) + np.maximum(ax - u_full, 0.0), initial=0.0))
    gradient = 2.0 * problem.quad * x + problem.lin + A_full.T @ y
    dual = float(np.max(np.abs(gradient), initial=0.0))
    upper_gap = np.where(np.isfinite(u_full), u_full - ax, OSQP_INF)
    lower_gap = np.where(np.isfinite(l_full), ax - l_full, OSQP_INF)
    complementarity = np.where(y > 0, y * upper_gap, np.where(y < 0, -y * lower_gap, 0.0))
    return {
        "primal": primal,
        "dual": dual,
        "complementarity": float(np.max(np.abs(complementarity), initial=0.0)),
    }


class QpRelaxation:
    """OSQP workspace for the continuous relaxation of a problem.

    Constraint rows are stacked with an identity block carrying the variable
    bounds, so node bound changes are a single ``update`` of ``l`` and ``u``.
    """

    def __init__(self, problem: MiqpProblem, kkt_tol: float = 1e-8, max_iter: int = 50000):
        self.problem = problem
        self.kkt_tol = kkt_tol
        self.max_iter = max_iter
        n = problem.n_variables
        P = sparse.diags(2.0 * problem.quad, format="csc")
        P.eliminate_zeros()
        A_full = sparse.vstack([problem.A, sparse.identity(n, format="csr")]).tocsc()
        self._row_lower = _clip_inf(problem.row_lower)
        self._row_upper = _clip_inf(problem.row_upper)
        self._model = osqp.OSQP()
        self._model.setup(
            P=sparse.triu(P, format="csc"),
            q=problem.lin.astype(float),
            A=A_full,
            l=np.concatenate([self._row_lower, _clip_inf(problem.var_lower)]),
            u=np.concatenate([self._row_upper, _clip_inf(problem.var_upper)]),
            verbose=False,
            eps_abs=kkt_tol,
            eps_rel=kkt_tol,
            max_iter=max_iter,
            polish=True,
            polish_refine_iter=10,
            adaptive_rho=True,
            warm_start=True,
        )

    def solve(self, lower: np.ndarray, upper: np.ndarray) -> QpSolution:
        """Solve the relaxation under the given variable bounds.

        Args:
            lower (np.ndarray): Variable lower bounds
            upper (np.ndarray): Variable upper bounds

        Returns:
            QpSolution: Status, primal/dual vectors, objective and residuals
        """
        if np.any(lower > upper):
            return QpSolution(status="infeasible")
        self._model.update(
            l=np.concatenate([self._row_lower, _clip_inf(lower)]),
            u=np.concatenate([self._row_upper, _clip_inf(upper)]),
        )
        result = self._model.solve()
        status = str(result.info.status).lower()
        iterations = int(result.info.iter)
        retried = False
        if not _settled(status):
            result = self._retry()
            status = str(result.info.status).lower()
            iterations += int(result.info.iter)
            retried = True
            logger.debug("QP retry after a stalled solve ended %s", status)

        if status == "primal infeasible inaccurate" or status == "dual infeasible inaccurate":
            return QpSolution(status="failed", iterations=iterations)
        if "primal infeasible" in status:
            cert = getattr(result, "prim_inf_cert", None)
            return QpSolution(status="infeasible", iterations=iterations,
                              certificate=None if cert is None else np.array(cert))
        if "dual infeasible" in status:
            cert = getattr(result, "dual_inf_cert", None)
            return QpSolution(status="unbounded", iterations=iterations,
                              certificate=None if cert is None else np.array(cert))
        if not status.startswith("solved"):
            return QpSolution(status="failed", iterations=iterations)

        x = np.array(result.x, dtype=float)
        y = np.array(result.y, dtype=float)
        residuals = kkt_residuals(self.problem, lower, upper, x, y)
        accurate = status == "solved" and not (retried and RETRY_TOL > self.kkt_tol)
        return QpSolution(
            status="optimal",
            x=x,
            y=y,
            objective=self.problem.objective(x),
            residuals=residuals,
            accurate=accurate,
            iterations=iterations,
        )

    def _retry(self):
        """Cold restart with a larger iteration budget; settings are restored afterwards."""
        n, m = self.problem.n_variables, self.problem.n_rows + self.problem.n_variables
        tol = max(self.kkt_tol, RETRY_TOL)
        self._model.warm_start(x=np.zeros(n), y=np.zeros(m))
        self._model.update_settings(max_iter=RETRY_ITER_FACTOR * self.max_iter, eps_abs=tol, eps_rel=tol)
        try:
            return self._model.solve()
        finally:
            self._model.update_settings(max_iter=self.max_iter, eps_abs=self.kkt_tol, eps_rel=self.kkt_tol)


def _settled(status: str) -> bool:
    return status.startswith("solved") or status in ("primal infeasible", "dual infeasible")


def dual_bound(problem: MiqpProblem, lower: np.ndarray, upper: np.ndarray, y: np.ndarray) -> float:
    """Lagrangian lower bound on the relaxation under the given variable bounds.

    Only the row multipliers of ``y`` are used; multipliers pointing at an
    infinite row side are dropped. The bound holds for any ``y`` and meets
    the relaxation optimum at an exact dual solution.
    """
    y_rows = np.asarray(y, dtype=float)[:problem.n_rows]
    up_mult = np.where(np.isfinite(problem.row_upper), np.maximum(y_rows, 0.0), 0.0)
    lo_mult = np.where(np.isfinite(problem.row_lower), np.maximum(-y_rows, 0.0), 0.0)
    r = problem.lin + problem.A.T @ (up_mult - lo_mult)
    q = problem.quad

    x = np.zeros(problem.n_variables)
    curved = q > 0
    x[curved] = -r[curved] / (2.0 * q[curved])
    x[~curved & (r > 0)] = -np.inf
    x[~curved & (r < 0)] = np.inf
    x = np.clip(x, lower, upper)
    if not np.all(np.isfinite(x)):
        return -math.inf

    sides = (np.dot(up_mult, np.where(up_mult > 0, problem.row_upper, 0.0))
             - np.dot(lo_mult, np.where(lo_mult > 0, problem.row_lower, 0.0)))
    return float(np.dot(q, x ** 2) + np.dot(r, x) + problem.constant - sides)


def solve_qp(problem: MiqpProblem, lower: Optional[np.ndarray] = None,
             upper: Optional[np.ndarray] = None, kkt_tol: float = 1e-8) -> QpSolution:
    """Solve the continuous relaxation once (integrality ignored).

    Args:
        problem (MiqpProblem): Problem whose integers are relaxed or fixed by bounds
        lower (np.ndarray, optional): Variable lower bounds (problem bounds if None)
        upper (np.ndarray, optional): Variable upper bounds (problem bounds if None)
        kkt_tol (float): Absolute and relative OSQP tolerance

    Returns:
        QpSolution: Optimal point with residuals, or an infeasible/unbounded
        status with the certificate
    """
    if problem.n_variables == 0:
        raise SolverError("Problem has no variables")
    relaxation = QpRelaxation(problem, kkt_tol=kkt_tol)
    lower = problem.var_lower if lower is None else np.asarray(lower, dtype=float)
    upper = problem.var_upper if upper is None else np.asarray(upper, dtype=float)
    return relaxation.solve(lower, upper)


class BoundPropagator:
    """Activity-based bound tightening over the constraint rows."""

    def __init__(self, problem: MiqpProblem, integrality_tol: float = 1e-6, max_passes: int = 4):
        coo = problem.A.tocoo()
        keep = coo.data != 0
        self.rows = coo.row[keep]
        self.cols = coo.col[keep]
        self.vals = coo.data[keep]
        self.n_rows = problem.n_rows
        self.n_vars = problem.n_variables
        self.row_lower = problem.row_lower
        self.row_upper = problem.row_upper
        self.integer = problem.integer
        self.tol = integrality_tol
        self.max_passes = max_passes

    def _residual_activity(self, contrib: np.ndarray) -> np.ndarray:
        """Row activity without each entry's own contribution."""
        finite = np.isfinite(contrib)
        total = np.zeros(self.n_rows)
        np.add.at(total, self.rows[finite], contrib[finite])
        n_inf = np.zeros(self.n_rows, dtype=int)
        np.add.at(n_inf, self.rows[~finite], 1)
        count = n_inf[self.rows]
        residual = np.where(finite, total[self.rows] - np.where(finite, contrib, 0.0), total[self.rows])
        # Other entries still infinite: no information.
        unknown = (count - (~finite).astype(int)) > 0
        return np.where(unknown, np.nan, residual)

    def propagate(self, lower: np.ndarray, upper: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Tighten bounds in place of copies.

        Returns:
            Optional[Tuple[np.ndarray, np.ndarray]]: Tightened bounds, or None
            when the bounds prove the node infeasible
        """
        lower = lower.copy()
        upper = upper.copy()
        if self.vals.size == 0:
            return (lower, upper) if np.all(lower <= upper + FEASIBILITY_TOL) else None

        positive = self.vals > 0
        for _ in range(self.max_passes):
            lo_col = lower[self.cols]
            up_col = upper[self.cols]
            with np.errstate(invalid="ignore"):
                min_contrib = np.where(positive, self.vals * lo_col, self.vals * up_col)
                max_contrib = np.where(positive, self.vals * up_col, self.vals * lo_col)
            min_rest = self._residual_activity(min_contrib)
            max_rest = self._residual_activity(max_contrib)

            row_up = self.row_upper[self.rows]
            row_lo = self.row_lower[self.rows]
            with np.errstate(invalid="ignore", divide="ignore"):
                from_upper = (row_up - min_rest) / self.vals
                from_lower = (row_lo - max_rest) / self.vals
            cand_upper = np.where(positive, from_upper, from_lower)
            cand_lower = np.where(positive, from_lower, from_upper)
            cand_upper = np.where(np.isnan(cand_upper), np.inf, cand_upper)
            cand_lower = np.where(np.isnan(cand_lower), -np.inf, cand_lower)

            new_upper = np.full(self.n_vars, np.inf)
            new_lower = np.full(self.n_vars, -np.inf)
            np.minimum.at(new_upper, self.cols, cand_upper)
            np.maximum.at(new_lower, self.cols, cand_lower)

            new_upper = np.where(self.integer, np.floor(new_upper + self.tol), new_upper + 1e-9)
            new_lower = np.where(self.integer, np.ceil(new_lower - self.tol), new_lower - 1e-9)

            tighter_up = new_upper < upper - 1e-7
            tighter_lo = new_lower > lower + 1e-7
            if not (np.any(tighter_up) or np.any(tighter_lo)):
                break
            upper = np.where(tighter_up, new_upper, upper)
            lower = np.where(tighter_lo, new_lower, lower)
            if np.any(lower > upper + FEASIBILITY_TOL):
                return None

        if np.any(lower > upper + FEASIBILITY_TOL):
            return None
        crossed = lower > upper
        if np.any(crossed):
            middle = 0.5 * (lower[crossed] + upper[crossed])
            lower[crossed] = middle
            upper[crossed] = middle
        return lower, upper


@dataclass(order=True)
class _Node:
    key: Tuple
    seq: int
    bound: float = field(compare=False)
    depth: int = field(compare=False)
    int_lower: np.ndarray = field(compare=False, repr=False)
    int_upper: np.ndarray = field(compare=False, repr=False)
    branch: Optional[Tuple[int, int, float]] = field(compare=False, default=None)


class _BranchAndBound:
    def __init__(self, problem: MiqpProblem, options: SolverOptions, start: float):
        self.problem = problem
        self.options = options
        self.start = start
        self.int_idx = np.flatnonzero(problem.integer)
        self.propagator = BoundPropagator(problem, options.integrality_tol)
        self.relaxation = QpRelaxation(problem, options.kkt_tol, options.max_qp_iter)
        self._local = threading.local()
        self.heap: List[_Node] = []
        self.seq = 0
        self.nodes = 0
        self.failed = 0
        self.unresolved = 0
        self.inaccurate = 0
        self.failed_bound = math.inf
        self.pruned_bound = math.inf
        self.incumbent: Optional[np.ndarray] = None
        self.incumbent_obj = math.inf
        self.reported_bound = -math.inf
        self.log: List[str] = []
        n_int = self.int_idx.size
        self.pc_sum = np.zeros((2, n_int))
        self.pc_count = np.zeros((2, n_int))

    # -- relaxations ---------------------------------------------------

    def _thread_relaxation(self) -> QpRelaxation:
        if threading.current_thread() is threading.main_thread():
            return self.relaxation
        relaxation = getattr(self._local, "relaxation", None)
        if relaxation is None:
            relaxation = QpRelaxation(self.problem, self.options.kkt_tol, self.options.max_qp_iter)
            self._local.relaxation = relaxation
        return relaxation

    def _bounds_for(self, int_lower: np.ndarray, int_upper: np.ndarray):
        lower = self.problem.var_lower.copy()
        upper = self.problem.var_upper.copy()
        lower[self.int_idx] = int_lower
        upper[self.int_idx] = int_upper
        return self.propagator.propagate(lower, upper)

    def _evaluate(self, node: _Node):
        bounds = self._bounds_for(node.int_lower, node.int_upper)
        if bounds is None:
            return None, QpSolution(status="infeasible")
        return bounds, self._thread_relaxation().solve(*bounds)

    # -- incumbents ----------------------------------------------------

    def _elapsed(self) -> float:
        return time.perf_counter() - self.start

    def _tolerance(self) -> float:
        scale = abs(self.incumbent_obj) if math.isfinite(self.incumbent_obj) else 0.0
        return max(self.options.abs_gap_tol, self.options.rel_gap_tol * scale)

    def _open_bound(self) -> float:
        return min((node.bound for node in self.heap), default=math.inf)

    def global_bound(self) -> float:
        bound = min(self._open_bound(), self.failed_bound, self.pruned_bound, self.incumbent_obj)
        self.reported_bound = max(self.reported_bound, bound) if math.isfinite(bound) else self.reported_bound
        return bound

    def _try_candidate(self, values: np.ndarray, lower: np.ndarray, upper: np.ndarray, source: str) -> bool:
        """Fix integers to the rounded ``values`` and solve the remaining QP."""
        rounded = np.round(values[self.int_idx])
        fixed_lower = lower.copy()
        fixed_upper = upper.copy()
        rounded = np.clip(rounded, lower[self.int_idx], upper[self.int_idx])
        fixed_lower[self.int_idx] = rounded
        fixed_upper[self.int_idx] = rounded
        bounds = self.propagator.propagate(fixed_lower, fixed_upper)
        if bounds is None:
            return False
        qp = self.relaxation.solve(*bounds)
        if qp.status != "optimal":
            return False
        x = qp.x.copy()
        x[self.int_idx] = rounded
        if not self._is_feasible(x):
            logger.debug("Rejected %s candidate: residual above tolerance", source)
            return False
        objective = self.problem.objective(x)
        if objective < self.incumbent_obj - 1e-12:
            self.incumbent = x
            self.incumbent_obj = objective
            self._log_incumbent(source)
            return True
        return False

    def _is_feasible(self, x: np.ndarray) -> bool:
        p = self.problem
        ax = p.A @ x
        row_tol = FEASIBILITY_TOL * np.maximum(1.0, np.abs(np.where(np.isfinite(p.row_lower), p.row_lower, 0.0)))
        ok_rows = np.all(ax >= p.row_lower - row_tol) and np.all(
            ax <= p.row_upper + FEASIBILITY_TOL * np.maximum(1.0, np.abs(np.where(np.isfinite(p.row_upper), p.row_upper, 0.0))))
        ok_bounds = np.all(x >= p.var_lower - FEASIBILITY_TOL) and np.all(x <= p.var_upper + FEASIBILITY_TOL)
        return bool(ok_rows and ok_bounds)

    def _log_incumbent(self, source: str) -> None:
        bound = self.global_bound()
        gap = self.incumbent_obj - bound if math.isfinite(bound) else math.inf
        line = f"{self._elapsed():.3f},{self.nodes},{self.incumbent_obj:.9g},{self.reported_bound:.9g},{gap:.3g}"
        self.log.append(line)
        logger.info("incumbent (%s) %s", source, line)

    # -- heuristics ----------------------------------------------------

    def _dive(self, lower: np.ndarray, upper: np.ndarray, x: np.ndarray) -> None:
        """Fix integral values and the least fractional integer until integral."""
        tol = self.options.integrality_tol
        for _ in range(min(self.int_idx.size, 100)):
            values = x[self.int_idx]
            frac = np.abs(values - np.round(values))
            if np.all(frac <= tol):
                self._try_candidate(x, lower, upper, "dive")
                return
            lower = lower.copy()
            upper = upper.copy()
            settled = self.int_idx[frac <= tol]
            lower[settled] = np.round(x[settled])
            upper[settled] = np.round(x[settled])
            open_frac = np.where(frac > tol, frac, np.inf)
            k = self.int_idx[int(np.argmin(open_frac))]
            lower[k] = upper[k] = np.clip(np.round(x[k]), lower[k], upper[k])
            bounds = self.propagator.propagate(lower, upper)
            if bounds is None:
                return
            lower, upper = bounds
            qp = self.relaxation.solve(lower, upper)
            if qp.status != "optimal" or qp.objective >= self.incumbent_obj:
                return
            x = qp.x

    def apply_hint(self, hint: Optional[WarmStartHint]) -> None:
        if hint is None or hint.values.size == 0:
            return
        layout = self.problem.layout
        if layout is None:
            if hint.values.size != self.problem.n_variables:
                raise SolverError("Warm-start hint does not match the problem size")
            values = hint.values
        else:
            if hint.vars_per_step != layout.vars_per_step or hint.mode != layout.mode:
                raise SolverError("Warm-start hint layout differs from the problem layout")
            n = layout.n_variables
            values = hint.values[:n]
            if values.size < n:
                last = hint.values[-hint.vars_per_step:]
                missing = (n - values.size) // hint.vars_per_step
                values = np.concatenate([values, np.tile(last, missing)])
        self._try_candidate(values, self.problem.var_lower, self.problem.var_upper, "hint")

    # -- branching -----------------------------------------------------

    def _select_branch(self, x: np.ndarray) -> int:
        values = x[self.int_idx]
        frac = values - np.floor(values)
        distance = np.minimum(frac, 1.0 - frac)
        fractional = distance > self.options.integrality_tol
        if self.options.branching == "pseudo-cost":
            observed = self.pc_count > 0
            default = (self.pc_sum[observed] / self.pc_count[observed]).mean() if np.any(observed) else 1.0
            unit = np.where(observed, self.pc_sum / np.maximum(self.pc_count, 1), default)
            score = np.maximum(frac * unit[0], 1e-6) * np.maximum((1.0 - frac) * unit[1], 1e-6)
        else:
            score = distance
        score = np.where(fractional, score, -np.inf)
        return int(np.argmax(score))

    def _update_pseudo_cost(self, node: _Node, objective: float) -> None:
        if node.branch is None:
            return
        position, direction, parent_obj = node.branch
        self.pc_sum[direction, position] += max(objective - parent_obj, 0.0)
        self.pc_count[direction, position] += 1

    def _push(self, bound: float, depth: int, int_lower: np.ndarray, int_upper: np.ndarray,
              branch: Optional[Tuple[int, int, float]] = None, preference: int = 0) -> None:
        self.seq += 1
        if self.options.node_selection == "depth-first":
            key = (-depth, preference, bound)
        else:
            key = (bound, -depth)
        heapq.heappush(self.heap, _Node(key, self.seq, bound, depth, int_lower, int_upper, branch))

    def _push_children(self, bound: float, depth: int, int_lower: np.ndarray, int_upper: np.ndarray,
                       position: int, split: float, parent_obj: Optional[float], prefer_up: bool) -> None:
        down_upper = int_upper.copy()
        down_upper[position] = math.floor(split)
        up_lower = int_lower.copy()
        up_lower[position] = math.floor(split) + 1
        down = None if parent_obj is None else (position, 0, parent_obj)
        up = None if parent_obj is None else (position, 1, parent_obj)
        self._push(bound, depth + 1, int_lower, down_upper, down, int(prefer_up))
        self._push(bound, depth + 1, up_lower, int_upper, up, int(not prefer_up))

    def _branch_unsolved(self, node: _Node, bounds) -> bool:
        """Split the lowest-index open integer of a node whose relaxation failed."""
        lower, upper = bounds
        int_lower = lower[self.int_idx].copy()
        int_upper = upper[self.int_idx].copy()
        open_positions = np.flatnonzero(int_upper - int_lower >= 1.0 - self.options.integrality_tol)
        if open_positions.size == 0:
            return False
        position = int(open_positions[0])
        split = 0.5 * (int_lower[position] + int_upper[position])
        self._push_children(node.bound, node.depth, int_lower, int_upper, position, split, None, False)
        return True

    # -- main loop -----------------------------------------------------

    def _process(self, node: _Node, bounds, qp: QpSolution) -> Optional[str]:
        self.nodes += 1
        if qp.status == "infeasible":
            return None
        if qp.status == "unbounded":
            return UNBOUNDED
        if qp.status == "failed":
            self.failed += 1
            if self._branch_unsolved(node, bounds):
                logger.warning("QP relaxation failed at node %d (depth %d); branching without a bound",
                               self.nodes, node.depth)
            else:
                self.unresolved += 1
                self.failed_bound = min(self.failed_bound, node.bound)
                logger.warning("QP relaxation failed at node %d (depth %d) with every integer fixed",
                               self.nodes, node.depth)
            return None

        lower, upper = bounds
        if qp.accurate:
            objective = max(qp.objective, node.bound)
            self._update_pseudo_cost(node, objective)
        else:
            # Inaccurate objectives are not bounds; the dual bound is.
            self.inaccurate += 1
            objective = max(dual_bound(self.problem, lower, upper, qp.y), node.bound)
        if objective >= self.incumbent_obj - self._tolerance():
            self.pruned_bound = min(self.pruned_bound, objective)
            return None

        x = qp.x
        values = x[self.int_idx]
        if np.all(np.abs(values - np.round(values)) <= self.options.integrality_tol):
            self._try_candidate(x, lower, upper, "node")
            if not math.isfinite(self.incumbent_obj) or objective < self.incumbent_obj - self._tolerance():
                self.pruned_bound = min(self.pruned_bound, objective)
            return None

        if self.nodes == 1 or self.nodes % self.options.heuristic_interval == 0:
            self._try_candidate(x, lower, upper, "rounding")
            self._dive(lower, upper, x)

        position = self._select_branch(x)
        value = values[position]
        prefer_up = value - math.floor(value) >= 0.5
        self._push_children(objective, node.depth, lower[self.int_idx].copy(), upper[self.int_idx].copy(),
                            position, value, objective, prefer_up)
        return None

    def run(self, hint: Optional[WarmStartHint]) -> MiqpSolution:
        opts = self.options
        root_bounds = self.propagator.propagate(self.problem.var_lower, self.problem.var_upper)
        if root_bounds is None:
            return self._finish(INFEASIBLE)
        self.apply_hint(hint)
        self._push(-math.inf, 0, root_bounds[0][self.int_idx].copy(), root_bounds[1][self.int_idx].copy())

        pool = ThreadPoolExecutor(max_workers=opts.threads) if opts.threads > 1 else None
        try:
            while self.heap:
                if self._elapsed() > opts.time_limit:
                    return self._finish(TIME_LIMIT)
                if self.nodes >= opts.node_limit:
                    return self._finish(NODE_LIMIT)
                check_gap = len(self.heap) < 1000 or self.nodes % 50 == 0
                if check_gap and math.isfinite(self.incumbent_obj):
                    if self.incumbent_obj - self.global_bound() <= self._tolerance():
                        break

                batch = []
                while self.heap and len(batch) < opts.threads:
                    node = heapq.heappop(self.heap)
                    if node.bound >= self.incumbent_obj - self._tolerance():
                        self.pruned_bound = min(self.pruned_bound, node.bound)
                    else:
                        batch.append(node)
                if not batch:
                    continue
                if pool is not None and len(batch) > 1:
                    results = list(pool.map(self._evaluate, batch))
                else:
                    results = [self._evaluate(node) for node in batch]
                for node, (bounds, qp) in zip(batch, results):
                    outcome = self._process(node, bounds, qp)
                    if outcome == UNBOUNDED:
                        return self._finish(UNBOUNDED)
        finally:
            if pool is not None:
                pool.shutdown(wait=True)
        return self._finish(None)

    def _finish(self, limit: Optional[str]) -> MiqpSolution:
        elapsed = self._elapsed()
        bound = self.global_bound()
        if self.incumbent is None:
            status = limit or (UNRESOLVED if self.unresolved else INFEASIBLE)
            if status == UNRESOLVED:
                logger.warning("No feasible point found and infeasibility not proven: %d of %d failed "
                               "relaxation(s) could not be branched", self.unresolved, self.failed)
            objective, gap = math.inf, math.inf
        else:
            objective = self.incumbent_obj
            bound = min(bound, objective)
            gap = max(objective - bound, 0.0)
            if limit is not None:
                status = limit
            elif gap <= self.options.abs_gap_tol:
                status = OPTIMAL
            else:
                status = GAP_LIMIT
        logger.info("Branch-and-bound %s after %d nodes in %.2f s (objective %.9g, gap %.3g)",
                    status, self.nodes, elapsed, objective, gap)
        return MiqpSolution(
            status=status,
            objective=objective,
            best_bound=bound if math.isfinite(bound) else -math.inf,
            gap=gap,
            values=None if self.incumbent is None else self.incumbent.copy(),
            nodes_explored=self.nodes,
            wall_time=elapsed,
            layout=self.problem.layout,
            failed_nodes=self.failed,
            inaccurate_nodes=self.inaccurate,
            log=tuple(self.log),
        )


def solve(problem: MiqpProblem, options: Optional[SolverOptions] = None,
          hint: Optional[WarmStartHint] = None) -> MiqpSolution:
    """Solve a convex MIQP by branch-and-bound.

    Args:
        problem (MiqpProblem): Problem to solve
        options (SolverOptions, optional): Tolerances, limits and strategy
        hint (WarmStartHint, optional): Previous solution used as a first incumbent

    Returns:
        MiqpSolution: Status, incumbent, bound, gap and search statistics

    Raises:
        SolverError: For an empty or non-convex problem, or a hint whose
            layout differs from the problem's
    """
    options = options or SolverOptions()
    if problem.n_variables == 0:
        raise SolverError("Problem has no variables")
    report = validate(problem)
    bad = [f["message"] for f in report["findings"] if f["check"] in ("convexity", "shape")]
    if bad:
        raise SolverError(f"Problem is not a convex MIQP: {bad[0]}")
    start = time.perf_counter()
    return _BranchAndBound(problem, options, start).run(hint)
