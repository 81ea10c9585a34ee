"""LP/MILP solving on top of the embedded simplex: best-bound branch and bound.

Branching fixes one binary at a time (most-fractional, ties to the lowest
variable index); nodes are explored best-bound-first with FIFO tie-breaking,
and every node LP is warm-started from its parent's basis. Identical models
and parameters therefore produce identical incumbents.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .milp import MilpModel, VarRef
from .simplex import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    LpResult,
    NumericalBreakdown,
    WarmBasis,
    solve_lp_arrays,
)

DEFAULT_GAP = 1e-4
DEFAULT_NODE_LIMIT = 10 ** 6
INT_TOL = 1e-6

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_GAP_LIMIT = "gap_limit"
STATUS_ITERATION_LIMIT = "iteration_limit"


@dataclass
class Solution:
    """Solved model: investment decisions, dispatch, objective, solve stats.

    ``status`` meanings: ``optimal`` proves the exact optimum (tree exhausted);
    ``gap_limit`` stops once the proven gap falls under a nonzero target with
    nodes still open; ``iteration_limit`` means the node budget ran out.
    """

    status: str
    objective: float
    values: dict[VarRef, float] = field(default_factory=dict)
    mip_gap: float = 0.0
    node_count: int = 0
    wall_time: float = 0.0
    cost_breakdown: dict[str, float] = field(default_factory=dict)
    resolved: bool = True  # cleared by the expansion loop on residual slack

    def value(self, ref: VarRef) -> float:
        return self.values.get(ref, 0.0)

    def family_values(self, family: str) -> dict[tuple, float]:
        return {ref.indices: v for ref, v in self.values.items() if ref.family == family}

    def family_total(self, family: str) -> float:
        return sum(v for ref, v in self.values.items() if ref.family == family)


class _Compiled:
    def __init__(self, model: MilpModel):
        self.model = model
        self.A, self.senses, self.b = model.constraint_arrays()
        self.c = model.objective_vector()
        self.lo, self.hi = model.bounds_arrays()
        self.binaries = model.binary_indices()

    def lp(self, lo: np.ndarray, hi: np.ndarray, warm: WarmBasis | None) -> LpResult:
        return solve_lp_arrays(self.A, self.senses, self.b, self.c, lo, hi, warm=warm)


def _package(model: MilpModel, status: str, objective: float, x: np.ndarray | None,
             *, mip_gap: float = 0.0, nodes: int = 0, wall: float = 0.0) -> Solution:
    values: dict[VarRef, float] = {}
    breakdown: dict[str, float] = {}
    if x is not None:
        values = {ref: float(x[ref.idx]) for ref in model.variables}
        breakdown = {group: model.group_cost(x, group) for group in model.objective_groups}
    return Solution(status=status, objective=objective, values=values,
                    mip_gap=mip_gap, node_count=nodes, wall_time=wall,
                    cost_breakdown=breakdown)


def solve_lp(model: MilpModel, *, warm: WarmBasis | None = None) -> Solution:
    """Solve the model with integrality relaxed."""
    t0 = time.perf_counter()
    comp = _Compiled(model)
    res = comp.lp(comp.lo, comp.hi, warm)
    wall = time.perf_counter() - t0
    if res.status == OPTIMAL:
        return _package(model, STATUS_OPTIMAL, res.objective, res.x, wall=wall)
    if res.status == INFEASIBLE:
        return _package(model, STATUS_INFEASIBLE, float("inf"), None, wall=wall)
    raise NumericalBreakdown(f"LP relaxation is {res.status}; planning models "
                             "must be bounded")


def _fractional_binary(x: np.ndarray, binaries: np.ndarray) -> int | None:
    if len(binaries) == 0:
        return None
    vals = x[binaries]
    dist = np.abs(vals - np.round(vals))
    worst = int(np.argmax(dist))
    if dist[worst] <= INT_TOL:
        return None
    # most fractional wins; np.argmax takes the lowest index among exact ties
    return int(binaries[worst])


def solve_milp(model: MilpModel, *, gap: float = DEFAULT_GAP,
               node_limit: int = DEFAULT_NODE_LIMIT) -> Solution:
    """Best-bound branch and bound over the model's binary variables."""
    if gap < 0:
        raise ValueError("gap must be >= 0")
    t0 = time.perf_counter()
    comp = _Compiled(model)

    root = comp.lp(comp.lo, comp.hi, None)
    nodes = 1
    if root.status == INFEASIBLE:
        return _package(model, STATUS_INFEASIBLE, float("inf"), None,
                        nodes=nodes, wall=time.perf_counter() - t0)
    if root.status == UNBOUNDED:
        raise NumericalBreakdown("LP relaxation unbounded; planning models must be bounded")

    incumbent_obj = float("inf")
    incumbent_x: np.ndarray | None = None
    seq = 0
    # heap entries: (parent LP bound, insertion seq, fixings, warm basis)
    heap: list[tuple[float, int, tuple[tuple[int, float], ...], WarmBasis | None]] = []

    def push(bound: float, fixings: tuple[tuple[int, float], ...],
             warm: WarmBasis | None) -> None:
        nonlocal seq
        heapq.heappush(heap, (bound, seq, fixings, warm))
        seq += 1

    def prune_tol() -> float:
        scale = abs(incumbent_obj) if np.isfinite(incumbent_obj) else 1.0
        return 1e-9 * max(1.0, scale)

    def gap_against(lower: float) -> float:
        if not np.isfinite(incumbent_obj):
            return float("inf")
        lower = min(lower, incumbent_obj)
        return max(0.0, incumbent_obj - lower) / max(abs(incumbent_obj), 1e-9)

    def handle(res: LpResult, fixings: tuple[tuple[int, float], ...]) -> None:
        nonlocal incumbent_obj, incumbent_x
        branch_var = _fractional_binary(res.x, comp.binaries)
        if branch_var is None:
            if res.objective < incumbent_obj - prune_tol():
                incumbent_obj = res.objective
                incumbent_x = res.x.copy()
            return
        for value in (0.0, 1.0):
            push(res.objective, fixings + ((branch_var, value),), res.basis)

    handle(root, ())
    status = STATUS_OPTIMAL
    final_gap = 0.0
    while heap:
        bound, _, fixings, warm = heapq.heappop(heap)  # global best bound
        if bound >= incumbent_obj - prune_tol():
            heap.clear()  # best-first: every remaining bound is at least this one
            break
        if gap > 0 and gap_against(bound) <= gap:
            status = STATUS_GAP_LIMIT
            final_gap = gap_against(bound)
            break
        if nodes >= node_limit:
            status = STATUS_ITERATION_LIMIT
            final_gap = gap_against(bound)
            break
        lo = comp.lo.copy()
        hi = comp.hi.copy()
        for idx, value in fixings:
            lo[idx] = hi[idx] = value
        res = comp.lp(lo, hi, warm)
        nodes += 1
        if res.status == INFEASIBLE:
            continue
        if res.objective >= incumbent_obj - prune_tol():
            continue
        handle(res, fixings)

    wall = time.perf_counter() - t0
    if incumbent_x is None:
        # exhausted tree with no integral point proves infeasibility; otherwise
        # a limit cut the search before the first incumbent
        empty_status = STATUS_INFEASIBLE if status == STATUS_OPTIMAL else STATUS_ITERATION_LIMIT
        return _package(model, empty_status, float("inf"), None,
                        nodes=nodes, wall=wall)
    return _package(model, status, incumbent_obj, incumbent_x,
                    mip_gap=final_gap, nodes=nodes, wall=wall)
