"""Interrupted-load estimate from the area control error and the IGDT robust dispatch.

The uncertain demand lives in the fractional-deviation set
{P : |P - P_hat| <= sigma * P_hat}. Because optimal dispatch cost is
nondecreasing in demand, the worst case over that set is its upper end,
and the robustness function

    sigma* = max{ sigma : cost((1 + sigma) P_hat) <= (1 + theta) C_c }

is found by bisection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from tsvis.dispatch import DispatchInfeasible, DispatchInput, DispatchSolution, solve_vis
from tsvis.grid import GridCase

log = logging.getLogger(__name__)


class BudgetBelowNominal(ValueError):
    """The budget does not even cover the point forecast."""

    def __init__(self, cost: float, budget: float):
        self.deficit = cost - budget
        super().__init__(f"budget below nominal cost: cost {cost:.6g} exceeds budget {budget:.6g} "
                         f"by {self.deficit:.6g}")


@dataclass(frozen=True)
class AceInput:
    tie_flow_change: float
    frequency_bias: float  # pu per 0.1 Hz, negative
    frequency_deviation: float  # Hz

    def __post_init__(self):
        if not self.frequency_bias < 0:
            raise ValueError("frequency bias B must be negative")


def compute_ace(inp: AceInput) -> float:
    return inp.tie_flow_change - 10.0 * inp.frequency_bias * inp.frequency_deviation


def estimate_interrupted_load(demand: float, ace: float) -> float:
    p_hat = demand + ace
    if not p_hat > 0:
        raise ValueError(f"estimated load {p_hat:.6g} pu is not positive (ACE {ace:.6g} pu)")
    return p_hat


def worst_case_demand(p_hat: float, sigma: float) -> float:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return (1.0 + sigma) * p_hat


@dataclass(frozen=True)
class RobustInput:
    predicted_load: float
    collapse_probability: float
    critical_cost: float
    sigma_cap: float = 2.0

    def __post_init__(self):
        if not self.predicted_load > 0:
            raise ValueError("predicted load must be > 0")
        if not self.critical_cost > 0:
            raise ValueError("critical cost must be > 0")
        if not 0.0 <= self.collapse_probability <= 1.0:
            raise ValueError("collapse probability must lie in [0, 1]")
        if not self.sigma_cap > 0:
            raise ValueError("sigma_cap must be > 0")

    @property
    def budget(self) -> float:
        return (1.0 + self.collapse_probability) * self.critical_cost


@dataclass
class RobustnessResult:
    sigma_star: float
    robust_dispatch: DispatchSolution
    worst_case_cost: float
    budget: float
    binding: bool
    feasibility_capped: bool = False
    trace: list[tuple[float, float, bool]] = field(default_factory=list)  # (sigma, cost, feasible)

    def to_dict(self) -> dict:
        return {
            "sigma_star": self.sigma_star, "worst_case_cost": self.worst_case_cost,
            "budget": self.budget, "binding": self.binding,
            "feasibility_capped": self.feasibility_capped,
            "worst_case_demand": self.robust_dispatch.demand,
            "trace": [{"sigma": s, "cost": c, "feasible": f} for s, c, f in self.trace],
            "dispatch": self.robust_dispatch.to_dict(),
        }


def _default_cost_fn(case: GridCase, base: DispatchInput | None, tol: float):
    base = DispatchInput.from_case(case) if base is None else base

    def solve(demand: float) -> DispatchSolution:
        return solve_vis(case, base.scaled_to(demand), tol=tol)

    return solve


def solve_robust_vis(case: GridCase, inp: RobustInput, tol_sigma: float = 1e-5,
                     base: DispatchInput | None = None, solver=None, tol: float = 1e-8) -> RobustnessResult:
    """Largest sigma whose worst-case dispatch cost stays within (1+theta) C_c.

    ``solver(demand) -> DispatchSolution`` may replace the default VIS solve,
    which rescales the case requirements in proportion to the trial demand.
    """
    solve = solver if solver is not None else _default_cost_fn(case, base, tol)
    budget = inp.budget
    trace: list[tuple[float, float, bool]] = []

    def trial(sigma: float):
        try:
            sol = solve(worst_case_demand(inp.predicted_load, sigma))
        except DispatchInfeasible:
            trace.append((sigma, float("nan"), False))
            return None
        trace.append((sigma, sol.total_cost, True))
        return sol

    best = trial(0.0)
    if best is None:
        raise DispatchInfeasible("dispatch at the predicted load is infeasible")
    if best.total_cost > budget * (1.0 + 1e-12):
        raise BudgetBelowNominal(best.total_cost, budget)

    lo, hi = 0.0, inp.sigma_cap
    top = trial(hi)
    capped = top is None
    if top is not None and top.total_cost <= budget:
        lo, best = hi, top
    else:
        while hi - lo > tol_sigma:
            mid = 0.5 * (lo + hi)
            sol = trial(mid)
            if sol is None:
                capped = True
                hi = mid
            elif sol.total_cost <= budget:
                lo, best = mid, sol
            else:
                hi = mid
    binding = abs(best.total_cost - budget) <= 1e-3 * budget
    if capped and not binding:
        log.info("sigma* limited by dispatch feasibility at %.6g", lo)
    return RobustnessResult(sigma_star=lo, robust_dispatch=best, worst_case_cost=best.total_cost,
                            budget=budget, binding=binding, feasibility_capped=capped and not binding,
                            trace=trace)
