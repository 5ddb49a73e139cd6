"""Virtual inertia scheduling (VIS) as a convex QP.

Decision variables, in this order:

* per SG:        P_g, R_g^U, R_g^D
* per IBR:       P_IBR, M_IBR, D_IBR
* per EV fleet:  P_EV^U, P_EV^D

The cost is separable and the only curvature sits on P_g and P_IBR, so the
problem is a QP with diagonal Hessian; the remaining variables are linear
and ties between equally priced units go to the minimum-norm schedule.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from tsvis import qp as _qp
from tsvis.grid import GridCase, compute_gsf

FEAS_TOL = 1e-6


class DispatchInfeasible(ValueError):
    """The VIS problem has no feasible schedule."""


@dataclass(frozen=True)
class DispatchInput:
    demand: float
    imbalance_up: float
    imbalance_down: float
    inertia_requirement: float
    damping_requirement: float
    prev_outputs: tuple[float, ...]

    def __post_init__(self):
        if self.demand < 0:
            raise ValueError("demand must be >= 0")

    @classmethod
    def from_case(cls, case: GridCase, demand: float | None = None) -> "DispatchInput":
        return cls(
            demand=case.total_demand if demand is None else float(demand),
            imbalance_up=case.zonal_imbalance_up,
            imbalance_down=case.zonal_imbalance_down,
            inertia_requirement=case.inertia_requirement,
            damping_requirement=case.damping_requirement,
            prev_outputs=tuple(g.prev_output for g in case.sgs),
        )

    def with_demand(self, demand: float) -> "DispatchInput":
        return dataclasses.replace(self, demand=float(demand))

    def scaled_to(self, demand: float) -> "DispatchInput":
        """Same input at another demand, with imbalances and frequency-support
        requirements kept proportional to demand."""
        if self.demand <= 0:
            raise ValueError("cannot scale requirements from zero demand")
        f = float(demand) / self.demand
        return dataclasses.replace(
            self, demand=float(demand),
            imbalance_up=self.imbalance_up * f, imbalance_down=self.imbalance_down * f,
            inertia_requirement=self.inertia_requirement * f,
            damping_requirement=self.damping_requirement * f,
        )


@dataclass
class QpProblem:
    """Assembled VIS problem; see the module docstring for the variable order."""

    index: dict[str, np.ndarray]
    curvature: np.ndarray  # diagonal of the Hessian, cost = 0.5 x'Qx + c'x + const
    linear: np.ndarray
    constant: float
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    eq_labels: list[str] = field(default_factory=list)
    in_labels: list[str] = field(default_factory=list)

    @property
    def n_var(self) -> int:
        return self.curvature.size

    def cost(self, x) -> float:
        x = np.asarray(x, float)
        return float(0.5 * self.curvature @ (x * x) + self.linear @ x + self.constant)


@dataclass
class DispatchSolution:
    p_sg: np.ndarray
    r_up: np.ndarray
    r_down: np.ndarray
    p_ibr: np.ndarray
    m_ibr: np.ndarray
    d_ibr: np.ndarray
    ev_up: np.ndarray
    ev_down: np.ndarray
    total_cost: float
    kkt_residual: float = 0.0
    demand: float = float("nan")

    def to_vector(self) -> np.ndarray:
        n_sg, n_ibr, n_ev = self.p_sg.size, self.p_ibr.size, self.ev_up.size
        x = np.zeros(3 * n_sg + 3 * n_ibr + 2 * n_ev)
        x[0:3 * n_sg:3], x[1:3 * n_sg:3], x[2:3 * n_sg:3] = self.p_sg, self.r_up, self.r_down
        o = 3 * n_sg
        x[o:o + 3 * n_ibr:3], x[o + 1:o + 3 * n_ibr:3], x[o + 2:o + 3 * n_ibr:3] = (
            self.p_ibr, self.m_ibr, self.d_ibr)
        o += 3 * n_ibr
        x[o::2], x[o + 1::2] = self.ev_up, self.ev_down
        return x

    @classmethod
    def from_vector(cls, case: GridCase, x, total_cost=float("nan"), kkt_residual=0.0,
                    demand=float("nan")) -> "DispatchSolution":
        x = np.asarray(x, float)
        n_sg, n_ibr = len(case.sgs), len(case.ibrs)
        o = 3 * n_sg
        p = 3 * n_ibr
        return cls(
            p_sg=x[0:o:3].copy(), r_up=x[1:o:3].copy(), r_down=x[2:o:3].copy(),
            p_ibr=x[o:o + p:3].copy(), m_ibr=x[o + 1:o + p:3].copy(), d_ibr=x[o + 2:o + p:3].copy(),
            ev_up=x[o + p::2].copy(), ev_down=x[o + p + 1::2].copy(),
            total_cost=float(total_cost), kkt_residual=float(kkt_residual), demand=float(demand),
        )

    def to_dict(self) -> dict:
        out = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
               for k, v in dataclasses.asdict(self).items()}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DispatchSolution":
        kw = {k: (np.asarray(v, float) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**kw)


def bus_demand(case: GridCase, demand: float) -> np.ndarray:
    """Per-bus demand scaled pro rata so it sums to ``demand``."""
    d = case.demand_vector()
    tot = d.sum()
    if tot <= 0:
        return d
    return d * (demand / tot)


def build_vis_problem(case: GridCase, inp: DispatchInput) -> QpProblem:
    n_sg, n_ibr, n_ev = len(case.sgs), len(case.ibrs), len(case.ev_fleets)
    n = 3 * n_sg + 3 * n_ibr + 2 * n_ev
    if len(inp.prev_outputs) != n_sg:
        raise ValueError("prev_outputs length does not match the number of SGs")
    cap = sum(g.p_max for g in case.sgs) + sum(r.p_max for r in case.ibrs)
    if cap < inp.demand - FEAS_TOL:
        raise DispatchInfeasible(
            f"total capacity {cap:.6g} pu is below demand {inp.demand:.6g} pu")
    if inp.inertia_requirement > sum(r.inertia_max for r in case.ibrs) + FEAS_TOL:
        raise DispatchInfeasible("inertia requirement exceeds total IBR inertia_max")
    if inp.damping_requirement > sum(r.damping_max for r in case.ibrs) + FEAS_TOL:
        raise DispatchInfeasible("damping requirement exceeds total IBR damping_max")

    i_pg = np.arange(n_sg) * 3
    i_ru, i_rd = i_pg + 1, i_pg + 2
    o = 3 * n_sg
    i_pi = o + np.arange(n_ibr) * 3
    i_m, i_d = i_pi + 1, i_pi + 2
    o += 3 * n_ibr
    i_eu = o + np.arange(n_ev) * 2
    i_ed = i_eu + 1

    q = np.zeros(n)
    c = np.zeros(n)
    for k, g in enumerate(case.sgs):
        q[i_pg[k]] = 2.0 * g.c2
        c[i_pg[k]] = g.c1
        c[i_ru[k]] = g.reserve_up_price
        c[i_rd[k]] = g.reserve_down_price
    for k, r in enumerate(case.ibrs):
        q[i_pi[k]] = 2.0 * r.c5
        c[i_pi[k]] = r.c4
        c[i_m[k]] = r.inertia_price
        c[i_d[k]] = r.damping_price
    for k, e in enumerate(case.ev_fleets):
        c[i_eu[k]] = e.reg_up_price
        c[i_ed[k]] = e.reg_down_price
    const = sum(g.c0 for g in case.sgs) + sum(r.c3 for r in case.ibrs)

    A_eq = np.zeros((5, n))
    A_eq[0, i_ru] = 1.0
    A_eq[0, i_eu] = 1.0
    A_eq[1, i_rd] = 1.0
    A_eq[1, i_ed] = 1.0
    A_eq[2, i_pg] = 1.0
    A_eq[2, i_pi] = 1.0
    A_eq[3, i_m] = 1.0
    A_eq[4, i_d] = 1.0
    b_eq = np.array([inp.imbalance_up, inp.imbalance_down, inp.demand,
                     inp.inertia_requirement, inp.damping_requirement])
    eq_labels = ["reg_up", "reg_down", "power_balance", "inertia", "damping"]

    rows, rhs, labels = [], [], []

    def add(row, b, label):
        rows.append(row)
        rhs.append(b)
        labels.append(label)

    for k, g in enumerate(case.sgs):
        r = np.zeros(n); r[i_pg[k]] = 1; r[i_ru[k]] = 1
        add(r, g.p_max, f"capacity[{k}]")
        r = np.zeros(n); r[i_pg[k]] = -1; r[i_rd[k]] = 1
        add(r, -g.p_min, f"min_output[{k}]")
        r = np.zeros(n); r[i_pg[k]] = 1
        add(r, inp.prev_outputs[k] + g.ramp_up, f"ramp_up[{k}]")
        r = np.zeros(n); r[i_pg[k]] = -1
        add(r, -(inp.prev_outputs[k] - g.ramp_down), f"ramp_down[{k}]")

    if case.lines:
        gsf = compute_gsf(case)
        idx = case.bus_index
        inj = np.zeros((case.n_bus, n))  # bus injection as a linear map of x
        for k, g in enumerate(case.sgs):
            inj[idx[g.bus], i_pg[k]] += 1.0
        for k, r in enumerate(case.ibrs):
            inj[idx[r.bus], i_pi[k]] += 1.0
        flow_map = gsf @ inj
        flow_const = gsf @ bus_demand(case, inp.demand)
        for k, ln in enumerate(case.lines):
            add(flow_map[k], ln.flow_max + flow_const[k], f"flow_max[line {ln.id}]")
            add(-flow_map[k], -(ln.flow_min + flow_const[k]), f"flow_min[line {ln.id}]")

    for k, e in enumerate(case.ev_fleets):
        r = np.zeros(n); r[i_eu[k]] = 1
        add(r, e.reg_up_max, f"ev_up[{k}]")
        r = np.zeros(n); r[i_ed[k]] = 1
        add(r, e.reg_down_max, f"ev_down[{k}]")
    for k, rr in enumerate(case.ibrs):
        r = np.zeros(n); r[i_m[k]] = 1
        add(r, rr.inertia_max, f"inertia_max[{k}]")
        r = np.zeros(n); r[i_d[k]] = 1
        add(r, rr.damping_max, f"damping_max[{k}]")

    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    for k, r in enumerate(case.ibrs):
        ub[i_pi[k]] = r.p_max

    A_in = np.array(rows).reshape(-1, n)
    return QpProblem(
        index={"p_sg": i_pg, "r_up": i_ru, "r_down": i_rd, "p_ibr": i_pi, "m_ibr": i_m,
               "d_ibr": i_d, "ev_up": i_eu, "ev_down": i_ed},
        curvature=q, linear=c, constant=float(const),
        A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=np.array(rhs, float),
        lb=lb, ub=ub, eq_labels=eq_labels, in_labels=labels,
    )


def solve_qp(problem: QpProblem, case: GridCase, tol: float = 1e-8, demand=float("nan")) -> DispatchSolution:
    try:
        res = _qp.solve_qp(problem.curvature, problem.linear, problem.A_eq, problem.b_eq,
                           problem.A_in, problem.b_in, problem.lb, problem.ub, tol=tol)
    except _qp.QpInfeasible as exc:
        raise DispatchInfeasible(f"no schedule satisfies the VIS constraints ({exc})") from exc
    x = res.x
    return DispatchSolution.from_vector(case, x, total_cost=problem.cost(x),
                                        kkt_residual=res.kkt_residual, demand=demand)


def solve_vis(case: GridCase, inp: DispatchInput | None = None, tol: float = 1e-8) -> DispatchSolution:
    """Build and solve the VIS problem in one call."""
    inp = DispatchInput.from_case(case) if inp is None else inp
    return solve_qp(build_vis_problem(case, inp), case, tol=tol, demand=inp.demand)


def evaluate_cost(sol: DispatchSolution, case: GridCase) -> float:
    """Total cost recomputed term by term from the unit cost functions."""
    cost_sg = sum(
        g.c2 * p ** 2 + g.c1 * p + g.c0 + g.reserve_up_price * ru + g.reserve_down_price * rd
        for g, p, ru, rd in zip(case.sgs, sol.p_sg, sol.r_up, sol.r_down)
    )
    cost_ibr = sum(
        r.c5 * p ** 2 + r.c4 * p + r.c3 + r.inertia_price * m + r.damping_price * d
        for r, p, m, d in zip(case.ibrs, sol.p_ibr, sol.m_ibr, sol.d_ibr)
    )
    cost_ev = sum(e.reg_up_price * u + e.reg_down_price * d
                  for e, u, d in zip(case.ev_fleets, sol.ev_up, sol.ev_down))
    return float(cost_sg + cost_ibr + cost_ev)


@dataclass
class Violation:
    constraint: str
    amount: float


def check_feasibility(sol: DispatchSolution, inp: DispatchInput, case: GridCase,
                      tol: float = FEAS_TOL) -> list[Violation]:
    """Every violated VIS constraint with the size of its violation."""
    out: list[Violation] = []

    def eq(label, lhs, rhs):
        if abs(lhs - rhs) > tol:
            out.append(Violation(label, float(lhs - rhs)))

    def le(label, lhs, rhs):
        if lhs - rhs > tol:
            out.append(Violation(label, float(lhs - rhs)))

    eq("reg_up", sol.r_up.sum() + sol.ev_up.sum(), inp.imbalance_up)
    eq("reg_down", sol.r_down.sum() + sol.ev_down.sum(), inp.imbalance_down)
    eq("power_balance", sol.p_sg.sum() + sol.p_ibr.sum(), inp.demand)
    eq("inertia", sol.m_ibr.sum(), inp.inertia_requirement)
    eq("damping", sol.d_ibr.sum(), inp.damping_requirement)
    for k, g in enumerate(case.sgs):
        le(f"capacity[{k}]", sol.p_sg[k] + sol.r_up[k], g.p_max)
        le(f"min_output[{k}]", g.p_min, sol.p_sg[k] - sol.r_down[k])
        le(f"ramp_up[{k}]", sol.p_sg[k] - inp.prev_outputs[k], g.ramp_up)
        le(f"ramp_down[{k}]", inp.prev_outputs[k] - sol.p_sg[k], g.ramp_down)
    if case.lines:
        idx = case.bus_index
        inj = -bus_demand(case, inp.demand)
        for g, p in zip(case.sgs, sol.p_sg):
            inj[idx[g.bus]] += p
        for r, p in zip(case.ibrs, sol.p_ibr):
            inj[idx[r.bus]] += p
        flows = compute_gsf(case) @ inj
        for ln, f in zip(case.lines, flows):
            le(f"flow_max[line {ln.id}]", f, ln.flow_max)
            le(f"flow_min[line {ln.id}]", ln.flow_min, f)
    for k, e in enumerate(case.ev_fleets):
        le(f"ev_up[{k}]", sol.ev_up[k], e.reg_up_max)
        le(f"ev_down[{k}]", sol.ev_down[k], e.reg_down_max)
    for k, r in enumerate(case.ibrs):
        le(f"inertia_max[{k}]", sol.m_ibr[k], r.inertia_max)
        le(f"damping_max[{k}]", sol.d_ibr[k], r.damping_max)
        le(f"ibr_p_max[{k}]", sol.p_ibr[k], r.p_max)
    for name in ("p_sg", "r_up", "r_down", "p_ibr", "m_ibr", "d_ibr", "ev_up", "ev_down"):
        v = getattr(sol, name)
        for k in np.flatnonzero(v < -tol):
            out.append(Violation(f"nonneg_{name}[{k}]", float(v[k])))
    return out
