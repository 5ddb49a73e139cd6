"""Operating point and reduced networks for the classical swing model.

Machines are voltage sources behind a reactance (x'd for SGs, the coupling
reactance for IBRs). Loads become constant shunt admittances at the
pre-fault voltages. The internal nodes are the only retained nodes after
Kron reduction, plus the infinite bus when the case declares one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from tsvis.grid import GridCase, NetworkError, build_admittance


class EquilibriumError(RuntimeError):
    """No pre-fault operating point matches the dispatch."""


@dataclass
class Machine:
    name: str
    kind: str  # "sg" | "ibr" | "source"
    bus: int
    reactance: float
    inertia: float  # M = 2H, pu*s
    damping: float
    p_set: float
    weight: float = 1.0  # reactive sharing among machines on one bus


@dataclass
class OperatingPoint:
    machines: list[Machine]
    emf: np.ndarray  # complex internal voltages at t=0
    bus_voltage: np.ndarray
    load_admittance: np.ndarray  # per bus
    p_mech: np.ndarray
    mismatch: float
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.machines)


def machines_for(case: GridCase, dispatch) -> list[Machine]:
    out = []
    for k, g in enumerate(case.sgs):
        out.append(Machine(g.name or f"SG{g.bus}", "sg", g.bus, g.transient_reactance,
                           2.0 * g.inertia, g.damping, float(dispatch.p_sg[k]),
                           weight=max(g.p_max, 1e-6)))
    for k, r in enumerate(case.ibrs):
        # an IBR never presents less than 2*h_floor*rating of inertia to the swing model
        m = max(float(dispatch.m_ibr[k]), 2.0 * case.min_virtual_inertia * r.p_max, 1e-3)
        out.append(Machine(r.name or f"IBR{r.bus}", "ibr", r.bus, r.reactance, m,
                           float(dispatch.d_ibr[k]), float(dispatch.p_ibr[k]),
                           weight=max(r.p_max, 1e-6)))
    if case.infinite_bus is not None:
        out.append(Machine("INF", "source", case.infinite_bus, 0.0, np.inf, 0.0, 0.0))
    return out


def _newton_pf(Ybus, p_spec, q_spec, v_set, pv, pq, slack, tol=1e-11, max_iter=30):
    n = Ybus.shape[0]
    V = np.where(np.isnan(v_set), 1.0, v_set).astype(complex)
    nonslack = np.r_[pv, pq].astype(int)
    nonslack.sort()
    pq = np.asarray(pq, int)
    for _ in range(max_iter):
        S = V * np.conj(Ybus @ V)
        dP = p_spec - S.real
        dQ = q_spec - S.imag
        F = np.r_[dP[nonslack], dQ[pq]]
        if np.abs(F).max(initial=0.0) < tol:
            return V
        Vm = np.abs(V)
        Ibus = Ybus @ V
        dS_dVa = 1j * np.diag(V) @ np.conj(np.diag(Ibus) - Ybus @ np.diag(V))
        dS_dVm = np.diag(V) @ np.conj(Ybus @ np.diag(V / Vm)) + np.conj(np.diag(Ibus)) @ np.diag(V / Vm)
        J = np.block([
            [dS_dVa.real[np.ix_(nonslack, nonslack)], dS_dVm.real[np.ix_(nonslack, pq)]],
            [dS_dVa.imag[np.ix_(pq, nonslack)], dS_dVm.imag[np.ix_(pq, pq)]],
        ])
        dx = np.linalg.solve(J, F)
        Va = np.angle(V)
        Va[nonslack] += dx[: nonslack.size]
        Vm[pq] += dx[nonslack.size:]
        V = Vm * np.exp(1j * Va)
    raise EquilibriumError("pre-fault power flow did not converge")


def operating_point(case: GridCase, dispatch, load_scale: float = 1.0) -> OperatingPoint:
    """Pre-fault equilibrium consistent with the dispatch and the scaled load.

    Scheduled outputs are rescaled pro rata so that generation meets the
    physical load ``load_scale * case.loads``.
    """
    machines = machines_for(case, dispatch)
    idx = case.bus_index
    nb = case.n_bus
    load_p = case.demand_vector() * load_scale
    load_q = np.zeros(nb)
    for b, q in case.reactive_loads.items():
        load_q[idx[b]] += q * load_scale

    gen = [m for m in machines if m.kind != "source"]
    sched = np.array([m.p_set for m in gen])
    if case.infinite_bus is None:
        if sched.sum() <= 0:
            raise EquilibriumError("dispatch schedules no generation")
        scale = load_p.sum() / sched.sum()
    else:
        scale = load_scale
    for m in gen:
        m.p_set *= scale

    p_spec = -load_p.copy()
    q_spec = -load_q.copy()
    v_set = np.full(nb, np.nan)
    for m in machines:
        i = idx[m.bus]
        if m.kind != "source":
            p_spec[i] += m.p_set
        if np.isnan(v_set[i]):
            v_set[i] = _vset(case, m)
    if case.infinite_bus is not None:
        slack = idx[case.infinite_bus]
    else:
        ref = case.reference_bus()
        slack = idx[ref] if not np.isnan(v_set[idx[ref]]) else idx[gen[0].bus]
    pv = [i for i in range(nb) if not np.isnan(v_set[i]) and i != slack]
    pq = [i for i in range(nb) if np.isnan(v_set[i])]
    Ybus = build_admittance(case)
    V = _newton_pf(Ybus, p_spec, q_spec, v_set, pv, pq, slack)
    S = V * np.conj(Ybus @ V)
    q_bus = S.imag + load_q  # reactive output of the machines at each bus

    # slack P must come out at its set point: the lossless network balances exactly
    p_bus_gen = S.real + load_p
    slack_mech = sum(m.p_set for m in gen if idx[m.bus] == slack)
    mismatch = 0.0 if case.infinite_bus is not None else abs(p_bus_gen[slack] - slack_mech)
    if mismatch > 1e-6:
        raise EquilibriumError(f"initial power mismatch {mismatch:.3e} pu at the slack bus")

    emf = np.zeros(len(machines), dtype=complex)
    for k, m in enumerate(machines):
        i = idx[m.bus]
        if m.kind == "source":
            emf[k] = V[i]
            continue
        peers = [x for x in machines if x.bus == m.bus and x.kind != "source"]
        wsum = sum(x.weight for x in peers)
        q_share = q_bus[i] * m.weight / wsum
        current = np.conj((m.p_set + 1j * q_share) / V[i])
        emf[k] = V[i] + 1j * m.reactance * current

    yl = (load_p - 1j * load_q) / np.abs(V) ** 2
    p_mech = np.array([m.p_set if m.kind != "source" else 0.0 for m in machines])
    return OperatingPoint(machines, emf, V, yl, p_mech, mismatch)


def _vset(case: GridCase, m: Machine) -> float:
    if m.kind == "source":
        return 1.0
    for g in case.sgs:
        if g.bus == m.bus:
            return g.v_set
    for r in case.ibrs:
        if r.bus == m.bus:
            return r.v_set
    return 1.0


@dataclass
class ReducedNetwork:
    Y: np.ndarray  # among retained machine nodes
    recover: np.ndarray  # bus voltages = recover @ retained EMFs
    retained: np.ndarray  # machine indices


def reduced_network(case: GridCase, op: OperatingPoint, line_status, fault, alive) -> ReducedNetwork:
    """Kron-reduced admittance seen by the alive machines, cached per topology."""
    key = (tuple(int(s) for s in line_status), fault, tuple(bool(a) for a in alive))
    hit = op._cache.get(key)
    if hit is not None:
        return hit
    nb = case.n_bus
    idx = case.bus_index
    Ybus = build_admittance(case, line_status, fault) + np.diag(op.load_admittance)
    retained = np.array([k for k, m in enumerate(op.machines) if alive[k]], dtype=int)
    src = [k for k in retained if op.machines[k].kind == "source"]
    gen = [k for k in retained if op.machines[k].kind != "source"]
    # node order: gen internal nodes, then buses; the source is a bus node itself
    ng = len(gen)
    Ya = np.zeros((ng + nb, ng + nb), dtype=complex)
    Ya[ng:, ng:] = Ybus
    for a, k in enumerate(gen):
        m = op.machines[k]
        y = 1.0 / (1j * m.reactance)
        b = ng + idx[m.bus]
        Ya[a, a] += y
        Ya[b, b] += y
        Ya[a, b] -= y
        Ya[b, a] -= y
    keep_nodes = list(range(ng)) + [ng + idx[op.machines[k].bus] for k in src]
    order = gen + src
    mask = np.ones(ng + nb, dtype=bool)
    mask[keep_nodes] = False
    elim = np.flatnonzero(mask)
    Yrr = Ya[np.ix_(keep_nodes, keep_nodes)]
    Yrn = Ya[np.ix_(keep_nodes, elim)]
    Ynn = Ya[np.ix_(elim, elim)]
    Ynr = Ya[np.ix_(elim, keep_nodes)]
    try:
        X = linalg.solve(Ynn, Ynr)
    except linalg.LinAlgError as exc:
        raise NetworkError("network interior is singular") from exc
    Yred = Yrr - Yrn @ X
    # bus voltages: eliminated nodes are buses (except the source bus, which is retained)
    rec = np.zeros((nb, len(keep_nodes)), dtype=complex)
    for row, node in enumerate(elim):
        rec[node - ng] = -X[row]
    for col, k in enumerate(src):
        rec[idx[op.machines[k].bus], ng + col] = 1.0
    # reorder to machine index order
    perm = np.argsort(np.array(order))
    net = ReducedNetwork(Y=Yred[np.ix_(perm, perm)], recover=rec[:, perm],
                         retained=np.array(order)[perm])
    op._cache[key] = net
    return net
