"""Static grid description and network matrices.

Everything here is per-unit on ``GridCase.base_power``. The network is
lossless (series reactances only); loads only enter the dynamic model as
constant shunt admittances, added by :mod:`tsvis.tds`.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

DEFAULT_FAULT_CONDUCTANCE = 1e6


class CaseError(ValueError):
    """A case file failed to parse or violates a model invariant."""


class NetworkError(ValueError):
    """A network matrix cannot be formed (islanding, bad fault spec)."""


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    reactance: float
    flow_min: float = -99.0
    flow_max: float = 99.0
    fault_rate: float = 1.0
    in_service: int = 1


@dataclass(frozen=True)
class SgParams:
    bus: int
    inertia: float  # H, seconds
    damping: float
    transient_reactance: float
    p_min: float
    p_max: float
    ramp_up: float
    ramp_down: float
    c0: float
    c1: float
    c2: float
    reserve_up_price: float
    reserve_down_price: float
    prev_output: float
    mvar_rating: float = 0.0
    v_set: float = 1.0
    name: str = ""


@dataclass(frozen=True)
class IbrParams:
    bus: int
    p_max: float
    inertia_max: float  # M_IBR^max, pu*s (2H equivalent)
    damping_max: float
    c3: float
    c4: float
    c5: float
    inertia_price: float
    damping_price: float
    reactance: float = 0.1  # coupling reactance of the VSG interface
    v_set: float = 1.0
    name: str = ""


@dataclass(frozen=True)
class EvFleetParams:
    bus: int
    reg_up_max: float
    reg_down_max: float
    reg_up_price: float
    reg_down_price: float
    name: str = ""


@dataclass(frozen=True)
class GridCase:
    name: str
    buses: tuple[int, ...]
    base_power: float
    nominal_freq: float
    lines: tuple[Line, ...]
    sgs: tuple[SgParams, ...]
    ibrs: tuple[IbrParams, ...]
    ev_fleets: tuple[EvFleetParams, ...]
    loads: dict[int, float]
    zonal_imbalance_up: float
    zonal_imbalance_down: float
    inertia_requirement: float
    damping_requirement: float
    reactive_loads: dict[int, float] = field(default_factory=dict)
    slack_bus: int | None = None
    infinite_bus: int | None = None
    fault_conductance: float = DEFAULT_FAULT_CONDUCTANCE
    min_virtual_inertia: float = 0.5  # s on the IBR rating; swing-model floor M >= 2*h*p_max
    frequency_bias: float | None = None  # pu per 0.1 Hz, negative
    tie_flow_change: float = 0.0

    def __post_init__(self):
        validate_case(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_index(self) -> dict[int, int]:
        return {b: i for i, b in enumerate(self.buses)}

    @property
    def total_demand(self) -> float:
        return float(sum(self.loads.values()))

    @property
    def line_status(self) -> np.ndarray:
        return np.array([ln.in_service for ln in self.lines], dtype=int)

    def demand_vector(self) -> np.ndarray:
        idx = self.bus_index
        d = np.zeros(self.n_bus)
        for b, p in self.loads.items():
            d[idx[b]] += p
        return d

    def reference_bus(self) -> int:
        """GSF slack: explicit ``slack_bus`` or the bus of the largest SG."""
        if self.slack_bus is not None:
            return self.slack_bus
        if self.infinite_bus is not None:
            return self.infinite_bus
        if not self.sgs:
            return self.buses[0]
        best = max(range(len(self.sgs)), key=lambda i: (self.sgs[i].p_max, -i))
        return self.sgs[best].bus


def validate_case(case: GridCase) -> None:
    buses = set(case.buses)
    if len(buses) != len(case.buses):
        raise CaseError("buses: duplicate bus ids")
    if not case.base_power > 0:
        raise CaseError(f"system.base_power must be > 0, got {case.base_power}")
    for ln in case.lines:
        tag = f"lines[id={ln.id}]"
        if ln.from_bus not in buses or ln.to_bus not in buses:
            raise CaseError(f"{tag}: endpoint not a declared bus")
        if ln.from_bus == ln.to_bus:
            raise CaseError(f"{tag}: from_bus equals to_bus")
        if not ln.reactance > 0:
            raise CaseError(f"{tag}.reactance must be > 0, got {ln.reactance}")
        if ln.flow_min > ln.flow_max:
            raise CaseError(f"{tag}: flow_min > flow_max")
        if ln.fault_rate < 0:
            raise CaseError(f"{tag}.fault_rate must be >= 0")
        if ln.in_service not in (0, 1):
            raise CaseError(f"{tag}.in_service must be 0 or 1")
    if len({ln.id for ln in case.lines}) != len(case.lines):
        raise CaseError("lines: duplicate line ids")
    for i, g in enumerate(case.sgs):
        tag = f"sgs[{i}]"
        if g.bus not in buses:
            raise CaseError(f"{tag}.bus {g.bus} is not a declared bus")
        if not g.inertia > 0:
            raise CaseError(f"{tag}.inertia must be > 0")
        if g.p_min > g.p_max:
            raise CaseError(f"{tag}: p_min > p_max")
        if g.c2 < 0:
            raise CaseError(f"{tag}.c2 must be >= 0")
        if not g.transient_reactance > 0:
            raise CaseError(f"{tag}.transient_reactance must be > 0")
    for i, r in enumerate(case.ibrs):
        tag = f"ibrs[{i}]"
        if r.bus not in buses:
            raise CaseError(f"{tag}.bus {r.bus} is not a declared bus")
        for name in ("p_max", "inertia_max", "damping_max", "c5"):
            if getattr(r, name) < 0:
                raise CaseError(f"{tag}.{name} must be >= 0")
        if not r.reactance > 0:
            raise CaseError(f"{tag}.reactance must be > 0")
    for i, ev in enumerate(case.ev_fleets):
        tag = f"evs[{i}]"
        if ev.bus not in buses:
            raise CaseError(f"{tag}.bus {ev.bus} is not a declared bus")
        for name in ("reg_up_max", "reg_down_max", "reg_up_price", "reg_down_price"):
            if getattr(ev, name) < 0:
                raise CaseError(f"{tag}.{name} must be >= 0")
    for b, p in case.loads.items():
        if b not in buses:
            raise CaseError(f"loads: bus {b} is not a declared bus")
        if p < 0:
            raise CaseError(f"loads: demand at bus {b} is negative")
    m_cap = sum(r.inertia_max for r in case.ibrs)
    d_cap = sum(r.damping_max for r in case.ibrs)
    if case.inertia_requirement > m_cap + 1e-12:
        raise CaseError(
            f"requirements.inertia {case.inertia_requirement} exceeds total IBR inertia_max {m_cap}"
        )
    if case.damping_requirement > d_cap + 1e-12:
        raise CaseError(
            f"requirements.damping {case.damping_requirement} exceeds total IBR damping_max {d_cap}"
        )
    for name in ("slack_bus", "infinite_bus"):
        b = getattr(case, name)
        if b is not None and b not in buses:
            raise CaseError(f"system.{name} {b} is not a declared bus")
    if not case.fault_conductance > 0:
        raise CaseError("system.fault_conductance must be > 0")


# ---------------------------------------------------------------- loading

def _schema() -> dict:
    text = resources.files("tsvis").joinpath("case-schema.json").read_text()
    return json.loads(text)


def bundled_case_path(name: str) -> Path:
    """Path of a bundled case (``case_smib``, ``case9ish``, ``case39``)."""
    stem = name[:-5] if name.endswith(".json") else name
    p = resources.files("tsvis").joinpath("cases").joinpath(stem + ".json")
    if not p.is_file():
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return Path(str(p))


def load_case(path) -> GridCase:
    """Parse and validate a case file.

    ``path`` may also be the bare name of a bundled case.
    """
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = bundled_case_path(str(path))
    text = p.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"{p}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return case_from_dict(doc, source=str(p))


def case_from_dict(doc: dict, source: str = "<dict>") -> GridCase:
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise CaseError(f"{source}: field {where}: {exc.message}") from exc

    system = doc["system"]
    req = doc["requirements"]
    ace = doc.get("ace", {})
    lines = tuple(
        Line(
            id=int(ln["id"]),
            from_bus=int(ln["from"]),
            to_bus=int(ln["to"]),
            reactance=float(ln["x"]),
            flow_min=float(ln.get("flow_min", -99.0)),
            flow_max=float(ln.get("flow_max", 99.0)),
            fault_rate=float(ln.get("fault_rate", 1.0)),
            in_service=int(ln.get("in_service", 1)),
        )
        for ln in doc["lines"]
    )
    sgs = tuple(
        SgParams(
            bus=int(g["bus"]),
            inertia=float(g["H"]),
            damping=float(g["damping"]),
            transient_reactance=float(g["xd_prime"]),
            p_min=float(g["p_min"]),
            p_max=float(g["p_max"]),
            ramp_up=float(g["ramp_up"]),
            ramp_down=float(g["ramp_down"]),
            c0=float(g["c0"]),
            c1=float(g["c1"]),
            c2=float(g["c2"]),
            reserve_up_price=float(g["reserve_up_price"]),
            reserve_down_price=float(g["reserve_down_price"]),
            prev_output=float(g["prev_output"]),
            mvar_rating=float(g.get("mvar_rating", 0.0)),
            v_set=float(g.get("v_set", 1.0)),
            name=str(g.get("name", f"SG{g['bus']}")),
        )
        for g in doc["sgs"]
    )
    ibrs = tuple(
        IbrParams(
            bus=int(r["bus"]),
            p_max=float(r["p_max"]),
            inertia_max=float(r["inertia_max"]),
            damping_max=float(r["damping_max"]),
            c3=float(r["c3"]),
            c4=float(r["c4"]),
            c5=float(r["c5"]),
            inertia_price=float(r["inertia_price"]),
            damping_price=float(r["damping_price"]),
            reactance=float(r.get("x", 0.1)),
            v_set=float(r.get("v_set", 1.0)),
            name=str(r.get("name", f"IBR{r['bus']}")),
        )
        for r in doc.get("ibrs", [])
    )
    evs = tuple(
        EvFleetParams(
            bus=int(e["bus"]),
            reg_up_max=float(e["reg_up_max"]),
            reg_down_max=float(e["reg_down_max"]),
            reg_up_price=float(e["reg_up_price"]),
            reg_down_price=float(e["reg_down_price"]),
            name=str(e.get("name", f"EV{e['bus']}")),
        )
        for e in doc.get("evs", [])
    )
    loads: dict[int, float] = {}
    qloads: dict[int, float] = {}
    for ld in doc["loads"]:
        b = int(ld["bus"])
        loads[b] = loads.get(b, 0.0) + float(ld["p"])
        qloads[b] = qloads.get(b, 0.0) + float(ld.get("q", 0.0))
    return GridCase(
        name=str(system.get("name", "case")),
        buses=tuple(int(b) for b in doc["buses"]),
        base_power=float(system["base_power"]),
        nominal_freq=float(system["nominal_freq"]),
        lines=lines,
        sgs=sgs,
        ibrs=ibrs,
        ev_fleets=evs,
        loads=loads,
        reactive_loads=qloads,
        zonal_imbalance_up=float(req["imbalance_up"]),
        zonal_imbalance_down=float(req["imbalance_down"]),
        inertia_requirement=float(req["inertia"]),
        damping_requirement=float(req["damping"]),
        slack_bus=system.get("slack_bus"),
        infinite_bus=system.get("infinite_bus"),
        fault_conductance=float(system.get("fault_conductance", DEFAULT_FAULT_CONDUCTANCE)),
        min_virtual_inertia=float(system.get("min_virtual_inertia", 0.5)),
        frequency_bias=float(ace["frequency_bias"]) if "frequency_bias" in ace else None,
        tie_flow_change=float(ace.get("tie_flow_change", 0.0)),
    )


# ---------------------------------------------------------------- matrices

def _stamp(Y: np.ndarray, i: int, j: int, y: complex) -> None:
    Y[i, i] += y
    Y[j, j] += y
    Y[i, j] -= y
    Y[j, i] -= y


def build_admittance(case: GridCase, line_status=None, fault=None) -> np.ndarray:
    """Bus admittance matrix of the in-service lines.

    ``fault`` is ``(line_id, x)``: the line is split at fraction ``x`` from its
    from-bus, a shunt of ``case.fault_conductance`` is attached at the split
    point, and that point is eliminated. The faulted line must be switched
    out in ``line_status`` (its segments are stamped here instead).
    """
    status = case.line_status if line_status is None else np.asarray(line_status, dtype=int)
    if status.shape != (len(case.lines),):
        raise NetworkError(f"line_status has length {status.size}, expected {len(case.lines)}")
    idx = case.bus_index
    n = case.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for k, ln in enumerate(case.lines):
        if status[k]:
            _stamp(Y, idx[ln.from_bus], idx[ln.to_bus], 1.0 / (1j * ln.reactance))
    if fault is None:
        return Y

    line_id, x = fault
    pos = {ln.id: k for k, ln in enumerate(case.lines)}
    if line_id not in pos:
        raise NetworkError(f"fault on nonexistent line {line_id}")
    if not 0.0 <= x <= 1.0:
        raise NetworkError(f"fault location {x} outside [0, 1]")
    k = pos[line_id]
    if status[k]:
        raise NetworkError(f"faulted line {line_id} must be switched out during the fault")
    ln = case.lines[k]
    f, t = idx[ln.from_bus], idx[ln.to_bus]
    g = case.fault_conductance
    if x == 0.0 or x == 1.0:
        # fault sits on a terminal bus; the whole line stays attached
        _stamp(Y, f, t, 1.0 / (1j * ln.reactance))
        Y[f if x == 0.0 else t, f if x == 0.0 else t] += g
        return Y
    # augmented node m at the fault point, then eliminate it
    Ya = np.zeros((n + 1, n + 1), dtype=complex)
    Ya[:n, :n] = Y
    _stamp(Ya, f, n, 1.0 / (1j * x * ln.reactance))
    _stamp(Ya, n, t, 1.0 / (1j * (1.0 - x) * ln.reactance))
    Ya[n, n] += g
    return kron_reduce(Ya, np.arange(n))


def kron_reduce(Y: np.ndarray, retained) -> np.ndarray:
    """Eliminate every node not in ``retained``: Y_rr - Y_rn Y_nn^-1 Y_nr."""
    Y = np.asarray(Y)
    r = np.asarray(retained, dtype=int)
    mask = np.ones(Y.shape[0], dtype=bool)
    mask[r] = False
    nidx = np.flatnonzero(mask)
    Yrr = Y[np.ix_(r, r)]
    if nidx.size == 0:
        return Yrr.copy()
    Ynn = Y[np.ix_(nidx, nidx)]
    with warnings.catch_warnings():
        # a singular block is reported below from the pivots
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu = linalg.lu_factor(Ynn, check_finite=True)
    if np.any(np.abs(np.diag(lu[0])) < 1e-12 * max(1.0, np.abs(Ynn).max())):
        raise NetworkError("interior block is singular (islanded machine-free subnetwork)")
    X = linalg.lu_solve(lu, Y[np.ix_(nidx, r)])
    return Yrr - Y[np.ix_(r, nidx)] @ X


def _dc_matrices(case: GridCase, status: np.ndarray):
    idx = case.bus_index
    live = [ln for k, ln in enumerate(case.lines) if status[k]]
    nl, nb = len(live), case.n_bus
    Cft = np.zeros((nl, nb))
    b = np.zeros(nl)
    for k, ln in enumerate(live):
        Cft[k, idx[ln.from_bus]] = 1.0
        Cft[k, idx[ln.to_bus]] = -1.0
        b[k] = 1.0 / ln.reactance
    Bf = b[:, None] * Cft
    return Cft.T @ Bf, Bf


def is_connected(case: GridCase, line_status=None) -> bool:
    status = case.line_status if line_status is None else np.asarray(line_status)
    idx = case.bus_index
    rows, cols = [], []
    for k, ln in enumerate(case.lines):
        if status[k]:
            rows.append(idx[ln.from_bus])
            cols.append(idx[ln.to_bus])
    adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(case.n_bus, case.n_bus))
    ncomp, _ = connected_components(adj, directed=False)
    return ncomp == 1


def compute_gsf(case: GridCase, line_status=None) -> np.ndarray:
    """Generation shift factors, shape (lines, buses), slack column zero.

    Out-of-service lines get an all-zero row.
    """
    status = case.line_status if line_status is None else np.asarray(line_status, dtype=int)
    if not is_connected(case, status):
        raise NetworkError("network is disconnected; GSF undefined")
    Bbus, Bf = _dc_matrices(case, status)
    slack = case.bus_index[case.reference_bus()]
    keep = np.array([i for i in range(case.n_bus) if i != slack], dtype=int)
    gsf_live = np.zeros((Bf.shape[0], case.n_bus))
    if keep.size:
        Xred = np.linalg.inv(Bbus[np.ix_(keep, keep)])
        gsf_live[:, keep] = Bf[:, keep] @ Xred
    gsf = np.zeros((len(case.lines), case.n_bus))
    gsf[np.flatnonzero(status)] = gsf_live
    return gsf


def dc_flows(case: GridCase, injections, line_status=None) -> np.ndarray:
    """Line flows of a balanced injection vector by direct DC power flow."""
    status = case.line_status if line_status is None else np.asarray(line_status, dtype=int)
    Bbus, Bf = _dc_matrices(case, status)
    slack = case.bus_index[case.reference_bus()]
    keep = [i for i in range(case.n_bus) if i != slack]
    theta = np.zeros(case.n_bus)
    p = np.asarray(injections, dtype=float)
    theta[keep] = np.linalg.solve(Bbus[np.ix_(keep, keep)], p[keep])
    flows = np.zeros(len(case.lines))
    flows[np.flatnonzero(status)] = Bf @ theta
    return flows
