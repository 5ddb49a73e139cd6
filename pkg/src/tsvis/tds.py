"""Time-domain simulation of classical swing dynamics.

Each swing unit obeys

    d(delta)/dt = w_s (w - 1)
    M dw/dt     = P_m - P_e - D (w - 1)

with M = 2H for synchronous generators and the dispatched virtual inertia
for grid-forming IBRs. Electrical power comes from the Kron-reduced network
of the current topology (pre-fault, faulted, post-trip). Integration is
fixed-step RK4; every sample and every switching instant is a step boundary.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from tsvis.grid import GridCase
from tsvis.network import EquilibriumError, OperatingPoint, operating_point, reduced_network

log = logging.getLogger(__name__)

SWEEP_TAU = (0.06, 0.4)
SWEEP_X = (0.0, 1.0)
SWEEP_K = (1.0, 1.6)
CHANNELS = ("delta_deg", "omega_pu", "id", "iq", "vd", "vq", "te", "pg", "qg")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FaultScenario:
    line: int
    duration: float
    location: float
    load_scale: float = 1.0
    t_start: float = 2.0
    generator_trip: tuple[str, float] | None = None

    def __post_init__(self):
        if not 0.0 <= self.location <= 1.0:
            raise ValueError(f"fault location {self.location} outside [0, 1]")
        if self.t_start < 0:
            raise ValueError("t_start must be >= 0")
        if self.duration < 0:
            raise ValueError("duration must be >= 0")
        if self.load_scale <= 0:
            raise ValueError("load_scale must be > 0")

    @property
    def t_clear(self) -> float:
        return self.t_start + self.duration

    def to_dict(self) -> dict:
        return {"line": self.line, "duration": self.duration, "location": self.location,
                "load_scale": self.load_scale, "t_start": self.t_start,
                "generator_trip": list(self.generator_trip) if self.generator_trip else None}

    @classmethod
    def from_dict(cls, d: dict) -> "FaultScenario":
        trip = d.get("generator_trip")
        return cls(line=int(d["line"]), duration=float(d["duration"]), location=float(d["location"]),
                   load_scale=float(d.get("load_scale", 1.0)), t_start=float(d.get("t_start", 2.0)),
                   generator_trip=(str(trip[0]), float(trip[1])) if trip else None)


@dataclass(frozen=True)
class SimConfig:
    step: float = 1e-3
    horizon: float = 7.0
    sample_period: float = 8e-3
    integrator: str = "rk4"

    def __post_init__(self):
        if self.step <= 0 or self.sample_period <= 0 or self.horizon <= 0:
            raise ValueError("step, sample_period and horizon must be positive")
        if self.step > self.sample_period + 1e-15:
            raise ValueError("integration step must not exceed the sample period")
        if self.integrator != "rk4":
            raise ValueError("only the fixed-step 'rk4' integrator is available")


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    names: list[str]
    kinds: list[str]
    inertia: np.ndarray  # H-equivalent used for the COI weights
    delta_deg: np.ndarray  # (samples, machines); NaN once a machine is tripped
    omega_pu: np.ndarray
    id: np.ndarray
    iq: np.ndarray
    vd: np.ndarray
    vq: np.ndarray
    te: np.ndarray
    pg: np.ndarray
    qg: np.ndarray
    coi: np.ndarray
    events: list[tuple[float, str]] = field(default_factory=list)
    nominal_freq: float = 60.0
    failed: bool = False
    diagnostic: str = ""

    @property
    def n_machines(self) -> int:
        return len(self.names)

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def machine_index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class TisLabel:
    cls: int
    lambda_max: float
    margin: float


def scenario_schedule(scn: FaultScenario, t: float, case: GridCase):
    """Line statuses and fault flag at time ``t`` (faulted line out while the fault is on)."""
    status = case.line_status.copy()
    if scn.duration > 0 and scn.t_start <= t <= scn.t_clear:
        pos = [ln.id for ln in case.lines].index(scn.line)
        status[pos] = 0
        return status, 1
    return status, 0


@njit(cache=True)
def _rk4_kernel(delta, omega, Y, emag, pm, damp, inv_m, dyn, w_s, dt, n_steps):
    n = delta.size
    kd = np.empty((4, n))
    kw = np.empty((4, n))
    d = delta.copy()
    w = omega.copy()
    for _ in range(n_steps):
        for stage in range(4):
            if stage == 0:
                ds, ws = d, w
            else:
                c = 1.0 if stage == 3 else 0.5
                ds = d + c * dt * kd[stage - 1]
                ws = w + c * dt * kw[stage - 1]
            e = emag * np.exp(1j * ds)
            cur = Y @ e
            for i in range(n):
                if dyn[i]:
                    pe = (e[i] * np.conj(cur[i])).real
                    dw = ws[i] - 1.0
                    kd[stage, i] = w_s * dw
                    kw[stage, i] = (pm[i] - pe - damp[i] * dw) * inv_m[i]
                else:
                    kd[stage, i] = 0.0
                    kw[stage, i] = 0.0
        d = d + (dt / 6.0) * (kd[0] + 2.0 * kd[1] + 2.0 * kd[2] + kd[3])
        w = w + (dt / 6.0) * (kw[0] + 2.0 * kw[1] + 2.0 * kw[2] + kw[3])
    return d, w


class _Model:
    """Swing right-hand side for one network topology.

    The reduced admittance is embedded in an all-machine matrix; tripped
    machines get zero rows and columns and zero EMF. The infinite-bus source
    is a non-dynamic unit whose angle never moves.
    """

    def __init__(self, op: OperatingPoint, net, alive, w_s):
        n = op.n
        self.n = n
        self.op = op
        self.w_s = w_s
        self.alive = np.asarray(alive, dtype=bool)
        ret = net.retained
        self.Y = np.zeros((n, n), dtype=complex)
        self.Y[np.ix_(ret, ret)] = net.Y
        self.emag = np.where(self.alive, np.abs(op.emf), 0.0)
        kinds = np.array([m.kind for m in op.machines])
        self.is_src = kinds == "source"
        self.dyn = self.alive & ~self.is_src
        self.pm = np.where(self.dyn, op.p_mech, 0.0)
        self.damp = np.array([m.damping for m in op.machines])
        M = np.array([m.inertia for m in op.machines])
        self.inv_m = np.where(self.dyn, 1.0 / np.where(np.isfinite(M) & (M > 0), M, 1.0), 0.0)
        self.x = np.array([m.reactance for m in op.machines])

    def advance(self, delta, omega, t0, t1, h):
        n_steps = max(1, math.ceil((t1 - t0) / h - 1e-9))
        dt = (t1 - t0) / n_steps
        return _rk4_kernel(delta, omega, self.Y, self.emag, self.pm, self.damp, self.inv_m,
                           self.dyn, self.w_s, dt, n_steps)

    def rhs(self, y):
        n = self.n
        delta, omega = y[:n], y[n:]
        e = self.emag * np.exp(1j * delta)
        pe = (e * np.conj(self.Y @ e)).real
        dw = omega - 1.0
        return np.concatenate([np.where(self.dyn, self.w_s * dw, 0.0),
                               np.where(self.dyn, (self.pm - pe - self.damp * dw) * self.inv_m, 0.0)])

    def sample(self, delta, omega, out: dict, row: int):
        e = self.emag * np.exp(1j * delta)
        cur = self.Y @ e
        vt = e - 1j * self.x * cur
        rot = np.exp(-1j * (delta - np.pi / 2))  # machine d-q frame, q axis along the EMF
        vdq, idq = vt * rot, cur * rot
        s = vt * np.conj(cur)
        w = np.where(self.is_src, 1.0, omega)
        out["delta_deg"][row] = np.degrees(delta)
        out["omega_pu"][row] = w
        out["id"][row], out["iq"][row] = idq.real, idq.imag
        out["vd"][row], out["vq"][row] = vdq.real, vdq.imag
        out["te"][row] = (e * np.conj(cur)).real / w
        out["pg"][row], out["qg"][row] = s.real, s.imag
        dead = ~self.alive
        if dead.any():
            for ch in CHANNELS:
                out[ch][row, dead] = np.nan


def simulate(case: GridCase, dispatch, scn: FaultScenario, cfg: SimConfig = SimConfig(),
             stop_when_unstable: bool = False, op: OperatingPoint | None = None) -> TrajectoryRecord:
    """Integrate one contingency and return the sampled trajectory.

    With ``stop_when_unstable`` the run ends at the first sample whose angle
    spread exceeds 360 degrees (the label is then already decided).
    """
    if op is None:
        op = operating_point(case, dispatch, scn.load_scale)
    machines = op.machines
    n = len(machines)
    names = [m.name for m in machines]
    w_s = 2.0 * np.pi * case.nominal_freq

    trip_idx, trip_t = None, None
    if scn.generator_trip is not None:
        trip_name, trip_t = scn.generator_trip
        if trip_name not in names:
            raise SimulationError(f"unknown machine {trip_name!r} in generator_trip")
        trip_idx = names.index(trip_name)
        if machines[trip_idx].kind == "source":
            raise SimulationError("the infinite bus cannot be tripped")

    n_samples = int(round(cfg.horizon / cfg.sample_period)) + 1
    t_samples = np.arange(n_samples) * cfg.sample_period
    events = []
    switch_times = []
    if scn.duration > 0:
        switch_times += [scn.t_start, scn.t_clear]
        events += [(scn.t_start, f"fault on line {scn.line} at x={scn.location:g}"),
                   (scn.t_clear, f"fault cleared, line {scn.line} restored")]
    if trip_idx is not None:
        switch_times.append(trip_t)
        events.append((trip_t, f"trip {names[trip_idx]}"))
    events.sort()

    models: dict = {}

    def model_at(t_mid):
        status, flag = scenario_schedule(scn, t_mid, case)
        fault = (scn.line, scn.location) if flag else None
        alive = np.ones(n, dtype=bool)
        if trip_idx is not None and t_mid >= trip_t:
            alive[trip_idx] = False
        key = (tuple(status), fault, tuple(alive))
        if key not in models:
            net = reduced_network(case, op, status, fault, alive)
            models[key] = _Model(op, net, alive, w_s)
        return models[key]

    delta = np.angle(op.emf)
    omega = np.ones(n)
    out = {ch: np.full((n_samples, n), np.nan) for ch in CHANNELS}
    failed, diag = False, ""

    model = model_at(-1.0)
    model.sample(delta, omega, out, 0)
    last = 0
    for s in range(1, n_samples):
        t0, t1 = t_samples[s - 1], t_samples[s]
        cuts = sorted({t0, t1, *[ts for ts in switch_times if t0 < ts < t1]})
        for a, b in zip(cuts[:-1], cuts[1:]):
            model = model_at(0.5 * (a + b))
            omega = np.where(model.alive, omega, 1.0)
            delta, omega = model.advance(delta, omega, a, b, cfg.step)
        # a sample that coincides with a switching instant reports the pre-switch topology
        model.sample(delta, omega, out, s)
        last = s
        dev = np.abs(omega[model.dyn] - 1.0)
        if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(omega))):
            failed, diag = True, f"non-finite state at t={t1:.3f} s"
            break
        if dev.size and dev.max() > 0.5:
            failed, diag = True, f"speed deviation {dev.max():.3f} pu exceeds 0.5 pu at t={t1:.3f} s"
            break
        if stop_when_unstable:
            ang = out["delta_deg"][s]
            ang = ang[np.isfinite(ang)]
            if ang.size and ang.max() - ang.min() > 360.0:
                break

    keep = slice(0, last + 1)
    inertia = np.array([m.inertia / 2.0 if m.kind != "source" else 0.0 for m in machines])
    rec = TrajectoryRecord(
        t=t_samples[keep], names=names, kinds=[m.kind for m in machines], inertia=inertia,
        coi=np.zeros(0), events=events, nominal_freq=case.nominal_freq,
        failed=failed, diagnostic=diag, **{ch: out[ch][keep] for ch in CHANNELS},
    )
    rec.coi = coi_frequency(rec)
    if failed:
        log.warning("simulation aborted: %s", diag)
    return rec


def coi_frequency(traj: TrajectoryRecord, case: GridCase | None = None) -> np.ndarray:
    """Inertia-weighted mean speed of the machines still in service.

    The weights are the H-equivalents stored on the record (dispatched M/2 for
    IBRs); ``case`` is accepted for call-site symmetry and not needed.
    """
    w = np.where(np.isfinite(traj.omega_pu), traj.inertia[None, :], 0.0)
    w[:, np.array(traj.kinds) == "source"] = 0.0
    tot = w.sum(axis=1)
    if traj.t.size == 0:
        raise ValueError("empty trajectory")
    if np.any(tot <= 0):
        raise ValueError("no machine left in service")
    return np.nansum(w * np.nan_to_num(traj.omega_pu), axis=1) / tot


def classify_tis(traj: TrajectoryRecord) -> TisLabel:
    """Transient instability status from the largest rotor-angle separation."""
    ang = traj.delta_deg
    lam = 0.0
    if ang.size:
        ang = ang[np.isfinite(ang).any(axis=1)]  # rows with every machine tripped carry no angle
        spread = np.nanmax(ang, axis=1) - np.nanmin(ang, axis=1) if ang.size else np.zeros(0)
        lam = float(spread.max()) if spread.size else 0.0
    margin = (360.0 - lam) / (360.0 + lam)
    return TisLabel(cls=1 if margin <= 0 else 0, lambda_max=lam, margin=margin)


def label_of(traj: TrajectoryRecord) -> int:
    """Class label, counting aborted runs as unstable."""
    return 1 if traj.failed else classify_tis(traj).cls


def compute_cct(case: GridCase, dispatch, fault, cfg: SimConfig = SimConfig(),
                bracket=(0.0, 1.0), tol: float | None = None, t_start: float = 2.0,
                load_scale: float = 1.0) -> float:
    """Critical clearing time by bisection on the fault duration.

    ``fault`` is ``(line_id, location)``; returns the stable end of the final bracket.
    """
    line, x = fault
    tol = 2.0 * cfg.step if tol is None else tol
    op = operating_point(case, dispatch, load_scale)

    def unstable(tau):
        scn = FaultScenario(line=line, duration=tau, location=x, load_scale=load_scale, t_start=t_start)
        return label_of(simulate(case, dispatch, scn, cfg, stop_when_unstable=True, op=op)) == 1

    lo, hi = bracket
    if unstable(lo):
        raise ValueError(f"bracket lower end {lo} s is already unstable")
    if not unstable(hi):
        raise ValueError(f"bracket upper end {hi} s is still stable")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if unstable(mid):
            hi = mid
        else:
            lo = mid
    return lo


def draw_scenarios(case: GridCase, count: int, seed: int, tau=SWEEP_TAU, x=SWEEP_X, k=SWEEP_K,
                   t_start: float = 2.0, lines=None) -> list[FaultScenario]:
    if count < 1:
        raise ValueError("count must be >= 1")
    if not (SWEEP_TAU[0] <= tau[0] <= tau[1] <= SWEEP_TAU[1]):
        raise ValueError(f"duration range {tau} outside {SWEEP_TAU}")
    if not (0.0 <= x[0] <= x[1] <= 1.0):
        raise ValueError(f"location range {x} outside [0, 1]")
    if not (SWEEP_K[0] <= k[0] <= k[1] <= SWEEP_K[1]):
        raise ValueError(f"load-scale range {k} outside {SWEEP_K}")
    ids = [ln.id for ln in case.lines if ln.in_service] if lines is None else list(lines)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        out.append(FaultScenario(
            line=int(ids[rng.integers(len(ids))]),
            duration=float(rng.uniform(*tau)),
            location=float(rng.uniform(*x)),
            load_scale=float(rng.uniform(*k)),
            t_start=t_start,
        ))
    return out


@dataclass
class SweepItem:
    index: int
    scenario: FaultScenario
    trajectory: TrajectoryRecord | None
    label: TisLabel | None
    error: str = ""


def _run_one(args):
    i, case, dispatch, scn, cfg = args
    try:
        traj = simulate(case, dispatch, scn, cfg)
    except (EquilibriumError, SimulationError, np.linalg.LinAlgError, ValueError) as exc:
        return SweepItem(i, scn, None, None, error=f"{type(exc).__name__}: {exc}")
    lab = classify_tis(traj)
    if traj.failed:
        lab = TisLabel(1, lab.lambda_max, lab.margin)
    return SweepItem(i, scn, traj, lab, error=traj.diagnostic)


def sweep_scenarios(case: GridCase, dispatch, count: int, seed: int, cfg: SimConfig = SimConfig(),
                    tau=SWEEP_TAU, x=SWEEP_X, k=SWEEP_K, workers: int | None = None,
                    t_start: float = 2.0) -> list[SweepItem]:
    """Draw ``count`` random faults and simulate + label each one.

    A failing scenario is returned with ``error`` set instead of aborting the sweep.
    Worker count defaults to the ``TSVIS_WORKERS`` environment variable.
    """
    scns = draw_scenarios(case, count, seed, tau, x, k, t_start)
    jobs = [(i, case, dispatch, s, cfg) for i, s in enumerate(scns)]
    if workers is None:
        workers = int(os.environ.get("TSVIS_WORKERS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            items = list(ex.map(_run_one, jobs, chunksize=4))
    else:
        items = [_run_one(j) for j in jobs]
    return sorted(items, key=lambda it: it.index)


def linearize_eigenvalues(case: GridCase, dispatch, load_scale: float = 1.0, op=None) -> np.ndarray:
    """Eigenvalues of the swing system linearised at the pre-fault equilibrium."""
    if op is None:
        op = operating_point(case, dispatch, load_scale)
    J = swing_jacobian(case, op)
    # LAPACK dgeev: Hessenberg reduction followed by shifted QR
    return np.linalg.eigvals(J)


def swing_jacobian(case: GridCase, op: OperatingPoint) -> np.ndarray:
    n_all = op.n
    alive = np.ones(n_all, dtype=bool)
    net = reduced_network(case, op, case.line_status, None, alive)
    dyn = [k for k, m in enumerate(op.machines) if m.kind != "source"]
    pos = {int(k): a for a, k in enumerate(net.retained)}
    E = op.emf[net.retained]
    Y = net.Y
    # dP_i/d(delta_j) = Im(E_i conj(Y_ij E_j)) for i != j; rows sum to zero
    nr = len(net.retained)
    K = np.zeros((nr, nr))
    for i in range(nr):
        for j in range(nr):
            if i != j:
                K[i, j] = np.imag(E[i] * np.conj(Y[i, j] * E[j]))
        K[i, i] = -K[i].sum()
    n = len(dyn)
    w_s = 2.0 * np.pi * case.nominal_freq
    M = np.array([op.machines[k].inertia for k in dyn])
    D = np.array([op.machines[k].damping for k in dyn])
    Kd = K[np.ix_([pos[k] for k in dyn], [pos[k] for k in dyn])]
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = w_s * np.eye(n)
    J[n:, :n] = -Kd / M[:, None]
    J[n:, n:] = -np.diag(D / M)
    return J


def with_duration(scn: FaultScenario, tau: float) -> FaultScenario:
    return replace(scn, duration=tau)


# ---------------------------------------------------------------- CSV output

def write_trajectory_csv(traj: TrajectoryRecord, path) -> None:
    """Long format: one row per (sample, machine); tripped machines leave empty cells."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "machine", *CHANNELS])
        cols = [getattr(traj, ch) for ch in CHANNELS]
        for k, t in enumerate(traj.t):
            for m, name in enumerate(traj.names):
                vals = [c[k, m] for c in cols]
                w.writerow([f"{t:.6f}", name, *("" if not np.isfinite(v) else f"{v:.10g}" for v in vals)])


def write_events_csv(traj: TrajectoryRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "event"])
        for t, ev in traj.events:
            w.writerow([f"{t:.6f}", ev])
        if traj.failed:
            w.writerow([f"{traj.t[-1]:.6f}", f"aborted: {traj.diagnostic}"])


def write_coi_csv(traj: TrajectoryRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "coi_pu", "delta_f_hz"])
        for t, c in zip(traj.t, traj.coi):
            w.writerow([f"{t:.6f}", f"{c:.12g}", f"{(c - 1.0) * traj.nominal_freq:.10g}"])


def write_eigen_csv(ev, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["real", "imag"])
        for z in np.asarray(ev):
            w.writerow([f"{z.real:.12g}", f"{z.imag:.12g}"])
