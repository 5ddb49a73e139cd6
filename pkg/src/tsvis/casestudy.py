"""End-to-end comparison of conventional and transient-stability-aware dispatch.

Branch A dispatches at the nominal demand, simulates the scripted contingency
and, if synchronism is lost, pays for the interrupted load at the shed price.
Branch B looks at the early measurement window, predicts instability and the
first-swing frequency deviation, turns it into an interrupted-load estimate
through the ACE, prices the collapse risk from per-line CCTs, solves the
IGDT-robust dispatch and re-simulates.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from tsvis import igdt, risk
from tsvis.dispatch import DispatchInput, DispatchSolution, solve_vis
from tsvis.features import extract_features
from tsvis.grid import GridCase, load_case
from tsvis.network import operating_point
from tsvis.predictor import Classifier, Regressor, predict_frequency_deviation
from tsvis.tds import (FaultScenario, SimConfig, TrajectoryRecord, classify_tis, compute_cct, label_of,
                       linearize_eigenvalues, simulate)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StudyConfig:
    case: str
    contingency: FaultScenario
    sim: SimConfig
    cct_sim: SimConfig
    risk: risk.DurationDistribution
    cct_bracket: tuple[float, float]
    critical_cost: float
    sigma_cap: float = 2.0
    tol_sigma: float = 1e-5
    shed_price: float = 1000.0  # $/MWh
    restoration_hours: float = 1.0
    gate: float = 0.90
    coi_band: float = 0.02  # pu
    recovery_deadline: float = 12.0  # s after fault inception
    classifier: str = "models/classifier.json"
    regressor: str = "models/regressor.json"

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        sim = d.get("sim", {})
        return cls(
            case=d["case"],
            contingency=FaultScenario.from_dict(d["contingency"]),
            sim=SimConfig(step=sim.get("step", 1e-3), horizon=sim.get("horizon", 15.0),
                          sample_period=sim.get("sample_period", 8e-3)),
            cct_sim=SimConfig(step=sim.get("step", 1e-3), horizon=d.get("cct_horizon", 7.0),
                              sample_period=sim.get("sample_period", 8e-3)),
            risk=risk.DurationDistribution(**d.get("risk", {})),
            cct_bracket=tuple(d.get("cct_bracket", (0.0, 1.0))),
            critical_cost=float(d["critical_cost"]),
            sigma_cap=float(d.get("sigma_cap", 2.0)),
            tol_sigma=float(d.get("tol_sigma", 1e-5)),
            shed_price=float(d.get("shed_price", 1000.0)),
            restoration_hours=float(d.get("restoration_hours", 1.0)),
            gate=float(d.get("gate", 0.90)),
            coi_band=float(d.get("coi_band", 0.02)),
            recovery_deadline=float(d.get("recovery_deadline", 12.0)),
            classifier=d.get("classifier", "models/classifier.json"),
            regressor=d.get("regressor", "models/regressor.json"),
        )

    @classmethod
    def load(cls, path=None) -> "StudyConfig":
        """Read a study file; without a path the bundled case39 study is used."""
        if path is None:
            text = resources.files("tsvis").joinpath("cases").joinpath("case39_study.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_dict(json.loads(text))


def resolve_model_path(name: str) -> Path:
    """A path as given if it exists, otherwise relative to the installed package."""
    p = Path(name)
    if p.exists():
        return p
    return Path(str(resources.files("tsvis").joinpath(name)))


@dataclass
class BranchOutcome:
    dispatch_cost: float
    tis_class: int
    lambda_max: float
    ufls_cost: float
    recovery_time: float | None  # s after fault inception, stable branches only
    failed: str = ""

    @property
    def total(self) -> float:
        return self.dispatch_cost + self.ufls_cost


@dataclass
class CaseStudyReport:
    branch_a: BranchOutcome
    branch_b: BranchOutcome
    predicted_class: int
    prediction_confidence: float
    delta_f: float | None
    ace: float
    demand: float
    predicted_load: float
    theta: float
    sigma_star: float
    budget: float
    critical_cost: float
    eigenvalues: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    notes: list[str] = field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def cost_ratio(self) -> float:
        return self.branch_b.dispatch_cost / self.branch_a.dispatch_cost

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("eigenvalues", "branch_a", "branch_b")}
        d["branch_a"] = {**asdict(self.branch_a), "total": self.branch_a.total}
        d["branch_b"] = {**asdict(self.branch_b), "total": self.branch_b.total}
        d["cost_ratio"] = self.cost_ratio
        ev = self.eigenvalues
        d["max_real_nonzero_eigenvalue"] = float(max_nonreference_real(ev)) if ev.size else None
        return d


def max_nonreference_real(ev: np.ndarray) -> float:
    """Largest real part after removing the single eigenvalue closest to zero."""
    ev = np.asarray(ev)
    k = int(np.argmin(np.abs(ev)))
    return float(np.delete(ev, k).real.max())


def recovery_time(traj: TrajectoryRecord, t_fault: float, band: float) -> float | None:
    """Time after ``t_fault`` from which the COI stays inside 1 +/- band until the end."""
    outside = np.flatnonzero(np.abs(traj.coi - 1.0) > band)
    if outside.size == 0:
        return 0.0
    last = outside[-1]
    if last + 1 >= traj.t.size:
        return None
    return max(0.0, float(traj.t[last + 1] - t_fault))


def per_line_cct(case: GridCase, dispatch: DispatchSolution, location: float, cfg: SimConfig,
                 bracket=(0.0, 1.0), only=None) -> np.ndarray:
    """CCT of every in-service line at a fixed fault location (bracket ends when not straddled).

    ``only`` restricts the search to the listed line ids; other lines get NaN.
    """
    out = []
    op = operating_point(case, dispatch)
    lo, hi = bracket
    wanted = None if only is None else set(int(i) for i in only)
    for ln in case.lines:
        if not ln.in_service:
            out.append(np.inf)
            continue
        if wanted is not None and ln.id not in wanted:
            out.append(np.nan)
            continue

        def unstable(tau):
            scn = FaultScenario(ln.id, tau, location)
            return label_of(simulate(case, dispatch, scn, cfg, stop_when_unstable=True, op=op)) == 1

        if unstable(lo):
            out.append(lo)
        elif not unstable(hi):
            out.append(hi)
        else:
            out.append(compute_cct(case, dispatch, (ln.id, location), cfg, bracket))
    return np.array(out)


def _branch(case, dispatch, scn, cfg, band, ufls_cost_if_unstable):
    traj = simulate(case, dispatch, scn, cfg)
    cls = label_of(traj)
    lam = classify_tis(traj).lambda_max
    rec = recovery_time(traj, scn.t_start, band) if cls == 0 else None
    ufls = ufls_cost_if_unstable if cls == 1 else 0.0
    return traj, BranchOutcome(dispatch.total_cost, cls, lam, ufls, rec, traj.diagnostic)


def run_case_study(study: StudyConfig, case: GridCase | None = None, classifier: Classifier | None = None,
                   regressor: Regressor | None = None, line_cct: np.ndarray | None = None):
    """Run both branches.

    Returns ``(report, traj_a, traj_b, risk_result, robustness_result)``. A
    failure inside branch B is recorded on the report (``branch_b.failed``,
    ``notes``) and the corresponding outputs are ``None``.
    """
    t0 = time.perf_counter()
    case = load_case(study.case) if case is None else case
    classifier = Classifier.load(resolve_model_path(study.classifier)) if classifier is None else classifier
    regressor = Regressor.load(resolve_model_path(study.regressor)) if regressor is None else regressor
    scn = study.contingency
    notes = []
    base = DispatchInput.from_case(case)

    # branch A: conventional VIS, observed up to clearance
    disp_a = solve_vis(case, base)
    traj_a = simulate(case, disp_a, scn, study.sim)

    # early prediction from the window ending at clearance
    window = extract_features(traj_a, scn.t_clear)
    pred = predict_frequency_deviation(regressor, window, classifier, study.gate)
    if pred.gated:
        notes.append(f"classifier confidence {pred.confidence:.3f} below gate; ACE taken as the tie-flow term only")
    df = 0.0 if pred.gated else pred.delta_f
    if case.frequency_bias is None:
        raise ValueError(f"case {case.name} declares no ACE frequency bias")
    ace = igdt.compute_ace(igdt.AceInput(case.tie_flow_change, case.frequency_bias, df))
    p_hat = igdt.estimate_interrupted_load(base.demand, ace)
    shed_mwh = abs(ace) * case.base_power * study.restoration_hours
    ufls_cost = shed_mwh * study.shed_price

    cls_a = label_of(traj_a)
    out_a = BranchOutcome(disp_a.total_cost, cls_a, classify_tis(traj_a).lambda_max,
                          ufls_cost if cls_a == 1 else 0.0,
                          recovery_time(traj_a, scn.t_start, study.coi_band) if cls_a == 0 else None,
                          traj_a.diagnostic)

    # collapse probability from per-line clearing margins of the current schedule
    rr = rob = traj_b = None
    theta = sigma_star = budget = float("nan")
    ev = np.zeros(0, dtype=complex)
    try:
        if line_cct is None:
            line_cct = per_line_cct(case, disp_a, scn.location, study.cct_sim, study.cct_bracket)
        rr = risk.instability_probability(risk.to_distribution_units(line_cct, study.risk, case.nominal_freq),
                                          [ln.fault_rate for ln in case.lines], study.risk,
                                          line_ids=[ln.id for ln in case.lines])
        theta = rr.theta

        # branch B: IGDT-robust VIS
        rob = igdt.solve_robust_vis(case, igdt.RobustInput(p_hat, rr.theta, study.critical_cost,
                                                           study.sigma_cap),
                                    tol_sigma=study.tol_sigma, base=base)
        sigma_star, budget = rob.sigma_star, rob.budget
        traj_b, out_b = _branch(case, rob.robust_dispatch, scn, study.sim, study.coi_band, ufls_cost)
        ev = linearize_eigenvalues(case, rob.robust_dispatch)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        # the robust branch could not be completed: charge it like an unprotected system
        msg = f"{type(exc).__name__}: {exc}"
        log.error("branch B failed: %s", msg)
        notes.append(f"branch B failed: {msg}")
        cost_b = rob.robust_dispatch.total_cost if rob is not None else float("nan")
        out_b = BranchOutcome(cost_b, 1, float("nan"), ufls_cost, None, msg)

    report = CaseStudyReport(
        branch_a=out_a, branch_b=out_b, predicted_class=pred.tis_class,
        prediction_confidence=pred.confidence, delta_f=pred.delta_f, ace=ace, demand=base.demand,
        predicted_load=p_hat, theta=theta, sigma_star=sigma_star, budget=budget,
        critical_cost=study.critical_cost, eigenvalues=ev, notes=notes,
        runtime_s=time.perf_counter() - t0,
    )
    return report, traj_a, traj_b, rr, rob
