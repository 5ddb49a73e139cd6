"""Command-line driver: ``tsvis <command> [flags]``.

Every command writes its artifacts into ``--out`` together with a
``manifest.json`` that records the command, its flags, the case hash, the seed
and a sha256 of every artifact. Nothing time-dependent goes into the manifest,
so rerunning the same command reproduces it byte for byte.

Exit codes: 0 success, 1 domain error (message from the failing module),
2 usage error (bad or missing flag, unreadable input file).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from tsvis import __version__

DEFAULT_CASE = "case39"

log = logging.getLogger("tsvis")


class UsageError(Exception):
    """Bad flag value detected after argparse (reported with exit code 2)."""


# ---------------------------------------------------------------- helpers

def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_case(spec: str | None, fallback: str = DEFAULT_CASE):
    from tsvis.grid import bundled_case_path, load_case

    spec = fallback if spec is None else spec
    p = Path(spec)
    if not p.exists():
        try:
            p = bundled_case_path(spec)
        except (FileNotFoundError, KeyError, ValueError):
            raise UsageError(f"--case: no case file or bundled case named {spec!r}") from None
    return load_case(p), p


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_json_default) + "\n")
    return path


def _range(text: str, flag: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"{flag}: expected 'low,high', got {text!r}") from None
    return a, b


def _sim_config(args):
    from tsvis.tds import SimConfig

    return SimConfig(step=args.step, horizon=args.horizon, sample_period=args.sample_period)


def _dispatch(args, case):
    from tsvis.dispatch import DispatchInput, DispatchSolution, solve_vis

    if getattr(args, "dispatch", None):
        p = Path(args.dispatch)
        if not p.exists():
            raise UsageError(f"--dispatch: file {p} not found")
        doc = json.loads(p.read_text())
        return DispatchSolution.from_dict(doc.get("dispatch", doc))
    inp = DispatchInput.from_case(case)
    scale = getattr(args, "demand_scale", 1.0)
    if scale != 1.0:
        inp = inp.scaled_to(inp.demand * scale)
    return solve_vis(case, inp, tol=args.tol)


class _Run:
    """Collects artifacts of one command and writes the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[Path] = []
        self.case_path: Path | None = None
        self.extra: dict = {}
        self.argv = list(argv)

    def path(self, name: str) -> Path:
        p = self.out / name
        self.artifacts.append(p)
        return p

    def manifest(self) -> Path:
        flags = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func", "out")}
        doc = {
            "tool": "tsvis", "version": __version__, "command": self.args.command,
            "flags": flags,
            "case": None if self.case_path is None else {
                "path": str(self.case_path), "sha256": _sha256(self.case_path)},
            "seed": self.args.seed,
            "artifacts": {p.name: _sha256(p) for p in self.artifacts if p.exists()},
            **self.extra,
        }
        return _write_json(self.out / "manifest.json", doc)


# ---------------------------------------------------------------- commands

def cmd_simulate(run: _Run) -> None:
    from tsvis import plots
    from tsvis.tds import (FaultScenario, classify_tis, label_of, simulate, write_coi_csv, write_events_csv,
                           write_trajectory_csv)

    a = run.args
    case, run.case_path = _load_case(a.case)
    trip = None
    if a.trip:
        name, _, t = a.trip.partition("@")
        try:
            trip = (name, float(t))
        except ValueError:
            raise UsageError(f"--trip: expected MACHINE@SECONDS, got {a.trip!r}") from None
    line = a.line if a.line is not None else case.lines[0].id
    scn = FaultScenario(line, a.tau, a.x, a.k, a.t_start, trip)
    traj = simulate(case, _dispatch(a, case), scn, _sim_config(a))
    write_trajectory_csv(traj, run.path("trajectory.csv"))
    write_events_csv(traj, run.path("events.csv"))
    write_coi_csv(traj, run.path("coi.csv"))
    plots.coi_svg(run.path("coi.svg"), {"COI": (traj.t, traj.coi)}, traj.nominal_freq)
    lab = classify_tis(traj)
    summary = {"scenario": scn.to_dict(), "tis_class": label_of(traj), "lambda_max_deg": lab.lambda_max,
               "margin": lab.margin, "failed": traj.failed, "diagnostic": traj.diagnostic,
               "max_abs_delta_f_hz": float(np.nanmax(np.abs(traj.omega_pu - 1.0)) * traj.nominal_freq)}
    _write_json(run.path("summary.json"), summary)
    print(f"TIS class {summary['tis_class']}  lambda_max {lab.lambda_max:.2f} deg")


def cmd_cct(run: _Run) -> None:
    from tsvis.tds import compute_cct

    a = run.args
    case, run.case_path = _load_case(a.case)
    tol = a.cct_tol
    cct = compute_cct(case, _dispatch(a, case), (a.line, a.x), _sim_config(a), (a.lo, a.hi), tol, a.t_start,
                      a.k)
    _write_json(run.path("cct.json"), {"line": a.line, "location": a.x, "load_scale": a.k, "cct_s": cct})
    print(f"CCT line {a.line} at x={a.x}: {cct:.6f} s")


def _sweep_ranges(a):
    return {"tau": _range(a.tau_range, "--tau-range"), "x": _range(a.x_range, "--x-range"),
            "k": _range(a.k_range, "--k-range")}


def cmd_sweep(run: _Run) -> None:
    from tsvis.tds import sweep_scenarios

    a = run.args
    case, run.case_path = _load_case(a.case)
    items = sweep_scenarios(case, _dispatch(a, case), a.count, a.seed, _sim_config(a), workers=a.workers,
                            **_sweep_ranges(a))
    p = run.path("sweep.jsonl")
    n_unstable = 0
    with open(p, "w") as fh:
        for it in items:
            rec = {"index": it.index, "seed": a.seed, "scenario": it.scenario.to_dict(),
                   "label": None if it.label is None else it.label.cls,
                   "lambda_max": None if it.label is None else round(it.label.lambda_max, 9),
                   "error": it.error}
            n_unstable += int(rec["label"] == 1)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    run.extra["unstable"] = n_unstable
    print(f"{len(items)} scenarios, {n_unstable} unstable")


def cmd_dataset(run: _Run) -> None:
    from tsvis.features import build_dataset, write_dataset

    a = run.args
    case, run.case_path = _load_case(a.case)
    records, skipped = build_dataset(case, _dispatch(a, case), a.count, a.seed, _sim_config(a),
                                     workers=a.workers, **_sweep_ranges(a))
    if not records:
        raise ValueError("no scenario produced a complete feature window")
    p = run.path("dataset.jsonl")
    side = write_dataset(p, records)
    run.artifacts.append(side)
    run.extra["records"] = len(records)
    run.extra["skipped"] = [{"index": i, "reason": r} for i, r in skipped]
    print(f"{len(records)} records written, {len(skipped)} skipped")


def cmd_train(run: _Run) -> None:
    from tsvis.features import read_dataset, stack
    from tsvis.predictor import TrainConfig, train_classifier, train_regressor

    a = run.args
    p = Path(a.dataset)
    if not p.exists():
        raise UsageError(f"--dataset: file {p} not found")
    X, y, df = stack(read_dataset(p))
    cfg = TrainConfig(seed=a.seed, epochs=a.epochs, learning_rate=a.learning_rate, batch_size=a.batch_size,
                      holdout_fraction=a.holdout, min_records=a.min_records)
    metrics = {}
    if a.task in ("classifier", "both"):
        model, rep = train_classifier(X, y, cfg)
        model.save(run.path("classifier.json"))
        run.artifacts.append(run.out / "classifier.json.npz")
        metrics["classifier_holdout_accuracy"] = rep.holdout_metric
    if a.task in ("regressor", "both"):
        model, rep = train_regressor(X, df, cfg)
        model.save(run.path("regressor.json"))
        run.artifacts.append(run.out / "regressor.json.npz")
        metrics["regressor_holdout_rmse_hz"] = rep.holdout_metric
    _write_json(run.path("metrics.json"), metrics)
    run.extra["dataset_sha256"] = _sha256(p)
    print(json.dumps(metrics))


def cmd_dispatch(run: _Run) -> None:
    from tsvis.dispatch import DispatchInput, check_feasibility

    a = run.args
    case, run.case_path = _load_case(a.case)
    sol = _dispatch(a, case)
    inp = DispatchInput.from_case(case)
    if a.demand_scale != 1.0:
        inp = inp.scaled_to(inp.demand * a.demand_scale)
    viol = check_feasibility(sol, inp, case)
    _write_json(run.path("dispatch.json"), {"dispatch": sol.to_dict(),
                                            "violations": [[v.constraint, v.amount] for v in viol]})
    print(f"total cost {sol.total_cost:.6f}  kkt residual {sol.kkt_residual:.2e}")


def cmd_robust(run: _Run) -> None:
    from tsvis.dispatch import DispatchInput
    from tsvis.igdt import RobustInput, solve_robust_vis

    a = run.args
    case, run.case_path = _load_case(a.case)
    base = DispatchInput.from_case(case)
    p_hat = base.demand if a.p_hat is None else a.p_hat
    if a.cc is None:
        raise UsageError("--cc: the critical cost is required")
    res = solve_robust_vis(case, RobustInput(p_hat, a.theta, a.cc, a.sigma_cap), tol_sigma=a.tol_sigma,
                           base=base, tol=a.tol)
    _write_json(run.path("robust.json"), {"predicted_load": p_hat, "theta": a.theta, "critical_cost": a.cc,
                                          **res.to_dict()})
    print(f"sigma* {res.sigma_star:.6f}  worst-case cost {res.worst_case_cost:.6f}  budget {res.budget:.6f}")


def _risk_config(a):
    from tsvis.risk import DurationDistribution

    doc = {}
    if a.risk_config:
        p = Path(a.risk_config)
        if not p.exists():
            raise UsageError(f"--risk-config: file {p} not found")
        doc = json.loads(p.read_text())
        doc = doc.get("risk", doc)
    for key, flag in (("mean_a", a.mean_a), ("mean_b", a.mean_b), ("std", a.std), ("time_unit", a.unit)):
        if flag is not None:
            doc[key] = flag
    fields = {k: doc[k] for k in ("mean_a", "mean_b", "std", "time_unit") if k in doc}
    return DurationDistribution(**fields), doc.get("rates")


def cmd_risk(run: _Run) -> None:
    from tsvis.casestudy import per_line_cct
    from tsvis.risk import instability_probability, to_distribution_units

    a = run.args
    case, run.case_path = _load_case(a.case)
    dist, rates = _risk_config(a)
    rates = [ln.fault_rate for ln in case.lines] if rates is None else rates
    if a.cct_file:
        p = Path(a.cct_file)
        if not p.exists():
            raise UsageError(f"--cct-file: file {p} not found")
        doc = json.loads(p.read_text())
        by_line = {int(k): float(v) for k, v in doc.items()}
        try:
            cct_s = np.array([by_line[ln.id] for ln in case.lines])
        except KeyError as exc:
            raise ValueError(f"--cct-file has no CCT for line {exc.args[0]}") from None
    else:
        cct_s = per_line_cct(case, _dispatch(a, case), a.x, _sim_config(a), (a.lo, a.hi),
                             only=[ln.id for ln, r in zip(case.lines, rates) if r > 0])
    rr = instability_probability(to_distribution_units(cct_s, dist, case.nominal_freq), rates, dist,
                                 step=a.quad_step, line_ids=[ln.id for ln in case.lines])
    rr.write_csv(run.path("risk.csv"))
    print(f"theta {rr.theta:.6g}")


def cmd_eigen(run: _Run) -> None:
    from tsvis import plots
    from tsvis.casestudy import max_nonreference_real
    from tsvis.tds import linearize_eigenvalues, write_eigen_csv

    a = run.args
    case, run.case_path = _load_case(a.case)
    ev = linearize_eigenvalues(case, _dispatch(a, case), a.k)
    write_eigen_csv(ev, run.path("eigen.csv"))
    plots.eigen_svg(run.path("eigen.svg"), ev)
    print(f"{ev.size} eigenvalues, largest non-reference real part {max_nonreference_real(ev):.6g}, "
          f"smallest |lambda| {np.abs(ev).min():.3g}")


def cmd_case_study(run: _Run) -> None:
    from tsvis import plots
    from tsvis.casestudy import StudyConfig, run_case_study
    from tsvis.predictor import Classifier, Regressor
    from tsvis.tds import write_coi_csv, write_eigen_csv

    a = run.args
    study = StudyConfig.load(a.study)
    case, run.case_path = _load_case(a.case, study.case)
    clf = Classifier.load(a.classifier) if a.classifier else None
    reg = Regressor.load(a.regressor) if a.regressor else None
    report, traj_a, traj_b, rr, rob = run_case_study(study, case, clf, reg)
    write_coi_csv(traj_a, run.path("coi_branch_a.csv"))
    if traj_b is not None:
        write_coi_csv(traj_b, run.path("coi_branch_b.csv"))
    if report.eigenvalues.size:
        write_eigen_csv(report.eigenvalues, run.path("eigen.csv"))
        plots.eigen_svg(run.path("eigen.svg"), report.eigenvalues)
    if rr is not None:
        rr.write_csv(run.path("risk.csv"))
    if rob is not None:
        _write_json(run.path("robust.json"), rob.to_dict())
    series = {"conventional VIS": (traj_a.t, traj_a.coi)}
    if traj_b is not None:
        series["robust VIS"] = (traj_b.t, traj_b.coi)
    plots.coi_svg(run.path("coi.svg"), series, traj_a.nominal_freq, study.coi_band)
    doc = report.to_dict()
    doc.pop("runtime_s", None)  # keeps the artifact reproducible
    _write_json(run.path("report.json"), doc)
    ra, rb = report.branch_a, report.branch_b
    print(f"branch A: class {ra.tis_class}  dispatch {ra.dispatch_cost:.2f}  UFLS {ra.ufls_cost:.2f}  "
          f"total {ra.total:.2f}")
    print(f"branch B: class {rb.tis_class}  dispatch {rb.dispatch_cost:.2f}  UFLS {rb.ufls_cost:.2f}  "
          f"total {rb.total:.2f}  recovery {rb.recovery_time}")
    print(f"sigma* {report.sigma_star:.5f}  theta {report.theta:.3g}  P_hat {report.predicted_load:.4f}  "
          f"cost ratio {report.cost_ratio:.4f}")


# ---------------------------------------------------------------- parser

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--case", default=None, help=f"case file or bundled case name (default {DEFAULT_CASE})")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="tsvis-out", help="artifact directory")
    g.add_argument("--tol", type=float, default=1e-8, help="dispatch solver tolerance")
    return p


def _sim_flags(p, horizon=7.0):
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--horizon", type=float, default=horizon)
    p.add_argument("--sample-period", type=float, default=8e-3)
    p.add_argument("--dispatch", help="dispatch JSON (default: solve the case's VIS problem)")
    p.add_argument("--demand-scale", type=float, default=1.0)


def _sweep_flags(p):
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--tau-range", default="0.06,0.4")
    p.add_argument("--x-range", default="0,1")
    p.add_argument("--k-range", default="1,1.6")
    p.add_argument("--workers", type=int, default=None, help="default: TSVIS_WORKERS or 1")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="tsvis", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"tsvis {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate one fault scenario")
    _sim_flags(p)
    p.add_argument("--line", type=int, default=None)
    p.add_argument("--tau", type=float, default=0.0, help="fault duration [s]")
    p.add_argument("--x", type=float, default=0.5, help="fault location along the line")
    p.add_argument("--k", type=float, default=1.0, help="load scale")
    p.add_argument("--t-start", type=float, default=2.0)
    p.add_argument("--trip", default=None, help="MACHINE@SECONDS")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cct", parents=[common], help="critical clearing time by bisection")
    _sim_flags(p)
    p.add_argument("--line", type=int, required=True)
    p.add_argument("--x", type=float, default=0.5)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--t-start", type=float, default=2.0)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=1.0)
    p.add_argument("--cct-tol", type=float, default=None, help="bracket width (default 2 steps)")
    p.set_defaults(func=cmd_cct)

    p = sub.add_parser("sweep", parents=[common], help="random fault sweep with labels")
    _sim_flags(p)
    _sweep_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dataset", parents=[common], help="sweep and write a feature dataset")
    _sim_flags(p)
    _sweep_flags(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", parents=[common], help="train classifier and/or regressor")
    p.add_argument("--dataset", required=True)
    p.add_argument("--task", choices=("classifier", "regressor", "both"), default="both")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--min-records", type=int, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dispatch", parents=[common], help="solve the VIS dispatch")
    p.add_argument("--demand-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_dispatch, dispatch=None)

    p = sub.add_parser("robust", parents=[common], help="IGDT robust dispatch")
    p.add_argument("--theta", type=float, required=True, help="collapse probability")
    p.add_argument("--cc", type=float, default=None, help="critical cost [$]")
    p.add_argument("--p-hat", type=float, default=None, help="predicted load [pu] (default: case demand)")
    p.add_argument("--sigma-cap", type=float, default=2.0)
    p.add_argument("--tol-sigma", type=float, default=1e-5)
    p.set_defaults(func=cmd_robust)

    p = sub.add_parser("risk", parents=[common], help="probability of transient instability")
    _sim_flags(p)
    p.add_argument("--risk-config", default=None, help="JSON with mean_a, mean_b, std, time_unit[, rates]")
    p.add_argument("--cct-file", default=None, help="JSON {line_id: cct_seconds}; default: compute per line")
    p.add_argument("--x", type=float, default=0.5)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=1.0)
    p.add_argument("--mean-a", type=float, default=None)
    p.add_argument("--mean-b", type=float, default=None)
    p.add_argument("--std", type=float, default=None)
    p.add_argument("--unit", choices=("cycles", "s"), default=None)
    p.add_argument("--quad-step", type=float, default=None)
    p.set_defaults(func=cmd_risk)

    p = sub.add_parser("eigen", parents=[common], help="small-signal eigenvalues of the dispatch")
    p.add_argument("--dispatch", default=None)
    p.add_argument("--demand-scale", type=float, default=1.0)
    p.add_argument("--k", type=float, default=1.0, help="load scale")
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("case-study", parents=[common], help="conventional vs robust VIS comparison")
    p.add_argument("--study", default=None, help="study JSON (default: bundled case39 study)")
    p.add_argument("--classifier", default=None)
    p.add_argument("--regressor", default=None)
    p.set_defaults(func=cmd_case_study)
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = _Run(args, argv)
        args.func(run)
        run.manifest()
    except UsageError as exc:
        print(f"tsvis {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"tsvis {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
