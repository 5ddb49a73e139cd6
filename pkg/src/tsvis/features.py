"""Feature windows cut from simulated trajectories, and the dataset file format.

For every synchronous-generator site the window holds 27 rows over the
0.5 s ending at fault clearance:

* 9 primary channels (i_d, i_q, v_d, v_q, delta, omega, T_e, P_g, Q_g),
* their first differences between consecutive samples (first column 0),
* |delta_i - delta_j| against the other generators in fixed order, zero-padded to 9.

The 62 raw samples are linearly interpolated onto 250 columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from tsvis.tds import FaultScenario, TrajectoryRecord, classify_tis

PRIMARY = ("id", "iq", "vd", "vq", "delta_deg", "omega_pu", "te", "pg", "qg")
N_PEERS = 9
ROWS_PER_MACHINE = 27
RAW_WIDTH = 62
WIDTH = 250
WINDOW_SECONDS = 0.5
FIRST_SWING_SECONDS = 2.0


@dataclass
class FeatureWindow:
    values: np.ndarray  # (27 * n_machines, width)
    rows: list[tuple[str, str]]  # (machine, feature name)
    t_clear: float
    raw_samples: int = RAW_WIDTH

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _select_machines(traj: TrajectoryRecord, kinds=("sg",)) -> list[int]:
    sel = [i for i, k in enumerate(traj.kinds) if k in kinds]
    if not sel:
        raise ValueError("trajectory has no machine of the requested kinds")
    return sel


def raw_window(traj: TrajectoryRecord, t_clear: float, kinds=("sg",)) -> FeatureWindow:
    """Unsampled 27n x 62 window ending at the last sample not after ``t_clear``."""
    dt = traj.t[1] - traj.t[0]
    end = int(np.floor((t_clear - traj.t[0]) / dt + 1e-6))
    start = end - RAW_WIDTH + 1
    if start < 0 or end >= traj.t.size:
        raise ValueError(f"window [{t_clear - WINDOW_SECONDS:.3f}, {t_clear:.3f}] s exceeds the "
                         f"trajectory span [{traj.t[0]:.3f}, {traj.t[-1]:.3f}] s")
    machines = _select_machines(traj, kinds)
    if len(machines) - 1 > N_PEERS:
        raise ValueError(f"at most {N_PEERS + 1} machines fit the 27-row layout")
    sl = slice(start, end + 1)
    delta = traj.delta_deg[sl][:, machines]
    blocks, rows = [], []
    for a, m in enumerate(machines):
        name = traj.names[m]
        prim = np.stack([getattr(traj, ch)[sl, m] for ch in PRIMARY])
        diff = np.zeros_like(prim)
        diff[:, 1:] = np.diff(prim, axis=1)
        peers = np.zeros((N_PEERS, RAW_WIDTH))
        others = [b for b in range(len(machines)) if b != a]
        for p, b in enumerate(others):
            peers[p] = np.abs(delta[:, a] - delta[:, b])
        blocks += [prim, diff, peers]
        rows += [(name, ch) for ch in PRIMARY]
        rows += [(name, f"d_{ch}") for ch in PRIMARY]
        rows += [(name, f"sep_{p}") for p in range(N_PEERS)]
    values = np.vstack(blocks)
    if not np.all(np.isfinite(values)):
        raise ValueError("window contains non-finite samples (tripped machine inside the window?)")
    return FeatureWindow(values, rows, float(t_clear), RAW_WIDTH)


def upsample(raw: np.ndarray, width: int = WIDTH) -> np.ndarray:
    """Rowwise linear interpolation onto ``width`` points over the same span."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[1] != RAW_WIDTH:
        raise ValueError(f"expected a {RAW_WIDTH}-column window, got shape {raw.shape}")
    src = np.arange(RAW_WIDTH, dtype=float)
    dst = np.linspace(0.0, RAW_WIDTH - 1.0, width)
    left = np.floor(dst).astype(int).clip(0, RAW_WIDTH - 2)
    frac = dst - src[left]
    out = raw[:, left] * (1.0 - frac) + raw[:, left + 1] * frac
    out[:, 0], out[:, -1] = raw[:, 0], raw[:, -1]
    return out


def extract_features(traj: TrajectoryRecord, t_clear: float, kinds=("sg",)) -> FeatureWindow:
    raw = raw_window(traj, t_clear, kinds)
    return FeatureWindow(upsample(raw.values), raw.rows, raw.t_clear, RAW_WIDTH)


def intensity_map(window) -> np.ndarray:
    """Per-row min-max scaling to [0, 1] followed by a 3x3 edge-replicated box blur.

    Constant rows map to 0.5.
    """
    x = np.asarray(getattr(window, "values", window), dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("intensity map needs finite entries")
    lo = x.min(axis=1, keepdims=True)
    span = x.max(axis=1, keepdims=True) - lo
    flat = span[:, 0] <= 0.0
    norm = np.where(flat[:, None], 0.5, (x - lo) / np.where(span > 0, span, 1.0))
    return np.clip(uniform_filter(norm, size=3, mode="nearest"), 0.0, 1.0)


def first_swing_deviation(traj: TrajectoryRecord, t_start: float, t_end: float | None = None,
                          span: float = FIRST_SWING_SECONDS) -> float:
    """Signed COI frequency deviation (Hz) of largest magnitude in [t_start, t_end].

    Dataset records use ``t_end = t_clear``: the accelerating part of the first
    swing. Without ``t_end`` the interval is ``span`` seconds long.
    """
    t_end = t_start + span if t_end is None else t_end
    mask = (traj.t >= t_start - 1e-9) & (traj.t <= t_end + 1e-9)
    if not mask.any():
        raise ValueError("trajectory does not cover the first swing")
    dev = (traj.coi[mask] - 1.0) * traj.nominal_freq
    return float(dev[np.argmax(np.abs(dev))])


# ---------------------------------------------------------------- dataset files

@dataclass
class DatasetRecord:
    scenario_id: int
    window: np.ndarray  # (rows, 250)
    label: int
    delta_f: float  # Hz
    scenario: FaultScenario | None = None
    seed: int | None = None
    lambda_max: float = float("nan")
    meta: dict = field(default_factory=dict)


def make_record(scenario_id: int, traj: TrajectoryRecord, scn: FaultScenario, seed=None) -> DatasetRecord:
    lab = classify_tis(traj)
    label = 1 if traj.failed else lab.cls
    meta = {"failed": bool(traj.failed)}
    win = extract_features(traj, scn.t_clear)
    return DatasetRecord(scenario_id, win.values, label, first_swing_deviation(traj, scn.t_start, scn.t_clear),
                         scn, seed, lab.lambda_max, meta)


def write_dataset(path, records: list[DatasetRecord]) -> Path:
    """One JSON line per record plus a float32 little-endian sidecar of the windows.

    Returns the sidecar path (``<path>.f32``).
    """
    path = Path(path)
    side = path.with_name(path.name + ".f32")
    if not records:
        raise ValueError("no records to write")
    shape = records[0].window.shape
    with open(side, "wb") as fb, open(path, "w") as fh:
        for k, r in enumerate(records):
            if r.window.shape != shape:
                raise ValueError("all windows must share one shape")
            fb.write(np.ascontiguousarray(r.window, dtype="<f4").tobytes(order="C"))
            doc = {"scenario_id": r.scenario_id, "label": int(r.label), "delta_f": r.delta_f,
                   "lambda_max": r.lambda_max, "seed": r.seed,
                   "scenario": r.scenario.to_dict() if r.scenario else None,
                   "sidecar": side.name, "offset": k, "rows": shape[0], "cols": shape[1]}
            doc.update(r.meta)
            fh.write(json.dumps(doc, sort_keys=True) + "\n")
    return side


def read_dataset(path) -> list[DatasetRecord]:
    path = Path(path)
    out = []
    cache: dict[str, np.ndarray] = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            rows, cols = int(d["rows"]), int(d["cols"])
            side = path.with_name(d["sidecar"])
            if side.name not in cache:
                cache[side.name] = np.fromfile(side, dtype="<f4")
            flat = cache[side.name]
            n = rows * cols
            w = flat[d["offset"] * n:(d["offset"] + 1) * n].reshape(rows, cols).astype(float)
            scn = FaultScenario.from_dict(d["scenario"]) if d.get("scenario") else None
            rec = DatasetRecord(int(d["scenario_id"]), w, int(d["label"]), float(d["delta_f"]),
                                scn, d.get("seed"), float(d.get("lambda_max", float("nan"))),
                                {"failed": bool(d.get("failed", False))})
            expected = 1 if rec.meta["failed"] or rec.lambda_max >= 360.0 else 0
            if np.isfinite(rec.lambda_max) and rec.label != expected:
                raise ValueError(f"{path}: record {rec.scenario_id} label {rec.label} contradicts "
                                 f"its angle separation {rec.lambda_max:.1f} deg")
            out.append(rec)
    return out


def stack(records: list[DatasetRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = np.stack([r.window for r in records])
    y = np.array([r.label for r in records], dtype=int)
    df = np.array([r.delta_f for r in records], dtype=float)
    return X, y, df


def build_dataset(case, dispatch, count: int, seed: int, cfg=None, workers: int | None = None,
                  **ranges) -> tuple[list[DatasetRecord], list[tuple[int, str]]]:
    """Sweep random faults and turn each trajectory into a record.

    Scenarios whose simulation failed before clearance (no full window) are
    returned in the second list with the reason instead of a record.
    """
    from tsvis.tds import SimConfig, sweep_scenarios

    items = sweep_scenarios(case, dispatch, count, seed, cfg or SimConfig(), workers=workers, **ranges)
    records, skipped = [], []
    for it in items:
        if it.trajectory is None:
            skipped.append((it.index, it.error))
            continue
        try:
            records.append(make_record(it.index, it.trajectory, it.scenario, seed))
        except ValueError as exc:
            skipped.append((it.index, str(exc)))
    return records, skipped
