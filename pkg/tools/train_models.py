"""Regenerate the bundled case39 classifier and regressor.

    python3 tools/train_models.py [--count 600] [--seed 2024] [--out src/tsvis/models]

Sweeps random faults on the conventional case39 dispatch, builds the feature
dataset and trains both networks with fixed seeds (about five minutes on one core).
"""

import argparse
import json
import time
from pathlib import Path

from tsvis.dispatch import solve_vis
from tsvis.features import build_dataset, stack, write_dataset
from tsvis.grid import load_case
from tsvis.predictor import TrainConfig, train_classifier, train_regressor


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=600)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src" / "tsvis" / "models"))
    ap.add_argument("--dataset", default=None, help="also write the dataset here")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    case = load_case("case39")
    records, skipped = build_dataset(case, solve_vis(case), args.count, args.seed)
    if args.dataset:
        write_dataset(args.dataset, records)
    X, y, df = stack(records)
    t1 = time.perf_counter()
    clf, crep = train_classifier(X, y, TrainConfig(seed=args.seed, epochs=10))
    reg, rrep = train_regressor(X, df, TrainConfig(seed=args.seed, epochs=15))
    clf.save(out / "classifier.json")
    reg.save(out / "regressor.json")
    summary = {
        "case": "case39", "count": args.count, "seed": args.seed, "records": len(records),
        "skipped": len(skipped), "unstable_fraction": float(y.mean()),
        "classifier_holdout_accuracy": crep.holdout_metric,
        "regressor_holdout_rmse_hz": rrep.holdout_metric,
        "dataset_seconds": round(t1 - t0, 1), "training_seconds": round(time.perf_counter() - t1, 1),
    }
    (out / "training_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
