#!/usr/bin/env python3
"""End-to-end experiment: generate data, train, score, attribute, report.

Writes the dataset, the model checkpoint, fidelity + metrics JSON, and one
impact-table CSV per grouping into --out. Mirrors what the service does,
but as a batch run for quick inspection.
"""

import argparse
import json
from pathlib import Path

from obsimpact.evaluate import (
    aggregate_impacts,
    dataset_samples,
    fidelity,
    model_metrics,
    persistence_metrics,
)
from obsimpact.lrp import collect_impact_samples
from obsimpact.model import TrainConfig, init_model, save_model, train
from obsimpact.synth import FieldSpec, build_dataset, save_dataset, split_and_normalize


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/demo"))
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--snapshots", type=int, default=50, help="time steps per region")
    ap.add_argument("--train-fraction", type=float, default=0.7)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    print("generating dataset ...")
    ds = split_and_normalize(
        build_dataset(FieldSpec(seed=args.seed), snapshots_per_region=args.snapshots),
        args.train_fraction,
    )
    save_dataset(ds, args.out / "data")

    print("training ...")
    cfg = TrainConfig(seed=args.seed)
    model, history = train(init_model(seed=args.seed), ds, cfg)
    save_model(model, args.out / "model.json", train_config=cfg,
               norm_stats=ds.norm_stats, climatology=ds.climatology)

    hold = ds.holdout_indices()
    pers = persistence_metrics(ds, hold)
    mm = model_metrics(ds, model, hold)
    print(f"persistence: rmse={pers.rmse:.4f} mae={pers.mae:.4f} acc={pers.acc:.4f}")
    print(f"model      : rmse={mm.rmse:.4f} mae={mm.mae:.4f} acc={mm.acc:.4f}")

    print("scoring fidelity on the held-out split ...")
    rep = fidelity(model, dataset_samples(ds, hold), ds.climatology)
    print(f"fi+ = {rep.fi_plus:.4f}   fi- = {rep.fi_minus:.4f}   (fraction {rep.fraction})")

    metrics_doc = {
        "persistence": {"rmse": pers.rmse, "mae": pers.mae, "acc": pers.acc},
        "model": {"rmse": mm.rmse, "mae": mm.mae, "acc": mm.acc},
        "fidelity": rep.to_dict(),
        "final_epoch": history[-1] if history else None,
    }
    (args.out / "metrics.json").write_text(json.dumps(metrics_doc, indent=1))

    print("aggregating impacts ...")
    samples = collect_impact_samples(model, [ds.graphs[i] for i in hold])
    for key in ("observation_type", "region", "time_window", "grid_cell"):
        table = aggregate_impacts(samples, key, time_window=5, grid_cell_deg=1.0)
        (args.out / f"impacts_{key}.csv").write_text(table.to_csv())
        print(f"  wrote impacts_{key}.csv ({len(table.rows)} rows)")

    print(f"all artifacts in {args.out}")


if __name__ == "__main__":
    main()
