"""Command line entry points: gen-data, train, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .evaluate import model_metrics, persistence_metrics
from .geo import DEFAULT_REGIONS, region_by_name
from .model import TrainConfig, init_model, load_model, save_model, train
from .synth import FieldSpec, build_dataset, load_dataset, save_dataset, split_and_normalize


def _cmd_gen_data(args: argparse.Namespace) -> int:
    if args.region == ["all"] or args.region is None:
        regions = DEFAULT_REGIONS
    else:
        regions = tuple(region_by_name(name) for name in args.region)
    spec = FieldSpec(seed=args.seed)
    ds = build_dataset(spec, regions=regions, snapshots_per_region=args.snapshots)
    ds = split_and_normalize(ds, args.train_fraction)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.snapshots)} snapshots for {len(regions)} region(s) to {args.out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    ds = load_dataset(args.data)
    if ds.norm_stats is None:
        print("dataset is not normalized; regenerate it with gen-data", file=sys.stderr)
        return 2
    cfg = TrainConfig(
        lr=args.lr,
        epochs_pretrain=args.epochs_pretrain,
        epochs_finetune=args.epochs_finetune,
        lambda_recon=args.lambda_recon,
        seed=args.seed,
        grad_clip=args.grad_clip,
    )
    model, history = train(init_model(seed=cfg.seed), ds, cfg, progress=_print_progress)
    print()
    save_model(model, args.out, train_config=cfg, norm_stats=ds.norm_stats, climatology=ds.climatology)
    hold = ds.holdout_indices()
    if hold:
        pers = persistence_metrics(ds, hold)
        mm = model_metrics(ds, model, hold)
        print(f"held-out persistence: rmse={pers.rmse:.4f} mae={pers.mae:.4f} acc={pers.acc:.4f}")
        print(f"held-out model      : rmse={mm.rmse:.4f} mae={mm.mae:.4f} acc={mm.acc:.4f}")
    print(f"saved model to {args.out}")
    return 0


def _print_progress(frac: float, msg: str) -> None:
    print(f"\r[{frac:6.1%}] {msg:<40}", end="", flush=True)


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .server import AppState, create_app

    config = {}
    if args.config:
        config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    data_dir = args.data or config.get("data_dir")
    model_path = args.model or config.get("model_path")
    addr = args.addr or config.get("addr", "127.0.0.1:8000")
    ui_dir = args.ui or config.get("ui_dir")

    dataset = None
    if data_dir and Path(data_dir, "meta.json").is_file():
        dataset = load_dataset(data_dir)
        print(f"loaded {len(dataset.snapshots)} snapshots from {data_dir}")
    else:
        print("no dataset loaded; /api endpoints will answer 409 until one exists")

    model = None
    if model_path and Path(model_path).is_file():
        model, _ = load_model(model_path)
        print(f"loaded model from {model_path}")

    state = AppState(dataset=dataset, model=model, model_path=model_path)
    app = create_app(state, ui_dir=ui_dir)
    host, _, port = addr.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="obsimpact", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    gen.add_argument("--region", action="append", help="region name, repeatable; default all four")
    gen.add_argument("--snapshots", type=int, default=50, help="time steps per region")
    gen.add_argument("--seed", type=int, default=42)
    gen.add_argument("--train-fraction", type=float, default=0.7)
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=_cmd_gen_data)

    tr = sub.add_parser("train", help="train a model on a dataset directory")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True, help="checkpoint JSON path")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--epochs-pretrain", type=int, default=50)
    tr.add_argument("--epochs-finetune", type=int, default=60)
    tr.add_argument("--lambda-recon", type=float, default=0.5)
    tr.add_argument("--grad-clip", type=float, default=5.0)
    tr.set_defaults(func=_cmd_train)

    sv = sub.add_parser("serve", help="run the HTTP service")
    sv.add_argument("--config", help="JSON config file (data_dir, model_path, addr, ui_dir)")
    sv.add_argument("--data", help="dataset directory (overrides config)")
    sv.add_argument("--model", help="model checkpoint path (overrides config)")
    sv.add_argument("--addr", help="host:port to listen on (overrides config)")
    sv.add_argument("--ui", help="directory with the built web UI (overrides config)")
    sv.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
