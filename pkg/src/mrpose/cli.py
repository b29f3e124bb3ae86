"""Command-line entry point: ``mrpose <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .architectures import ConfigError, build_model, summary
from .config import PRESETS, TrainConfig
from .data.manifest import DatasetManifest
from .data.synthetic import SyntheticConfig, generate_synthetic_dataset
from .engine import TrainingAborted, compare, evaluate, load_dataset, predict, train

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("mrpose")


def _load_config(args) -> TrainConfig:
    """--config may be a JSON file or a preset name; --variant/--seed/--workers override."""
    if args.config is None:
        cfg = PRESETS["desk"]()
    elif args.config in PRESETS and not Path(args.config).exists():
        cfg = PRESETS[args.config]()
    else:
        cfg = TrainConfig.from_json(args.config)
    d = cfg.to_dict()
    if getattr(args, "variant", None):
        d["arch"]["variant"] = args.variant
    if getattr(args, "epochs", None):
        d["total_epochs"] = args.epochs
    if args.seed is not None:
        d["seed"] = args.seed
    if args.workers is not None:
        d["workers"] = args.workers
    return TrainConfig.from_dict(d)


def _dataset_from_args(args, cfg: TrainConfig = None) -> DatasetManifest:
    if getattr(args, "data", None):
        path = Path(args.data)
        if path.suffix == ".json" and path.name == "manifest.json" or path.is_dir():
            return DatasetManifest.load(path / "manifest.json" if path.is_dir() else path)
        return load_dataset({"annotations": str(path)})
    if cfg is None:
        cfg = _load_config(args)
    return load_dataset(cfg.data, cfg.seed)


# ----------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    cfg = SyntheticConfig(n_train=args.n_train, n_val=args.n_val)
    out = Path(args.out_dir or "synthetic_data")
    m = generate_synthetic_dataset(cfg, seed=args.seed or 0, out_dir=out)
    print(f"wrote {len(m)} records to {out / 'manifest.json'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out_dir or cfg.checkpoint_dir or f"runs/{cfg.arch.variant}")
    manifest = DatasetManifest.load(args.data) if args.data else None
    result = train(cfg, out, resume=args.resume, manifest=manifest, progress=True)
    print(json.dumps(result.summary, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = _dataset_from_args(args)
    if args.split:
        manifest = manifest.split(args.split)
    thresholds = [float(t) for t in args.thresholds.split(",")] if args.thresholds else None
    r = args.r if args.r is not None else (0.5 if args.metric == "pckh" else 0.2)
    report = evaluate(args.checkpoint, manifest, args.metric, r, thresholds, workers=args.workers or 1)
    print(report.to_text())
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"eval_{args.metric}.csv").write_text(report.to_csv())
    return EXIT_OK


def cmd_predict(args) -> int:
    pred = predict(args.checkpoint, args.image, args.box, args.out_dir)
    for (x, y), c in zip(pred.keypoints, pred.confidences):
        print(f"{x:9.2f} {y:9.2f} {c:7.4f}")
    if args.out_dir:
        print(f"wrote {len(pred.heatmap_files)} heatmaps to {args.out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    missing = [d for d in args.runs if not Path(d).is_dir()]
    if missing:
        raise FileNotFoundError(f"run directory not found: {missing[0]}")
    print(compare(args.runs))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_gradient_suite

    ok = True
    for name, err, tol in run_gradient_suite(seed=args.seed or 0):
        status = "ok" if err < tol else "FAIL"
        ok &= err < tol
        print(f"{status:4s} {name:40s} {err:.3e} (< {tol:g})")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_summary(args) -> int:
    cfg = _load_config(args)
    spec = cfg.arch
    model = build_model(spec, cfg.seed)
    print(summary(model))
    return EXIT_OK


# ----------------------------------------------------------------------------


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands accept the global flags too; SUPPRESS keeps a flag given
    # before the subcommand from being reset by the subparser's default
    default = argparse.SUPPRESS if suppress else None
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=default,
                   help="TrainConfig JSON file or preset name (desk, coco, mpii)")
    g.add_argument("--seed", type=int, default=default)
    g.add_argument("--workers", type=int, default=default)
    g.add_argument("--out-dir", default=default)
    g.add_argument("-v", "--verbose", action="store_true",
                   default=argparse.SUPPRESS if suppress else False)
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="mrpose", description="Multi-resolution pose estimation toolkit",
                                parents=[_global_flags(suppress=False)])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic stick-figure dataset")
    g.add_argument("--n-train", type=int, default=500)
    g.add_argument("--n-val", type=int, default=100)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train one model")
    t.add_argument("--variant", choices=["baseline", "mrheat1", "mrheat2", "mrfea1", "mrfea2"])
    t.add_argument("--epochs", type=int, help="override total_epochs")
    t.add_argument("--data", help="dataset manifest.json (default: from config)")
    t.add_argument("--resume", help="checkpoint stem to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--data", help="manifest.json, dataset directory, or keypoint annotation JSON")
    e.add_argument("--split", help="restrict to one split tag (e.g. val)")
    e.add_argument("--metric", choices=["pck", "pckh", "oks-ap"], default="pck")
    e.add_argument("--r", type=float, default=None, help="PCK/PCKh fraction")
    e.add_argument("--thresholds", help="comma-separated OKS thresholds")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", parents=[common], help="keypoints and heatmaps for one box")
    pr.add_argument("checkpoint")
    pr.add_argument("image", help="PGM image")
    pr.add_argument("--box", type=float, nargs=4, metavar=("X", "Y", "W", "H"), required=True)
    pr.set_defaults(func=cmd_predict)

    c = sub.add_parser("compare", parents=[common], help="side-by-side table of finished runs")
    c.add_argument("runs", nargs="+")
    c.set_defaults(func=cmd_compare)

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    gc.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("summary", parents=[common], help="layer table for a configured model")
    s.add_argument("--variant", choices=["baseline", "mrheat1", "mrheat2", "mrfea1", "mrfea2"])
    s.set_defaults(func=cmd_summary)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, FileNotFoundError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
