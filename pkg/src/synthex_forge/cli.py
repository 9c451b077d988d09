"""Command-line driver: generate / augment / split / evaluate / validate.

Exit codes: 0 success, 1 validation failure, 2 bad config or arguments.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataset as ds

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BAD_CONFIG = 2


def _cmd_generate(args) -> int:
    try:
        cfg = ds.GenerationConfig.from_json(Path(args.config).read_text())
        if args.seed is not None:
            cfg = ds.GenerationConfig(**{**json.loads(cfg.to_json()),
                                         "seed": args.seed})
    except (OSError, ValueError, TypeError, KeyError) as e:
        print(f"bad config: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    manifest = ds.generate(cfg, args.out, base_dir=Path(args.config).parent)
    print(f"wrote {len(manifest['samples'])} samples to {args.out}")
    return EXIT_OK


def _cmd_augment(args) -> int:
    try:
        manifest, base = ds.load_manifest(args.manifest)
    except (OSError, ValueError) as e:
        print(f"bad manifest: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    out = ds.augment_dataset(manifest, base, args.out, args.level, seed=args.seed)
    print(f"wrote {len(out['samples'])} augmented samples to {args.out}")
    return EXIT_OK


def _cmd_split(args) -> int:
    try:
        manifest, _ = ds.load_manifest(args.manifest)
        mode = {"loso": "leave_one_subject_out",
                "kfold": "k_fold"}[args.mode]
        spec = ds.make_folds(manifest, mode=mode, k=args.k,
                             val_fraction=args.val_fraction, seed=args.seed)
    except (OSError, ValueError, KeyError) as e:
        print(f"bad split request: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    out = Path(args.out) if args.out else Path(args.manifest).parent / "folds.json"
    out.write_text(spec.to_json())
    print(f"wrote {len(spec.folds)} folds to {out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    try:
        manifest, base = ds.load_manifest(args.gt)
    except (OSError, ValueError) as e:
        print(f"bad manifest: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = ds.evaluate_predictions(manifest, base, args.pred,
                                         phi_target=args.activation)
    except ds.DatasetError as e:
        print(f"evaluation failed: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    with open(out_dir / "metrics.json", "w") as f:
        json.dump(result["report"], f, indent=1)
    if result["curve"] is not None:
        ds.write_curve_csv(out_dir / "landmark_curve.csv", result["curve"])
        ds.write_curve_svg(out_dir / "landmark_curve.svg", result["curve"])
    print(f"wrote evaluation report to {out_dir}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        manifest, base = ds.load_manifest(args.manifest)
    except (OSError, ValueError) as e:
        print(f"bad manifest: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    report = ds.validate(manifest, base)
    for v in report["violations"]:
        print(f"violation: {v}")
    print(f"{report['n_samples']} samples, {len(report['violations'])} violations")
    return EXIT_OK if not report["violations"] else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="synthex-forge",
                                 description=__doc__.strip().splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a labeled synthetic dataset")
    g.add_argument("--config", required=True, help="GenerationConfig JSON")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None,
                   help="override the config master seed")
    g.set_defaults(func=_cmd_generate)

    a = sub.add_parser("augment", help="write augmented dataset copies + plan logs")
    a.add_argument("--manifest", required=True)
    a.add_argument("--level", choices=["regular", "strong"], default="strong")
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=_cmd_augment)

    s = sub.add_parser("split", help="build cross-validation folds")
    s.add_argument("--manifest", required=True)
    s.add_argument("--mode", choices=["loso", "kfold"], default="loso")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--val-fraction", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_split)

    e = sub.add_parser("evaluate", help="score predictions against ground truth")
    e.add_argument("--pred", required=True, help="prediction directory")
    e.add_argument("--gt", required=True, help="ground-truth manifest.json")
    e.add_argument("--out", required=True, help="report directory")
    e.add_argument("--activation", type=float, default=0.9,
                   help="activation fraction for the headline number")
    e.set_defaults(func=_cmd_evaluate)

    v = sub.add_parser("validate", help="check manifest invariants and files")
    v.add_argument("--manifest", required=True)
    v.set_defaults(func=_cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
