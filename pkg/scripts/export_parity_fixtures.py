#!/usr/bin/env python3
"""Export loss-parity fixtures and a tiny training dataset for downstream
training harnesses.

Writes:
  <out>/parity/            seg-mask and heatmap pairs + reference.json with
                           the reference Dice / heatmap-MSE values
  <out>/tiny_dataset/      5-sample 64x64 phantom dataset (manifest format)

Training-side losses are expected to reproduce the reference values within
1e-6 (soft Dice on one-hot masks equals hard Dice exactly).
"""

import argparse
import json
from pathlib import Path

import numpy as np

from synthex_forge import dataset as ds
from synthex_forge.labels2d import encode_heatmap, mse_heatmap_loss
from synthex_forge.metrics import dice


def export_parity(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(2718)
    cases = []
    for i in range(6):
        h = w = 48
        n_classes = 3
        gt = rng.integers(0, n_classes, (h, w)).astype(np.uint8)
        pred = gt.copy()
        flip = rng.random((h, w)) < 0.15
        pred[flip] = rng.integers(0, n_classes, int(flip.sum())).astype(np.uint8)

        gt_hm = np.stack([
            encode_heatmap((int(rng.integers(0, w)), int(rng.integers(0, h))),
                           (w, h), sigma_px=4.0)
            for _ in range(3)
        ])
        pred_hm = np.clip(gt_hm + rng.normal(0, 0.05, gt_hm.shape), 0, 1) \
            .astype(np.float32)

        case = {
            "pred_seg": f"case{i}_pred_seg.png",
            "gt_seg": f"case{i}_gt_seg.png",
            "pred_heatmaps": f"case{i}_pred_hm.raw",
            "gt_heatmaps": f"case{i}_gt_hm.raw",
            "dims": [h, w],
            "n_classes": n_classes,
            "n_landmarks": 3,
            "dice_per_class": {
                str(c): dice(pred, gt, c) for c in range(n_classes)
            },
            "heatmap_mse": mse_heatmap_loss(pred_hm, gt_hm),
        }
        ds.write_seg_png(out / case["pred_seg"], pred)
        ds.write_seg_png(out / case["gt_seg"], gt)
        ds.write_heatmaps_raw(out / case["pred_heatmaps"], pred_hm)
        ds.write_heatmaps_raw(out / case["gt_heatmaps"], gt_hm)
        cases.append(case)
    with open(out / "reference.json", "w") as f:
        json.dump({"cases": cases}, f, indent=1)
    print(f"wrote {len(cases)} parity cases to {out}")


def export_tiny_dataset(out: Path) -> None:
    cfg = ds.GenerationConfig(
        inputs=({"builtin": "sphere_box", "subject_id": "subj0"},),
        n_samples=5, task="hip", simulator="heuristic",
        resolution=64, step_mm=2.0, seed=99,
    )
    manifest = ds.generate(cfg, out)
    print(f"wrote tiny dataset ({len(manifest['samples'])} samples) to {out}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    out = Path(args.out)
    export_parity(out / "parity")
    export_tiny_dataset(out / "tiny_dataset")


if __name__ == "__main__":
    main()
