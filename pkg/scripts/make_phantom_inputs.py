#!/usr/bin/env python3
"""Write the sphere/box phantom to disk as volume/labels/landmarks files and
emit a ready-to-run generation config referencing them.

Usage:
  python scripts/make_phantom_inputs.py --out inputs/
  synthex-forge generate --config inputs/generation_config.json --out dataset/
"""

import argparse
import json
from pathlib import Path

from synthex_forge.phantoms import sphere_box_phantom
from synthex_forge.volume import save_label_volume, save_landmarks, save_volume


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="inputs")
    ap.add_argument("--subjects", type=int, default=2)
    ap.add_argument("--n-samples", type=int, default=50)
    ap.add_argument("--simulator", default="realistic",
                    choices=["naive", "heuristic", "realistic"])
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vol, lv, lm = sphere_box_phantom()
    entries = []
    for i in range(args.subjects):
        stem = f"subj{i}"
        save_volume(vol, out / f"{stem}_ct.json")
        save_label_volume(lv, out / f"{stem}_labels.json")
        save_landmarks(lm, out / f"{stem}_landmarks.json")
        entries.append({
            "volume": f"{stem}_ct.json",
            "labels": f"{stem}_labels.json",
            "landmarks": f"{stem}_landmarks.json",
            "subject_id": stem,
        })

    config = {
        "inputs": entries,
        "n_samples": args.n_samples,
        "n_val": max(args.n_samples // 10, 1),
        "task": "hip",
        "sampler_overrides": {},
        "simulator": args.simulator,
        "resolution": 360,
        "heatmap_sigma_px": None,
        "step_mm": None,
        "seed": 0,
        "bone_dark": False,
        "air_threshold_hu": -300.0,
        "min_path_mm": 1.0,
        "physics_overrides": {},
        "save_float_raw": False,
    }
    with open(out / "generation_config.json", "w") as f:
        json.dump(config, f, indent=1)
    print(f"wrote {args.subjects} phantom subject(s) and "
          f"{out / 'generation_config.json'}")


if __name__ == "__main__":
    main()
