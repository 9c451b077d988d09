"""Dataset manifests, end-to-end sample generation, fold construction, and
prediction/report I/O shared with the evaluation CLI.

A dataset is a directory: ``manifest.json`` (relative paths only, so datasets
can be moved), ``poses.jsonl`` (exact re-render log), and per-sample payload
files (16-bit PNG image, 8-bit PNG seg mask, float32 heatmap stack, JSON
metadata).  Generation is deterministic for a given master seed: per-sample
seeds come from spawned substreams, and validation samples use a stream
disjoint from training samples.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import augment as augment_mod
from .geometry import (
    PoseSampler,
    PoseSamplerConfig,
    default_carm,
    geometry_for_pose,
    read_pose_log,
    write_pose_log,
)
from .labels2d import decode_heatmap, encode_heatmap
from .phantoms import sphere_box_phantom
from .physics import PhysicsConfig
from .projector import render_sample
from .volume import load_label_volume, load_landmarks, load_volume

MANIFEST_FORMAT = "synthex-manifest-v1"


class DatasetError(ValueError):
    pass


def default_heatmap_sigma(resolution: int) -> float:
    """6 px at 360x360, scaled proportionally with resolution."""
    return 6.0 * resolution / 360.0


# ---------------------------------------------------------------------------
# sample payload I/O
# ---------------------------------------------------------------------------

def write_image_png16(path, img) -> None:
    arr = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(arr).save(path)


def read_image_png16(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float64) / 65535.0


def write_seg_png(path, seg) -> None:
    Image.fromarray(np.asarray(seg, dtype=np.uint8), mode="L").save(path)


def read_seg_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.uint8)


def write_heatmaps_raw(path, heatmaps) -> None:
    np.asarray(heatmaps, dtype="<f4").tofile(path)


def read_heatmaps_raw(path, n_landmarks: int, dims: tuple[int, int]) -> np.ndarray:
    w, h = dims
    data = np.fromfile(path, dtype="<f4")
    expected = n_landmarks * h * w
    if data.size != expected:
        raise DatasetError(f"{path}: expected {expected} floats, got {data.size}")
    return data.reshape(n_landmarks, h, w)


# ---------------------------------------------------------------------------
# generation config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationConfig:
    """Everything `generate` needs; serializes to the CLI's JSON config."""

    inputs: tuple            # dicts: {volume,labels,landmarks,subject_id} or {builtin,subject_id}
    n_samples: int = 10
    n_val: int = 0
    task: str = "hip"
    sampler_overrides: dict = field(default_factory=dict)
    simulator: str = "naive"
    resolution: int = 360
    heatmap_sigma_px: float | None = None
    step_mm: float | None = None
    seed: int = 0
    bone_dark: bool = False
    air_threshold_hu: float = -300.0
    min_path_mm: float = 1.0
    physics_overrides: dict = field(default_factory=dict)
    save_float_raw: bool = False

    def __post_init__(self):
        if self.n_samples <= 0 or self.n_val < 0:
            raise DatasetError("sample counts must be positive")
        if not self.inputs:
            raise DatasetError("at least one input volume is required")

    def sigma(self) -> float:
        if self.heatmap_sigma_px is not None:
            return self.heatmap_sigma_px
        return default_heatmap_sigma(self.resolution)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1)

    @staticmethod
    def from_json(text: str) -> "GenerationConfig":
        d = json.loads(text)
        d["inputs"] = tuple(d["inputs"])
        return GenerationConfig(**d)


def _load_input(entry: dict, base_dir: Path):
    subject = entry.get("subject_id")
    if subject is None:
        raise DatasetError(f"input entry missing subject_id: {entry}")
    if "builtin" in entry:
        if entry["builtin"] != "sphere_box":
            raise DatasetError(f"unknown builtin phantom {entry['builtin']!r}")
        vol, lv, lm = sphere_box_phantom()
        return subject, vol, lv, lm
    vol = load_volume(base_dir / entry["volume"])
    lv = load_label_volume(base_dir / entry["labels"]) if entry.get("labels") else None
    lm = load_landmarks(base_dir / entry["landmarks"]) if entry.get("landmarks") else None
    if lv is not None and not lv.geometry_matches(vol):
        raise DatasetError(f"label volume geometry mismatch for {subject}")
    return subject, vol, lv, lm


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def generate(config: GenerationConfig, out_dir, base_dir=".") -> dict:
    """Render the dataset and write manifest + payload files.

    Returns the manifest dict (also written to ``out_dir/manifest.json``).
    """
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    inputs = [_load_input(e, Path(base_dir)) for e in config.inputs]

    camera = default_carm().at_resolution(config.resolution)
    sampler_cfg = PoseSamplerConfig(task=config.task, seed=config.seed,
                                    **config.sampler_overrides)
    phys = PhysicsConfig(**config.physics_overrides) \
        if config.physics_overrides else PhysicsConfig()

    # disjoint streams: poses, per-sample seeds, validation per-sample seeds
    root = np.random.SeedSequence(config.seed)
    pose_seed, train_seed, val_seed = root.spawn(3)
    pose_rng = np.random.default_rng(pose_seed)
    train_rng = np.random.default_rng(train_seed)
    val_rng = np.random.default_rng(val_seed)
    pose_sampler = PoseSampler(sampler_cfg)
    pose_sampler.rng = pose_rng

    sigma = config.sigma()
    n_total = config.n_samples + config.n_val
    landmark_names = None
    records = []
    poses = []
    for idx in range(n_total):
        split = "train" if idx < config.n_samples else "val"
        stream = train_rng if split == "train" else val_rng
        sample_seed = int(stream.integers(0, 2**63 - 1))
        subject, vol, lv, lm = inputs[idx % len(inputs)]

        pose = pose_sampler.sample()
        poses.append(pose)
        geom = geometry_for_pose(camera, pose)
        warp = None
        if pose.shear is not None:
            # rigid part lives in the geometry; shear stays a volume warp
            warp = (pose.shear, np.zeros(3))
        sample = render_sample(
            vol, geom, config.simulator, label_volume=lv, landmarks=lm,
            heatmap_sigma_px=sigma, phys=phys, seed=sample_seed,
            step_mm=config.step_mm, world_warp=warp,
            air_threshold_hu=config.air_threshold_hu,
            min_path_mm=config.min_path_mm, bone_dark=config.bone_dark,
        )
        if landmark_names is None:
            landmark_names = sample.meta["landmark_names"]
        elif landmark_names != sample.meta["landmark_names"]:
            raise DatasetError("landmark order differs between samples")

        sid = f"s{idx:04d}"
        rel = {
            "image_png": f"samples/{sid}_image.png",
            "seg_png": f"samples/{sid}_seg.png",
            "heatmaps_raw": f"samples/{sid}_heatmaps.raw",
            "meta_json": f"samples/{sid}.json",
        }
        write_image_png16(out_dir / rel["image_png"], sample.image)
        write_seg_png(out_dir / rel["seg_png"], sample.seg_mask)
        write_heatmaps_raw(out_dir / rel["heatmaps_raw"], sample.heatmaps)
        if config.save_float_raw:
            rel["image_raw"] = f"samples/{sid}_image.raw"
            sample.image.astype("<f4").tofile(out_dir / rel["image_raw"])

        meta = {
            "id": sid,
            "subject_id": subject,
            "split": split,
            "simulator": config.simulator,
            "seed": sample_seed,
            "pose": {
                "rotation": [float(x) for x in pose.pose.rotation.ravel()],
                "translation_mm": [float(x) for x in pose.pose.translation],
                "shear": None if pose.shear is None
                         else [float(x) for x in pose.shear.ravel()],
            },
            "heatmap_sigma_px": sigma,
            "resolution": config.resolution,
            "landmarks": [
                {"name": name,
                 "pixel": None if px is None else [float(px[0]), float(px[1])],
                 "visible": px is not None}
                for name, px in zip(landmark_names, sample.landmark_px)
            ],
        }
        with open(out_dir / rel["meta_json"], "w") as f:
            json.dump(meta, f, indent=1)

        records.append({
            "id": sid, "subject_id": subject, "split": split,
            "simulator": config.simulator, "seed": sample_seed,
            "pose_index": idx, **rel,
        })

    write_pose_log(out_dir / "poses.jsonl", poses, seed=config.seed)
    first_lv = next((lv for _, _, lv, _ in inputs if lv is not None), None)
    manifest = {
        "format": MANIFEST_FORMAT,
        "master_seed": config.seed,
        "resolution": config.resolution,
        "heatmap_sigma_px": sigma,
        "landmark_names": landmark_names or [],
        "class_names": {str(k): v for k, v in
                        (first_lv.class_names if first_lv else {}).items()},
        "pose_log": "poses.jsonl",
        "config": json.loads(config.to_json()),
        "samples": records,
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def load_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise DatasetError(f"unsupported manifest format {manifest.get('format')!r}")
    return manifest, path.parent


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------

FOLD_MODES = ("leave_one_subject_out", "k_fold")


@dataclass(frozen=True)
class FoldSpec:
    mode: str
    folds: tuple   # dicts: {"fold": i, "test_subjects": [...], "assignments": {id: role}}

    def to_json(self) -> str:
        return json.dumps({"mode": self.mode, "folds": list(self.folds)}, indent=1)


def make_folds(manifest: dict, mode: str = "leave_one_subject_out",
               k: int | None = None, val_fraction: float = 0.1,
               seed: int = 0) -> FoldSpec:
    """Build cross-validation folds that never split a subject across
    train and test of the same fold."""
    if mode not in FOLD_MODES:
        raise DatasetError(f"unknown fold mode {mode!r}")
    samples = manifest["samples"]
    subjects = sorted({s["subject_id"] for s in samples})
    if mode == "leave_one_subject_out":
        groups = [[s] for s in subjects]
        if len(groups) < 2:
            raise DatasetError("leave-one-subject-out needs at least 2 subjects")
    else:
        if k is None or k < 2:
            raise DatasetError("k_fold requires k >= 2")
        if k > len(subjects):
            raise DatasetError(f"cannot build {k} folds from {len(subjects)} subjects")
        groups = [list(subjects[i::k]) for i in range(k)]

    rng = np.random.default_rng(seed)
    folds = []
    for i, test_subjects in enumerate(groups):
        test_set = set(test_subjects)
        assignments = {}
        train_ids = [s["id"] for s in samples if s["subject_id"] not in test_set]
        n_val = int(round(val_fraction * len(train_ids)))
        val_ids = set(rng.choice(train_ids, size=n_val, replace=False).tolist()) \
            if n_val else set()
        for s in samples:
            if s["subject_id"] in test_set:
                assignments[s["id"]] = "test"
            elif s["id"] in val_ids:
                assignments[s["id"]] = "val"
            else:
                assignments[s["id"]] = "train"
        folds.append({"fold": i, "test_subjects": list(test_subjects),
                      "assignments": assignments})
    return FoldSpec(mode=mode, folds=tuple(folds))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate(manifest: dict, base_dir) -> dict:
    """Check manifest invariants and file presence; returns a violations report."""
    base_dir = Path(base_dir)
    violations = []
    samples = manifest.get("samples", [])

    ids = [s["id"] for s in samples]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        violations.append(f"duplicate sample id {dup!r}")

    names = manifest.get("landmark_names", [])
    pose_log = manifest.get("pose_log")
    if pose_log and not (base_dir / pose_log).exists():
        violations.append(f"missing pose log {pose_log}")

    for s in samples:
        for key in ("image_png", "seg_png", "heatmaps_raw", "meta_json"):
            rel = s.get(key)
            if rel is None:
                violations.append(f"{s['id']}: missing field {key}")
            elif not (base_dir / rel).exists():
                violations.append(f"{s['id']}: missing file {rel}")
        meta_rel = s.get("meta_json")
        if meta_rel and (base_dir / meta_rel).exists():
            with open(base_dir / meta_rel) as f:
                meta = json.load(f)
            meta_names = [l["name"] for l in meta.get("landmarks", [])]
            if meta_names != list(names):
                violations.append(f"{s['id']}: landmark order mismatch")
    return {"n_samples": len(samples), "violations": violations}


# ---------------------------------------------------------------------------
# predictions + evaluation report
# ---------------------------------------------------------------------------

def write_predictions(pred_dir, sample_id: str, seg, heatmaps) -> None:
    """The exact format `evaluate` consumes (training harnesses emit this)."""
    pred_dir = Path(pred_dir)
    pred_dir.mkdir(parents=True, exist_ok=True)
    write_seg_png(pred_dir / f"{sample_id}_seg.png", seg)
    write_heatmaps_raw(pred_dir / f"{sample_id}_heatmaps.raw", heatmaps)


def load_gt_landmarks(manifest: dict, base_dir: Path):
    """Per-sample (x, y) or None ground-truth landmark pixels."""
    gts = []
    for s in manifest["samples"]:
        with open(base_dir / s["meta_json"]) as f:
            meta = json.load(f)
        gts.append([
            None if not l["visible"] else (float(l["pixel"][0]), float(l["pixel"][1]))
            for l in meta["landmarks"]
        ])
    return gts


def evaluate_predictions(manifest: dict, base_dir, pred_dir,
                         phi_target: float = 0.9) -> dict:
    """Score a prediction directory against dataset ground truth."""
    from .metrics import confusion, detector_mm_per_px, dice, landmark_curve, summarize

    base_dir = Path(base_dir)
    pred_dir = Path(pred_dir)
    names = manifest["landmark_names"]
    res = manifest["resolution"]
    class_names = {int(k): v for k, v in manifest.get("class_names", {}).items()}

    dice_per_class = {c: [] for c in class_names}
    counts = np.zeros(4, dtype=np.int64)   # tp fp fn tn
    preds_lm, gts_lm = [], []
    gt_all = load_gt_landmarks(manifest, base_dir)

    for s, gt_px in zip(manifest["samples"], gt_all):
        gt_seg = read_seg_png(base_dir / s["seg_png"])
        pred_seg_path = pred_dir / f"{s['id']}_seg.png"
        pred_hm_path = pred_dir / f"{s['id']}_heatmaps.raw"
        if not pred_seg_path.exists() or not pred_hm_path.exists():
            raise DatasetError(f"missing predictions for sample {s['id']}")
        pred_seg = read_seg_png(pred_seg_path)
        for c in class_names:
            dice_per_class[c].append(dice(pred_seg, gt_seg, c))
        cs = confusion(pred_seg > 0, gt_seg > 0)
        counts += (cs.tp, cs.fp, cs.fn, cs.tn)
        if names:
            hm = read_heatmaps_raw(pred_hm_path, len(names), (res, res))
            preds_lm.append([decode_heatmap(np.clip(h, 0.0, 1.0)) for h in hm])
            gts_lm.append(gt_px)

    from .metrics import ConfusionStats
    total_conf = ConfusionStats(*[int(x) for x in counts])
    report = {
        "n_samples": len(manifest["samples"]),
        "dice": {
            class_names[c]: dict(zip(("mean", "std"), summarize(v)))
            for c, v in dice_per_class.items() if v
        },
        "confusion": total_conf.as_dict(),
    }
    curve = None
    if names and any(g is not None for gi in gts_lm for g in gi):
        mm_per_px = detector_mm_per_px(res)
        curve = landmark_curve(preds_lm, gts_lm, mm_per_px)
        at = curve.report_at(phi_target)
        report["landmark"] = {
            "mm_per_px": mm_per_px,
            "report_target_p": phi_target,
            "report_at_target": None if at is None else
                dict(zip(("phi", "p", "e_mm"), at)),
        }
    return {"report": report, "curve": curve}


def write_curve_csv(path, curve) -> None:
    with open(path, "w") as f:
        f.write("phi,p,e_ld_mm\n")
        for phi, p, e in zip(curve.phi, curve.p, curve.e_mm):
            f.write(f"{phi:.6g},{p:.6g},{'' if np.isnan(e) else f'{e:.6g}'}\n")


def write_curve_svg(path, curve) -> None:
    """Error vs activation plot; ideal curves approach the bottom right."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ok = ~np.isnan(curve.e_mm)
    ax.plot(curve.p[ok] * 100.0, curve.e_mm[ok], "-o", markersize=2.5)
    ax.set_xlabel("activated landmarks (%)")
    ax.set_ylabel("mean landmark error (mm)")
    ax.set_xlim(0, 100)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# dataset augmentation (offline copies + plan logs)
# ---------------------------------------------------------------------------

def augment_dataset(manifest: dict, base_dir, out_dir, level: str,
                    seed: int = 0) -> dict:
    """Write an augmented copy of every sample plus its replayable plan."""
    base_dir = Path(base_dir)
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    (out_dir / "plans").mkdir(parents=True, exist_ok=True)

    sigma = manifest["heatmap_sigma_px"]
    names = manifest["landmark_names"]
    res = manifest["resolution"]
    ss = np.random.SeedSequence(seed)
    records = []
    for s, child in zip(manifest["samples"], ss.spawn(len(manifest["samples"]))):
        img = read_image_png16(base_dir / s["image_png"])
        seg = read_seg_png(base_dir / s["seg_png"])
        with open(base_dir / s["meta_json"]) as f:
            meta = json.load(f)
        lms = [None if not l["visible"] else tuple(l["pixel"])
               for l in meta["landmarks"]]

        plan_seed = int(np.random.default_rng(child).integers(0, 2**31 - 1))
        p = augment_mod.plan_from_seed(level, plan_seed)
        out = augment_mod.apply(img, p, seg=seg, landmark_px=lms)
        heatmaps = np.stack([
            encode_heatmap(px, (res, res), sigma) for px in out.landmark_px
        ]) if names else np.zeros((0, res, res), np.float32)

        sid = s["id"]
        rel = {
            "image_png": f"samples/{sid}_image.png",
            "seg_png": f"samples/{sid}_seg.png",
            "heatmaps_raw": f"samples/{sid}_heatmaps.raw",
            "meta_json": f"samples/{sid}.json",
            "plan_json": f"plans/{sid}_plan.json",
        }
        write_image_png16(out_dir / rel["image_png"], out.image)
        write_seg_png(out_dir / rel["seg_png"],
                      out.seg if out.seg is not None else seg)
        write_heatmaps_raw(out_dir / rel["heatmaps_raw"], heatmaps)
        with open(out_dir / rel["plan_json"], "w") as f:
            f.write(p.to_json())
        meta = dict(meta)
        meta["landmarks"] = [
            {"name": n,
             "pixel": None if px is None else [float(px[0]), float(px[1])],
             "visible": px is not None}
            for n, px in zip(names, out.landmark_px)
        ]
        meta["augmented"] = {"level": level, "plan_seed": plan_seed}
        with open(out_dir / rel["meta_json"], "w") as f:
            json.dump(meta, f, indent=1)
        records.append({**{k: s[k] for k in
                           ("id", "subject_id", "split", "simulator", "seed")},
                        **rel})

    out_manifest = {
        "format": MANIFEST_FORMAT,
        "master_seed": manifest["master_seed"],
        "resolution": res,
        "heatmap_sigma_px": sigma,
        "landmark_names": names,
        "class_names": manifest.get("class_names", {}),
        "pose_log": None,
        "augmented_from": {"level": level, "seed": seed},
        "config": manifest.get("config"),
        "samples": records,
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(out_manifest, f, indent=1)
    return out_manifest
