import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from synthex_forge import dataset as ds
from synthex_forge.cli import main as cli_main


def tree_hashes(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def tiny_config(n_subjects=2, n_samples=6, **over):
    cfg = dict(
        inputs=tuple({"builtin": "sphere_box", "subject_id": f"subj{i}"}
                     for i in range(n_subjects)),
        n_samples=n_samples,
        task="hip",
        simulator="naive",
        resolution=64,
        step_mm=2.0,
        seed=7,
    )
    cfg.update(over)
    return ds.GenerationConfig(**cfg)


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("dataset")
    manifest = ds.generate(tiny_config(), out)
    return manifest, out


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def test_generate_writes_all_files(generated):
    manifest, out = generated
    assert len(manifest["samples"]) == 6
    for s in manifest["samples"]:
        for key in ("image_png", "seg_png", "heatmaps_raw", "meta_json"):
            assert (out / s[key]).exists()
    assert (out / "poses.jsonl").exists()
    assert (out / "manifest.json").exists()


def test_generate_deterministic(tmp_path):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    ds.generate(tiny_config(), a_dir)
    ds.generate(tiny_config(), b_dir)
    assert tree_hashes(a_dir) == tree_hashes(b_dir)


def test_generate_different_seed_differs(tmp_path):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    ds.generate(tiny_config(), a_dir)
    ds.generate(tiny_config(seed=8), b_dir)
    assert tree_hashes(a_dir) != tree_hashes(b_dir)


def test_generated_pose_log_respects_hip_ranges(generated):
    from synthex_forge.geometry import matrix_to_euler_xyz, read_pose_log
    _, out = generated
    for pose in read_pose_log(out / "poses.jsonl"):
        angles = matrix_to_euler_xyz(pose.pose.rotation)
        assert np.all(np.abs(angles) <= 45.0 + 1e-9)
        t = pose.pose.translation
        assert abs(t[0]) <= 50 and abs(t[1]) <= 20 and abs(t[2]) <= 100


def test_image_roundtrip_16bit(tmp_path):
    img = np.random.default_rng(0).random((32, 32))
    ds.write_image_png16(tmp_path / "x.png", img)
    back = ds.read_image_png16(tmp_path / "x.png")
    assert np.max(np.abs(back - img)) <= 0.5 / 65535 + 1e-9


def test_config_json_roundtrip():
    cfg = tiny_config()
    back = ds.GenerationConfig.from_json(cfg.to_json())
    assert back == cfg


def test_val_samples_use_disjoint_stream(tmp_path):
    cfg = tiny_config(n_samples=4, n_val=2)
    manifest = ds.generate(cfg, tmp_path / "d")
    splits = [s["split"] for s in manifest["samples"]]
    assert splits == ["train"] * 4 + ["val"] * 2
    seeds = [s["seed"] for s in manifest["samples"]]
    assert len(set(seeds)) == len(seeds)


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------

def synthetic_manifest(n_subjects=6, per_subject=3):
    samples = [
        {"id": f"s{i}_{j}", "subject_id": f"subj{i}"}
        for i in range(n_subjects) for j in range(per_subject)
    ]
    return {"format": ds.MANIFEST_FORMAT, "samples": samples}


def test_loso_six_subjects():
    m = synthetic_manifest(6)
    spec = ds.make_folds(m, mode="leave_one_subject_out")
    assert len(spec.folds) == 6
    for fold in spec.folds:
        test_ids = {i for i, r in fold["assignments"].items() if r == "test"}
        test_subjects = {i.split("_")[0][1:] for i in test_ids}
        assert len(fold["test_subjects"]) == 1
        # exactly one subject's samples form the test set
        subj = fold["test_subjects"][0]
        expected = {s["id"] for s in m["samples"] if s["subject_id"] == subj}
        assert test_ids == expected


def test_loso_no_subject_leakage():
    m = synthetic_manifest(6)
    spec = ds.make_folds(m, mode="leave_one_subject_out")
    by_id = {s["id"]: s["subject_id"] for s in m["samples"]}
    for fold in spec.folds:
        roles = {}
        for sid, role in fold["assignments"].items():
            roles.setdefault(by_id[sid], set()).add(role)
        for subject, r in roles.items():
            assert not ({"test"} & r and ({"train", "val"} & r)), subject


def test_folds_partition_samples():
    m = synthetic_manifest(5, 4)
    spec = ds.make_folds(m, mode="k_fold", k=5)
    all_ids = {s["id"] for s in m["samples"]}
    test_seen = []
    for fold in spec.folds:
        assert set(fold["assignments"]) == all_ids
        test_seen.extend(i for i, r in fold["assignments"].items() if r == "test")
    assert sorted(test_seen) == sorted(all_ids)   # each sample tests exactly once


def test_kfold_each_subject_tests_once():
    m = synthetic_manifest(10, 2)
    spec = ds.make_folds(m, mode="k_fold", k=5)
    seen = []
    for fold in spec.folds:
        seen.extend(fold["test_subjects"])
    assert sorted(seen) == sorted({s["subject_id"] for s in m["samples"]})


def test_single_subject_loso_rejected():
    with pytest.raises(ds.DatasetError):
        ds.make_folds(synthetic_manifest(1), mode="leave_one_subject_out")


def test_too_many_folds_rejected():
    with pytest.raises(ds.DatasetError):
        ds.make_folds(synthetic_manifest(3), mode="k_fold", k=5)


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def test_validate_fresh_dataset(generated):
    manifest, out = generated
    report = ds.validate(manifest, out)
    assert report["violations"] == []


def test_validate_detects_missing_file(tmp_path):
    out = tmp_path / "d"
    manifest = ds.generate(tiny_config(n_samples=2), out)
    (out / manifest["samples"][0]["image_png"]).unlink()
    report = ds.validate(manifest, out)
    assert len(report["violations"]) == 1
    assert "missing file" in report["violations"][0]


def test_validate_detects_duplicate_ids(generated):
    manifest, out = generated
    bad = json.loads(json.dumps(manifest))
    bad["samples"].append(bad["samples"][0])
    report = ds.validate(bad, out)
    assert any("duplicate" in v for v in report["violations"])


# ---------------------------------------------------------------------------
# augment + evaluate round trip
# ---------------------------------------------------------------------------

def test_augment_dataset_writes_plans(tmp_path, generated):
    manifest, base = generated
    out = ds.augment_dataset(manifest, base, tmp_path / "aug", "strong", seed=1)
    assert len(out["samples"]) == len(manifest["samples"])
    for s in out["samples"]:
        assert (tmp_path / "aug" / s["plan_json"]).exists()
        assert (tmp_path / "aug" / s["image_png"]).exists()
    # plans replay bit-identically
    from synthex_forge.augment import AugmentationPlan, apply, plan_from_seed
    s0 = out["samples"][0]
    plan = AugmentationPlan.from_json((tmp_path / "aug" / s0["plan_json"]).read_text())
    img = ds.read_image_png16(base / manifest["samples"][0]["image_png"])
    a = apply(img, plan).image
    b = apply(img, plan).image
    assert np.array_equal(a, b)


def test_evaluate_perfect_predictions(tmp_path, generated):
    manifest, base = generated
    pred = tmp_path / "pred"
    for s in manifest["samples"]:
        seg = ds.read_seg_png(base / s["seg_png"])
        hm = ds.read_heatmaps_raw(base / s["heatmaps_raw"],
                                  len(manifest["landmark_names"]),
                                  (manifest["resolution"],) * 2)
        ds.write_predictions(pred, s["id"], seg, hm)
    result = ds.evaluate_predictions(manifest, base, pred)
    rep = result["report"]
    for stats in rep["dice"].values():
        assert stats["mean"] == 1.0
    assert rep["confusion"]["accuracy"] == 1.0
    at = rep["landmark"]["report_at_target"]
    # argmax decoding quantizes to integer pixels; float gt positions leave
    # at most half a pixel diagonal of localization error
    mm_per_px = rep["landmark"]["mm_per_px"]
    assert at is not None and at["e_mm"] <= mm_per_px * np.sqrt(2) / 2 + 1e-9


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_end_to_end(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(tiny_config(n_subjects=3, n_samples=6).to_json())
    out = tmp_path / "ds"

    assert cli_main(["generate", "--config", str(cfg_path),
                     "--out", str(out)]) == 0
    assert cli_main(["validate", "--manifest", str(out / "manifest.json")]) == 0
    assert cli_main(["split", "--manifest", str(out / "manifest.json"),
                     "--mode", "loso"]) == 0
    folds = json.loads((out / "folds.json").read_text())
    assert len(folds["folds"]) == 3

    aug = tmp_path / "aug"
    assert cli_main(["augment", "--manifest", str(out / "manifest.json"),
                     "--level", "strong", "--out", str(aug)]) == 0
    assert cli_main(["validate", "--manifest", str(aug / "manifest.json")]) == 0

    # self-evaluation with the ground truth as predictions
    manifest, base = ds.load_manifest(out / "manifest.json")
    pred = tmp_path / "pred"
    for s in manifest["samples"]:
        ds.write_predictions(
            pred, s["id"], ds.read_seg_png(base / s["seg_png"]),
            ds.read_heatmaps_raw(base / s["heatmaps_raw"],
                                 len(manifest["landmark_names"]),
                                 (manifest["resolution"],) * 2))
    report_dir = tmp_path / "report"
    assert cli_main(["evaluate", "--pred", str(pred),
                     "--gt", str(out / "manifest.json"),
                     "--out", str(report_dir)]) == 0
    assert (report_dir / "metrics.json").exists()
    assert (report_dir / "landmark_curve.csv").exists()
    assert (report_dir / "landmark_curve.svg").exists()
    header = (report_dir / "landmark_curve.csv").read_text().splitlines()[0]
    assert header == "phi,p,e_ld_mm"


def test_cli_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"inputs\": []}")
    assert cli_main(["generate", "--config", str(bad),
                     "--out", str(tmp_path / "x")]) == 2


def test_cli_validation_failure_exit_code(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(tiny_config(n_samples=2).to_json())
    out = tmp_path / "ds"
    assert cli_main(["generate", "--config", str(cfg_path), "--out", str(out)]) == 0
    manifest, _ = ds.load_manifest(out / "manifest.json")
    (out / manifest["samples"][0]["seg_png"]).unlink()
    assert cli_main(["validate", "--manifest", str(out / "manifest.json")]) == 1
