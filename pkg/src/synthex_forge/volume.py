"""CT volumes in Hounsfield Units, voxel label volumes, and 3D landmarks.

On-disk format is a JSON sidecar next to a little-endian raw voxel file
(same stem, ``.raw`` extension).  The sidecar pins dims, spacing, origin,
orientation, dtype and scan order so mismatched writers fail loudly instead
of producing silently garbled volumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VOLUME_FORMAT = "synthex-vol-v1"
SCAN_ORDER = "x-fastest"

# CT scanners clamp differently; values outside this window get a warning,
# not an error.
DEFAULT_HU_WINDOW = (-1024.0, 3071.0)


class VolumeError(ValueError):
    """Raised for malformed volume files or invariant violations."""


def _check_orientation(orientation: np.ndarray, tol: float = 1e-6) -> None:
    if orientation.shape != (3, 3):
        raise VolumeError(f"orientation must be 3x3, got {orientation.shape}")
    if not np.allclose(orientation @ orientation.T, np.eye(3), atol=tol):
        raise VolumeError("orientation is not orthonormal")
    if abs(np.linalg.det(orientation) - 1.0) > tol:
        raise VolumeError("orientation determinant is not +1")


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid in HU with voxel-to-world geometry.

    ``voxels`` is indexed ``[i, j, k]`` for the x/y/z voxel axes; scan order
    on disk is x-fastest.  Immutable after construction; safe to share across
    workers.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]   # mm/voxel
    origin: tuple[float, float, float]    # world mm of voxel (0,0,0) center
    orientation: np.ndarray               # 3x3, voxel axes -> world
    voxels: np.ndarray                    # float32, shape dims

    def __post_init__(self):
        if any(d < 1 for d in self.dims):
            raise VolumeError(f"bad dims {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise VolumeError(f"spacing must be positive, got {self.spacing}")
        _check_orientation(np.asarray(self.orientation, dtype=np.float64))
        if self.voxels.shape != tuple(self.dims):
            raise VolumeError(
                f"voxel shape {self.voxels.shape} does not match dims {self.dims}"
            )
        if not np.all(np.isfinite(self.voxels)):
            raise VolumeError("voxels contain non-finite values")

    def index_to_world(self, ijk) -> np.ndarray:
        """World position (mm) of voxel center(s) (i, j, k)."""
        ijk = np.asarray(ijk, dtype=np.float64)
        local = ijk * np.asarray(self.spacing)
        return np.asarray(self.origin) + local @ np.asarray(self.orientation).T

    def center_world(self) -> np.ndarray:
        """World position of the volume's geometric center (voxel-center box)."""
        c = (np.asarray(self.dims, dtype=np.float64) - 1.0) / 2.0
        return self.index_to_world(c)

    @property
    def extent_mm(self) -> np.ndarray:
        """Size of the voxel-center bounding box along each axis (mm)."""
        return (np.asarray(self.dims) - 1.0) * np.asarray(self.spacing)


@dataclass(frozen=True)
class LabelVolume:
    """Per-voxel class ids sharing a parent Volume's geometry. 0 = background."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    orientation: np.ndarray
    labels: np.ndarray                    # uint8, shape dims
    class_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if any(s <= 0 for s in self.spacing):
            raise VolumeError(f"spacing must be positive, got {self.spacing}")
        _check_orientation(np.asarray(self.orientation, dtype=np.float64))
        if self.labels.shape != tuple(self.dims):
            raise VolumeError(
                f"label shape {self.labels.shape} does not match dims {self.dims}"
            )
        present = set(int(v) for v in np.unique(self.labels)) - {0}
        missing = present - set(self.class_names)
        if missing:
            raise VolumeError(f"label ids {sorted(missing)} missing from class_names")
        if 0 in self.class_names:
            raise VolumeError("class id 0 is reserved for background")

    def geometry_matches(self, vol: Volume) -> bool:
        return (
            tuple(self.dims) == tuple(vol.dims)
            and tuple(self.spacing) == tuple(vol.spacing)
            and tuple(self.origin) == tuple(vol.origin)
            and np.array_equal(self.orientation, vol.orientation)
        )


@dataclass(frozen=True)
class LandmarkSet3D:
    """Named world-space points (mm)."""

    entries: tuple[tuple[str, tuple[float, float, float]], ...]

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if len(names) != len(set(names)):
            raise VolumeError("landmark names must be unique")
        for name, pos in self.entries:
            if not np.all(np.isfinite(pos)):
                raise VolumeError(f"landmark {name!r} has non-finite position")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.entries]

    def positions(self) -> np.ndarray:
        return np.array([p for _, p in self.entries], dtype=np.float64).reshape(-1, 3)


def _sidecar_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix == ".raw":
        path = path.with_suffix(".json")
    elif path.suffix != ".json":
        path = path.with_suffix(path.suffix + ".json") if path.suffix else Path(str(path) + ".json")
    return path, path.with_suffix(".raw")


def _read_sidecar(path: Path) -> dict:
    if not path.exists():
        raise VolumeError(f"missing sidecar {path}")
    with open(path) as f:
        meta = json.load(f)
    if meta.get("format") != VOLUME_FORMAT:
        raise VolumeError(f"unsupported format {meta.get('format')!r} in {path}")
    if meta.get("scan_order") != SCAN_ORDER:
        raise VolumeError(f"unsupported scan order {meta.get('scan_order')!r}")
    return meta


def _read_raw(raw_path: Path, dims, dtype) -> np.ndarray:
    if not raw_path.exists():
        raise VolumeError(f"missing raw file {raw_path}")
    data = np.fromfile(raw_path, dtype=dtype)
    n = int(np.prod(dims))
    if data.size != n:
        raise VolumeError(
            f"{raw_path}: expected {n} voxels for dims {list(dims)}, got {data.size}"
        )
    # disk layout is x-fastest: flat index = i + nx*(j + ny*k)
    nx, ny, nz = dims
    return np.ascontiguousarray(data.reshape(nz, ny, nx).transpose(2, 1, 0))


def load_volume(path) -> Volume:
    """Load a Volume from a ``.json`` sidecar + ``.raw`` pair."""
    sidecar, raw = _sidecar_paths(path)
    meta = _read_sidecar(sidecar)
    if meta.get("dtype") != "f32le":
        raise VolumeError(f"expected dtype f32le, got {meta.get('dtype')!r}")
    dims = tuple(int(d) for d in meta["dims"])
    voxels = _read_raw(raw, dims, "<f4")
    return Volume(
        dims=dims,
        spacing=tuple(float(s) for s in meta["spacing_mm"]),
        origin=tuple(float(o) for o in meta["origin_mm"]),
        orientation=np.array(meta["orientation_row_major"], dtype=np.float64).reshape(3, 3),
        voxels=voxels,
    )


def save_volume(vol: Volume, path) -> None:
    """Write a Volume; ``load_volume(save_volume(v))`` is bit-exact on voxels."""
    sidecar, raw = _sidecar_paths(path)
    meta = {
        "format": VOLUME_FORMAT,
        "dims": list(vol.dims),
        "spacing_mm": list(vol.spacing),
        "origin_mm": list(vol.origin),
        "orientation_row_major": [float(x) for x in np.asarray(vol.orientation).ravel()],
        "dtype": "f32le",
        "scan_order": SCAN_ORDER,
        "units": "HU",
    }
    with open(sidecar, "w") as f:
        json.dump(meta, f, indent=1)
    vol.voxels.astype("<f4").transpose(2, 1, 0).tofile(raw)


def load_label_volume(path) -> LabelVolume:
    sidecar, raw = _sidecar_paths(path)
    meta = _read_sidecar(sidecar)
    if meta.get("dtype") != "u8le":
        raise VolumeError(f"expected dtype u8le, got {meta.get('dtype')!r}")
    dims = tuple(int(d) for d in meta["dims"])
    labels = _read_raw(raw, dims, np.uint8)
    return LabelVolume(
        dims=dims,
        spacing=tuple(float(s) for s in meta["spacing_mm"]),
        origin=tuple(float(o) for o in meta["origin_mm"]),
        orientation=np.array(meta["orientation_row_major"], dtype=np.float64).reshape(3, 3),
        labels=labels,
        class_names={int(k): str(v) for k, v in meta.get("class_names", {}).items()},
    )


def save_label_volume(lv: LabelVolume, path) -> None:
    sidecar, raw = _sidecar_paths(path)
    meta = {
        "format": VOLUME_FORMAT,
        "dims": list(lv.dims),
        "spacing_mm": list(lv.spacing),
        "origin_mm": list(lv.origin),
        "orientation_row_major": [float(x) for x in np.asarray(lv.orientation).ravel()],
        "dtype": "u8le",
        "scan_order": SCAN_ORDER,
        "units": "label",
        "class_names": {str(k): v for k, v in sorted(lv.class_names.items())},
    }
    with open(sidecar, "w") as f:
        json.dump(meta, f, indent=1)
    lv.labels.astype(np.uint8).transpose(2, 1, 0).tofile(raw)


def load_landmarks(path) -> LandmarkSet3D:
    path = Path(path)
    if not path.exists():
        raise VolumeError(f"missing landmark file {path}")
    with open(path) as f:
        data = json.load(f)
    entries = tuple(
        (str(e["name"]), tuple(float(x) for x in e["pos_mm"]))
        for e in data["landmarks"]
    )
    return LandmarkSet3D(entries=entries)


def save_landmarks(ls: LandmarkSet3D, path) -> None:
    data = {
        "landmarks": [
            {"name": name, "pos_mm": [float(x) for x in pos]}
            for name, pos in ls.entries
        ]
    }
    with open(path, "w") as f:
        json.dump(data, f, indent=1)


def hu_window_validate(vol: Volume, lo: float = DEFAULT_HU_WINDOW[0],
                       hi: float = DEFAULT_HU_WINDOW[1]) -> dict:
    """Report the fraction of voxels outside [lo, hi] plus the HU range.

    Guards simulator assumptions; out-of-window values are reported, never
    rejected.
    """
    if lo >= hi:
        raise ValueError(f"window lo ({lo}) must be < hi ({hi})")
    v = vol.voxels
    outside = np.count_nonzero((v < lo) | (v > hi))
    return {
        "fraction_outside": outside / v.size,
        "min_hu": float(v.min()),
        "max_hu": float(v.max()),
        "window": (float(lo), float(hi)),
    }
