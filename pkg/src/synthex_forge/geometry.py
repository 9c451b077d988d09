"""Pinhole C-arm projection model, rigid transforms, and per-task pose samplers.

Camera convention (fixed here; documented because vendors differ): the X-ray
source sits at the camera origin, the detector plane is at z =
source_to_detector in camera coordinates, and detector x/y align with camera
x/y.  Pixel i lies at physical offset (i - principal_point) * pixel_spacing
from the principal ray; rays are cast through integer pixel coordinates
(single center ray per pixel).

Rotations are parameterized as intrinsic XYZ Euler angles throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

DEG = np.pi / 180.0


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# rigid transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidTransform:
    """p_world = rotation @ p + translation."""

    rotation: np.ndarray      # 3x3
    translation: np.ndarray   # (3,) mm

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        if R.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9):
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise GeometryError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equal to applying b first, then a."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def invert(a: RigidTransform) -> RigidTransform:
    return RigidTransform(a.rotation.T, -a.rotation.T @ a.translation)


def euler_xyz_to_matrix(ax_deg: float, ay_deg: float, az_deg: float) -> np.ndarray:
    """Intrinsic XYZ Euler angles (degrees) to a rotation matrix."""
    ax, ay, az = ax_deg * DEG, ay_deg * DEG, az_deg * DEG
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rx @ ry @ rz


def matrix_to_euler_xyz(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of euler_xyz_to_matrix (degrees); valid away from |ay| = 90."""
    R = np.asarray(R, dtype=np.float64)
    ay = np.arcsin(np.clip(R[0, 2], -1.0, 1.0))
    if abs(np.cos(ay)) < 1e-9:
        raise GeometryError("gimbal lock: cannot recover XYZ angles")
    ax = np.arctan2(-R[1, 2], R[2, 2])
    az = np.arctan2(-R[0, 1], R[0, 0])
    return (ax / DEG, ay / DEG, az / DEG)


# ---------------------------------------------------------------------------
# camera + projection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraModel:
    detector_dims: tuple[int, int]        # (width, height) px
    pixel_spacing: float                  # mm/px, isotropic
    source_to_detector: float             # mm
    principal_point: tuple[float, float]  # px

    def __post_init__(self):
        w, h = self.detector_dims
        if w <= 0 or h <= 0 or self.pixel_spacing <= 0 or self.source_to_detector <= 0:
            raise GeometryError("camera parameters must be positive")
        px, py = self.principal_point
        if not (0 <= px < w and 0 <= py < h):
            raise GeometryError("principal point must lie inside the detector")

    def at_resolution(self, target: int) -> "CameraModel":
        """Same physical detector rendered natively on a target x target grid.

        Pixel spacing scales by detector_width/target, avoiding post-hoc image
        resampling for resolutions that do not divide the native grid.
        """
        w, h = self.detector_dims
        return CameraModel(
            detector_dims=(target, target),
            pixel_spacing=self.pixel_spacing * w / target,
            source_to_detector=self.source_to_detector,
            principal_point=(self.principal_point[0] * target / w,
                             self.principal_point[1] * target / h),
        )


def default_carm() -> CameraModel:
    """Mobile C-arm approximation: 1536x1536 px at 0.194 mm/px, SDD 1020 mm."""
    return CameraModel(
        detector_dims=(1536, 1536),
        pixel_spacing=0.194,
        source_to_detector=1020.0,
        principal_point=(768.0, 768.0),
    )


@dataclass(frozen=True)
class ProjectionGeometry:
    camera: CameraModel
    world_from_camera: RigidTransform
    downsample: int = 1

    def __post_init__(self):
        if self.downsample < 1:
            raise GeometryError("downsample must be >= 1")
        w, h = self.camera.detector_dims
        if w % self.downsample or h % self.downsample:
            raise GeometryError(
                f"downsample {self.downsample} does not divide detector dims {w}x{h}"
            )

    @property
    def output_dims(self) -> tuple[int, int]:
        w, h = self.camera.detector_dims
        return (w // self.downsample, h // self.downsample)

    @property
    def output_pixel_spacing(self) -> float:
        return self.camera.pixel_spacing * self.downsample

    @property
    def output_principal_point(self) -> tuple[float, float]:
        px, py = self.camera.principal_point
        return (px / self.downsample, py / self.downsample)

    def source_world(self) -> np.ndarray:
        return self.world_from_camera.translation.copy()

    def pixel_world(self, px: np.ndarray) -> np.ndarray:
        """World positions of output pixel coordinates (..., 2)."""
        px = np.asarray(px, dtype=np.float64)
        ppx, ppy = self.output_principal_point
        s = self.output_pixel_spacing
        cam = np.empty(px.shape[:-1] + (3,))
        cam[..., 0] = (px[..., 0] - ppx) * s
        cam[..., 1] = (px[..., 1] - ppy) * s
        cam[..., 2] = self.camera.source_to_detector
        return self.world_from_camera.apply(cam)


def project_point(geom: ProjectionGeometry, p) -> tuple[np.ndarray, bool]:
    """Project a world point to output detector pixels.

    Returns ``(pixel_xy, visible)``; visible means the point lies strictly
    between source and detector plane and lands inside the detector.  Raises
    for a point at the source (the ray is undefined there).
    """
    p = np.asarray(p, dtype=np.float64).reshape(3)
    cam_from_world = invert(geom.world_from_camera)
    pc = cam_from_world.apply(p)
    if np.linalg.norm(pc) < 1e-12:
        raise GeometryError("point coincides with the X-ray source")
    sdd = geom.camera.source_to_detector
    z = pc[2]
    if abs(z) < 1e-12:
        return np.array([np.inf, np.inf]), False
    u = pc[0] * sdd / z
    v = pc[1] * sdd / z
    s = geom.output_pixel_spacing
    ppx, ppy = geom.output_principal_point
    pixel = np.array([ppx + u / s, ppy + v / s])
    w, h = geom.output_dims
    visible = bool(
        0.0 < z < sdd
        and 0.0 <= pixel[0] <= w - 1
        and 0.0 <= pixel[1] <= h - 1
    )
    return pixel, visible


def canonical_geometry(camera: CameraModel, source_to_isocenter: float | None = None,
                       downsample: int = 1) -> ProjectionGeometry:
    """Camera looking down world +z with the isocenter at the world origin.

    The default source-to-isocenter distance of SDD/2 puts the isocenter at
    magnification 2, a typical C-arm working point.
    """
    if source_to_isocenter is None:
        source_to_isocenter = camera.source_to_detector / 2.0
    wfc = RigidTransform(np.eye(3), np.array([0.0, 0.0, -source_to_isocenter]))
    return ProjectionGeometry(camera=camera, world_from_camera=wfc,
                              downsample=downsample)


# ---------------------------------------------------------------------------
# pose sampling
# ---------------------------------------------------------------------------

TASKS = ("hip", "tool", "covid")

# canonical camera standoff used when folding sampled source-to-isocenter
# distances into volume translations (see PoseSample)
DEFAULT_SOURCE_TO_ISOCENTER = 510.0


@dataclass(frozen=True)
class PoseSamplerConfig:
    """Per-task sampling ranges.  Defaults follow the simulation protocol
    for each task; anatomical axes map L/R -> x, I/S -> y, A/P -> z of the
    volume frame (an assumption, since dataset orientation varies).
    """

    task: str
    seed: int = 0
    # hip
    hip_rot_deg: float = 45.0
    hip_trans_lr_mm: float = 50.0
    hip_trans_is_mm: float = 20.0
    hip_trans_ap_mm: float = 100.0
    # tool
    tool_lao_rao_deg: float = 30.0
    tool_cran_caud_deg: float = 10.0
    tool_src_iso_mm: tuple[float, float] = (600.0, 900.0)
    tool_trans_sigma_mm: float = 10.0
    # covid
    covid_rot_deg: float = 5.0
    covid_src_iso_mm: tuple[float, float] = (350.0, 650.0)
    covid_shear_deg: float = 30.0
    # camera standoff the translations are expressed against
    reference_src_iso_mm: float = DEFAULT_SOURCE_TO_ISOCENTER

    def __post_init__(self):
        if self.task not in TASKS:
            raise GeometryError(f"unknown task {self.task!r}, expected one of {TASKS}")
        for lo, hi in (self.tool_src_iso_mm, self.covid_src_iso_mm):
            if lo > hi:
                raise GeometryError(f"range ({lo}, {hi}) is not well-ordered")
        if self.tool_trans_sigma_mm < 0:
            raise GeometryError("Gaussian sigma must be >= 0")


@dataclass(frozen=True)
class PoseSample:
    """One sampled volume pose: rigid part plus an optional shear pre-warp.

    The rigid part moves the volume in world space (camera fixed at the
    canonical standoff); sampled source-to-isocenter distances are folded
    into the z translation.  ``shear``, when present, is a 3x3 linear warp
    applied to volume world coordinates before the rigid part.
    """

    pose: RigidTransform
    shear: np.ndarray | None = None
    euler_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def world_warp(self) -> tuple[np.ndarray, np.ndarray]:
        """Affine (A, b): volume world point p maps to A @ p + b."""
        A = self.pose.rotation
        if self.shear is not None:
            A = A @ self.shear
        return A, self.pose.translation


def sample_pose(cfg: PoseSamplerConfig, rng: np.random.Generator) -> PoseSample:
    """Draw one pose.  Advancing the generator is the caller's only state."""
    if cfg.task == "hip":
        angles = rng.uniform(-cfg.hip_rot_deg, cfg.hip_rot_deg, size=3)
        t = np.array([
            rng.uniform(-cfg.hip_trans_lr_mm, cfg.hip_trans_lr_mm),
            rng.uniform(-cfg.hip_trans_is_mm, cfg.hip_trans_is_mm),
            rng.uniform(-cfg.hip_trans_ap_mm, cfg.hip_trans_ap_mm),
        ])
        R = euler_xyz_to_matrix(*angles)
        return PoseSample(RigidTransform(R, t), None, tuple(angles))

    if cfg.task == "tool":
        # LAO/RAO orbits about the head-foot (y) axis, CRAN/CAUD about L/R (x)
        lao = rng.uniform(-cfg.tool_lao_rao_deg, cfg.tool_lao_rao_deg)
        cran = rng.uniform(-cfg.tool_cran_caud_deg, cfg.tool_cran_caud_deg)
        src_iso = rng.uniform(*cfg.tool_src_iso_mm)
        tx = rng.normal(0.0, cfg.tool_trans_sigma_mm)
        ty = rng.normal(0.0, cfg.tool_trans_sigma_mm)
        R = euler_xyz_to_matrix(cran, lao, 0.0)
        t = np.array([tx, ty, src_iso - cfg.reference_src_iso_mm])
        return PoseSample(RigidTransform(R, t), None, (cran, lao, 0.0))

    if cfg.task == "covid":
        angles = rng.uniform(-cfg.covid_rot_deg, cfg.covid_rot_deg, size=3)
        src_iso = rng.uniform(*cfg.covid_src_iso_mm)
        shear_deg = rng.uniform(-cfg.covid_shear_deg, cfg.covid_shear_deg)
        axis_pair = rng.integers(0, 6)
        pairs = [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
        i, j = pairs[int(axis_pair)]
        S = np.eye(3)
        S[i, j] = np.tan(shear_deg * DEG)
        R = euler_xyz_to_matrix(*angles)
        t = np.array([0.0, 0.0, src_iso - cfg.reference_src_iso_mm])
        return PoseSample(RigidTransform(R, t), S, tuple(angles))

    raise GeometryError(f"unknown task {cfg.task!r}")


class PoseSampler:
    """Deterministic pose stream; owns its generator, advanced single-threaded."""

    def __init__(self, cfg: PoseSamplerConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)

    def sample(self) -> PoseSample:
        return sample_pose(self.cfg, self.rng)


def geometry_for_pose(camera: CameraModel, sample: PoseSample,
                      reference_src_iso_mm: float = DEFAULT_SOURCE_TO_ISOCENTER,
                      downsample: int = 1) -> ProjectionGeometry:
    """Fold the rigid part of a volume pose into the camera extrinsics.

    Rendering a volume transformed by T with the canonical camera equals
    rendering the untransformed volume with world_from_camera = T^-1 o
    canonical; the shear part cannot be folded (it is not rigid) and must be
    passed to the renderer as a volume warp.
    """
    base = canonical_geometry(camera, reference_src_iso_mm, downsample)
    wfc = compose(invert(sample.pose), base.world_from_camera)
    return ProjectionGeometry(camera=camera, world_from_camera=wfc,
                              downsample=downsample)


# ---------------------------------------------------------------------------
# pose log
# ---------------------------------------------------------------------------

def write_pose_log(path, samples: list[PoseSample], seed: int) -> None:
    """JSON Lines, one record per sample; enables exact re-rendering."""
    with open(path, "w") as f:
        for i, s in enumerate(samples):
            rec = {
                "index": i,
                "rotation": [float(x) for x in s.pose.rotation.ravel()],
                "translation_mm": [float(x) for x in s.pose.translation],
                "shear": None if s.shear is None else [float(x) for x in s.shear.ravel()],
                "seed": int(seed),
            }
            f.write(json.dumps(rec) + "\n")


def read_pose_log(path) -> list[PoseSample]:
    samples = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            R = np.array(rec["rotation"], dtype=np.float64).reshape(3, 3)
            t = np.array(rec["translation_mm"], dtype=np.float64)
            shear = rec.get("shear")
            shear = None if shear is None else np.array(shear, dtype=np.float64).reshape(3, 3)
            euler = matrix_to_euler_xyz(R)
            samples.append(PoseSample(RigidTransform(R, t), shear, euler))
    return samples
