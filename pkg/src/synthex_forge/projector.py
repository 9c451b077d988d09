"""Ray-casting core, the three radiograph simulation paradigms, and 3D-to-2D
label propagation.

The marcher integrates per-voxel value fields (built once from HU before
casting) along source-to-pixel rays with trilinear interpolation and a
composite trapezoid rule.  Applying HU maps in voxel space before casting,
rather than to interpolated samples, is what makes heuristic thresholding
exactly equivalent to masking the volume, and matches how material
decomposition has to work anyway.

Marching kernels are JIT-compiled (cached on disk); everything is
embarrassingly parallel over pixels but runs single-threaded here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .geometry import GeometryError, ProjectionGeometry, project_point
from .labels2d import encode_heatmap
from .physics import (
    MATERIALS,
    PhysicsConfig,
    decompose_materials,
    load_material_lut,
    neglog_normalize,
    noise_apply,
    polychromatic_integral,
    scatter_estimate,
)
from .volume import LabelVolume, LandmarkSet3D, Volume

SIMULATORS = ("naive", "heuristic", "realistic")

DEFAULT_AIR_THRESHOLD_HU = -300.0
DEFAULT_MIN_LABEL_PATH_MM = 1.0


class ProjectorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# marching kernels (index space; t parameterizes world-mm arc length)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _march_trilinear(fields, src, dirs, tnear, tfar, step):
    """Trapezoid line integrals of C stacked fields.

    fields: (C, nx, ny, nz) float32, src: (3,) index coords,
    dirs: (H, W, 3) index direction per mm, tnear/tfar: (H, W) mm.
    Samples outside the voxel-center box contribute nothing.
    """
    C = fields.shape[0]
    nx, ny, nz = fields.shape[1], fields.shape[2], fields.shape[3]
    H, W = tnear.shape
    out = np.zeros((H, W, C), dtype=np.float64)
    for j in range(H):
        for i in range(W):
            t0 = tnear[j, i]
            t1 = tfar[j, i]
            if t1 <= t0:
                continue
            n = int(np.ceil((t1 - t0) / step)) + 1
            if n < 2:
                n = 2
            dt = (t1 - t0) / (n - 1)
            dx = dirs[j, i, 0]
            dy = dirs[j, i, 1]
            dz = dirs[j, i, 2]
            for s in range(n):
                t = t0 + s * dt
                x = src[0] + dx * t
                y = src[1] + dy * t
                z = src[2] + dz * t
                if not (0.0 <= x <= nx - 1.0 and 0.0 <= y <= ny - 1.0
                        and 0.0 <= z <= nz - 1.0):
                    continue
                ix = int(np.floor(x))
                iy = int(np.floor(y))
                iz = int(np.floor(z))
                if ix == nx - 1:
                    ix -= 1
                if iy == ny - 1:
                    iy -= 1
                if iz == nz - 1:
                    iz -= 1
                fx = x - ix
                fy = y - iy
                fz = z - iz
                w000 = (1 - fx) * (1 - fy) * (1 - fz)
                w100 = fx * (1 - fy) * (1 - fz)
                w010 = (1 - fx) * fy * (1 - fz)
                w110 = fx * fy * (1 - fz)
                w001 = (1 - fx) * (1 - fy) * fz
                w101 = fx * (1 - fy) * fz
                w011 = (1 - fx) * fy * fz
                w111 = fx * fy * fz
                w = dt if 0 < s < n - 1 else 0.5 * dt
                for c in range(C):
                    v = (w000 * fields[c, ix, iy, iz]
                         + w100 * fields[c, ix + 1, iy, iz]
                         + w010 * fields[c, ix, iy + 1, iz]
                         + w110 * fields[c, ix + 1, iy + 1, iz]
                         + w001 * fields[c, ix, iy, iz + 1]
                         + w101 * fields[c, ix + 1, iy, iz + 1]
                         + w011 * fields[c, ix, iy + 1, iz + 1]
                         + w111 * fields[c, ix + 1, iy + 1, iz + 1])
                    out[j, i, c] += w * v
    return out


@njit(cache=True)
def _march_labels(labels, n_classes, src, dirs, tnear, tfar, step):
    """Per-class path lengths via nearest-voxel label sampling."""
    nx, ny, nz = labels.shape
    H, W = tnear.shape
    out = np.zeros((H, W, n_classes), dtype=np.float64)
    for j in range(H):
        for i in range(W):
            t0 = tnear[j, i]
            t1 = tfar[j, i]
            if t1 <= t0:
                continue
            n = int(np.ceil((t1 - t0) / step)) + 1
            if n < 2:
                n = 2
            dt = (t1 - t0) / (n - 1)
            dx = dirs[j, i, 0]
            dy = dirs[j, i, 1]
            dz = dirs[j, i, 2]
            for s in range(n):
                t = t0 + s * dt
                x = src[0] + dx * t
                y = src[1] + dy * t
                z = src[2] + dz * t
                if not (0.0 <= x <= nx - 1.0 and 0.0 <= y <= ny - 1.0
                        and 0.0 <= z <= nz - 1.0):
                    continue
                lab = labels[int(round(x)), int(round(y)), int(round(z))]
                w = dt if 0 < s < n - 1 else 0.5 * dt
                out[j, i, lab] += w
    return out


# ---------------------------------------------------------------------------
# ray setup
# ---------------------------------------------------------------------------

def _index_frame(vol_like, world_warp):
    """Affine taking index coords to world: p_w = B @ ijk + c."""
    M = np.asarray(vol_like.orientation, dtype=np.float64)
    B = M @ np.diag(np.asarray(vol_like.spacing, dtype=np.float64))
    c = np.asarray(vol_like.origin, dtype=np.float64)
    if world_warp is not None:
        A, b = world_warp
        A = np.asarray(A, dtype=np.float64)
        B = A @ B
        c = A @ c + np.asarray(b, dtype=np.float64)
    return B, c


def _ray_grid(geom: ProjectionGeometry):
    """Source and unit ray directions (world) plus ray lengths to the detector."""
    w, h = geom.output_dims
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    px = np.stack(np.meshgrid(xs, ys), axis=-1)          # (H, W, 2) as (x, y)
    pix_world = geom.pixel_world(px)                     # (H, W, 3)
    src = geom.source_world()
    d = pix_world - src
    lengths = np.linalg.norm(d, axis=-1)
    if np.any(lengths < 1e-9):
        raise GeometryError("source lies on the detector plane")
    return src, d / lengths[..., None], lengths


def _slab_bounds(src_idx, dirs_idx, dims, lengths):
    """Entry/exit distances (mm) of each ray against the voxel-center box."""
    lo = np.zeros(3)
    hi = np.asarray(dims, dtype=np.float64) - 1.0
    tnear = np.zeros(lengths.shape)
    tfar = np.array(lengths, copy=True)
    for ax in range(3):
        d = dirs_idx[..., ax]
        s = src_idx[ax]
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = (lo[ax] - s) / d
            t1 = (hi[ax] - s) / d
        near = np.minimum(t0, t1)
        far = np.maximum(t0, t1)
        parallel = np.abs(d) < 1e-12
        inside = (lo[ax] <= s) & (s <= hi[ax])
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        tnear = np.maximum(tnear, near)
        tfar = np.minimum(tfar, far)
    return tnear, tfar


def _march_setup(vol_like, geom, world_warp):
    src_w, dirs_w, lengths = _ray_grid(geom)
    B, c = _index_frame(vol_like, world_warp)
    Binv = np.linalg.inv(B)
    src_idx = Binv @ (src_w - c)
    dirs_idx = dirs_w @ Binv.T
    tnear, tfar = _slab_bounds(src_idx, dirs_idx, vol_like.dims, lengths)
    return (np.ascontiguousarray(src_idx),
            np.ascontiguousarray(dirs_idx),
            np.ascontiguousarray(tnear),
            np.ascontiguousarray(tfar))


# ---------------------------------------------------------------------------
# ray-cast + simulators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RayIntegral:
    """Per-pixel line integrals, one channel per material/field."""

    values: np.ndarray           # (H, W, C) float64
    channels: tuple[str, ...]

    def __post_init__(self):
        if self.values.shape[-1] != len(self.channels):
            raise ProjectorError("channel count mismatch")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < -1e-9):
            raise ProjectorError("integrals must be finite and non-negative")

    def channel(self, name: str) -> np.ndarray:
        return self.values[..., self.channels.index(name)]


def default_step_mm(vol_like) -> float:
    # min(spacing)/2 balances accuracy and speed (see convergence tests)
    return float(min(vol_like.spacing)) / 2.0


def raycast(vol: Volume, geom: ProjectionGeometry, sampler, step_mm: float | None = None,
            world_warp=None) -> RayIntegral:
    """Integrate sampler-derived voxel fields along every source-pixel ray.

    ``sampler(hu_voxels) -> dict[name, float array]`` converts HU to the
    per-voxel integrand(s) prior to casting.  ``world_warp`` is an optional
    affine (A, b) applied to volume world coordinates (shear pre-warps).
    Rays are clipped to the volume; a source inside the volume integrates
    from the source outward.
    """
    if step_mm is None:
        step_mm = default_step_mm(vol)
    if step_mm <= 0:
        raise ProjectorError("step_mm must be positive")
    fields = sampler(vol.voxels)
    names = tuple(fields.keys())
    stack = np.ascontiguousarray(
        np.stack([np.asarray(fields[n], dtype=np.float32) for n in names])
    )
    src_idx, dirs_idx, tnear, tfar = _march_setup(vol, geom, world_warp)
    values = _march_trilinear(stack, src_idx, dirs_idx, tnear, tfar, float(step_mm))
    return RayIntegral(values=values, channels=names)


def mono_mu_sampler(mu_water: float):
    """HU -> /mm attenuation for a mono-energetic beam, clamped at air."""
    def sampler(hu):
        return {"mu": np.clip(mu_water * (1.0 + hu / 1000.0), 0.0, None)}
    return sampler


def heuristic_mu_sampler(mu_water: float, air_threshold_hu: float):
    """Mono attenuation with sub-threshold voxels zeroed before casting."""
    def sampler(hu):
        mu = np.clip(mu_water * (1.0 + hu / 1000.0), 0.0, None)
        mu[hu < air_threshold_hu] = 0.0
        return {"mu": mu}
    return sampler


def material_sampler(lut):
    """Density-weighted per-material indicator fields for the realistic path."""
    def sampler(hu):
        indicators, density = decompose_materials(hu, lut)
        return {m: np.where(indicators[m], density, 0.0) for m in MATERIALS}
    return sampler


def naive_drr(vol: Volume, geom: ProjectionGeometry, mu_water: float = 0.02,
              step_mm: float | None = None, world_warp=None,
              bone_dark: bool = False) -> np.ndarray:
    """Mono-energetic single-material simulation; no imaging physics."""
    integ = raycast(vol, geom, mono_mu_sampler(mu_water), step_mm, world_warp)
    return neglog_normalize(np.exp(-integ.channel("mu")), bone_dark=bone_dark)


def heuristic_drr(vol: Volume, geom: ProjectionGeometry,
                  air_threshold_hu: float = DEFAULT_AIR_THRESHOLD_HU,
                  mu_water: float = 0.02, step_mm: float | None = None,
                  world_warp=None, bone_dark: bool = False) -> np.ndarray:
    """HU-thresholded mono simulation; low-HU voxels drop out, anatomy keeps
    its linear contrast."""
    integ = raycast(vol, geom, heuristic_mu_sampler(mu_water, air_threshold_hu),
                    step_mm, world_warp)
    return neglog_normalize(np.exp(-integ.channel("mu")), bone_dark=bone_dark)


def realistic_drr(vol: Volume, geom: ProjectionGeometry, phys: PhysicsConfig,
                  rng: np.random.Generator, step_mm: float | None = None,
                  world_warp=None, bone_dark: bool = False) -> np.ndarray:
    """Full-spectrum simulation: material decomposition, polychromatic
    detection, scatter surrogate, detector noise, saturation, normalization."""
    integ = raycast(vol, geom, material_sampler(phys.lut), step_mm, world_warp)
    primary = polychromatic_integral(integ.values, phys.spectrum, phys.lut)
    detected = primary + scatter_estimate(primary, phys)
    counts = noise_apply(detected, phys, rng)
    return neglog_normalize(counts, bone_dark=bone_dark)


def project_labels(lv: LabelVolume, geom: ProjectionGeometry,
                   min_path_mm: float = DEFAULT_MIN_LABEL_PATH_MM,
                   step_mm: float | None = None, world_warp=None) -> np.ndarray:
    """Segmentation mask: per pixel, the non-background class with the longest
    ray path, provided it exceeds ``min_path_mm``; background otherwise."""
    if step_mm is None:
        step_mm = default_step_mm(lv)
    n_classes = int(lv.labels.max()) + 1
    src_idx, dirs_idx, tnear, tfar = _march_setup(lv, geom, world_warp)
    paths = _march_labels(np.ascontiguousarray(lv.labels), n_classes,
                          src_idx, dirs_idx, tnear, tfar, float(step_mm))
    if n_classes == 1:
        return np.zeros(tnear.shape, dtype=np.uint8)
    fg = paths[..., 1:]
    best = np.argmax(fg, axis=-1).astype(np.uint8) + 1
    mask = np.where(np.max(fg, axis=-1) > min_path_mm, best, 0).astype(np.uint8)
    return mask


def project_landmarks(ls: LandmarkSet3D, geom: ProjectionGeometry,
                      world_warp=None) -> list[tuple[float, float] | None]:
    """Detector pixels of each landmark; None when not visible."""
    out: list[tuple[float, float] | None] = []
    A = b = None
    if world_warp is not None:
        A, b = world_warp
    for _, pos in ls.entries:
        p = np.asarray(pos, dtype=np.float64)
        if A is not None:
            p = np.asarray(A) @ p + np.asarray(b)
        pixel, visible = project_point(geom, p)
        out.append((float(pixel[0]), float(pixel[1])) if visible else None)
    return out


# ---------------------------------------------------------------------------
# sample bundling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadiographSample:
    """One synthetic radiograph with propagated 2D labels and provenance."""

    image: np.ndarray                 # (H, W) float32 in [0, 1]
    seg_mask: np.ndarray              # (H, W) uint8 class ids
    heatmaps: np.ndarray              # (L, H, W) float32
    landmark_px: tuple                # per landmark: (x, y) or None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.image)):
            raise ProjectorError("image must be finite")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise ProjectorError("image must lie in [0, 1]")
        if self.seg_mask.shape != self.image.shape:
            raise ProjectorError("seg mask dims must equal image dims")
        if self.heatmaps.shape[1:] != self.image.shape:
            raise ProjectorError("heatmap dims must equal image dims")
        for k, (px, hm) in enumerate(zip(self.landmark_px, self.heatmaps)):
            zero = not hm.any()
            if (px is None) != zero:
                raise ProjectorError(f"heatmap {k} visibility is inconsistent")


def render_sample(vol: Volume, geom: ProjectionGeometry, simulator: str,
                  label_volume: LabelVolume | None = None,
                  landmarks: LandmarkSet3D | None = None,
                  heatmap_sigma_px: float = 6.0,
                  phys: PhysicsConfig | None = None,
                  seed: int = 0,
                  step_mm: float | None = None,
                  world_warp=None,
                  air_threshold_hu: float = DEFAULT_AIR_THRESHOLD_HU,
                  min_path_mm: float = DEFAULT_MIN_LABEL_PATH_MM,
                  bone_dark: bool = False,
                  meta: dict | None = None) -> RadiographSample:
    """Render one fully annotated sample; deterministic for a given seed."""
    if simulator not in SIMULATORS:
        raise ProjectorError(f"unknown simulator {simulator!r}")
    if label_volume is not None and not label_volume.geometry_matches(vol):
        raise ProjectorError("label volume geometry does not match the volume")

    lut = phys.lut if phys is not None else load_material_lut()
    if simulator == "naive":
        image = naive_drr(vol, geom, lut.mu_water_mono(), step_mm, world_warp,
                          bone_dark)
    elif simulator == "heuristic":
        image = heuristic_drr(vol, geom, air_threshold_hu, lut.mu_water_mono(),
                              step_mm, world_warp, bone_dark)
    else:
        cfg = phys if phys is not None else PhysicsConfig()
        rng = np.random.default_rng(seed)
        image = realistic_drr(vol, geom, cfg, rng, step_mm, world_warp, bone_dark)

    h, w = image.shape
    if label_volume is not None:
        seg = project_labels(label_volume, geom, min_path_mm, step_mm, world_warp)
    else:
        seg = np.zeros((h, w), dtype=np.uint8)

    if landmarks is not None:
        lm_px = project_landmarks(landmarks, geom, world_warp)
        heatmaps = np.stack([
            encode_heatmap(px, (w, h), heatmap_sigma_px) for px in lm_px
        ]) if lm_px else np.zeros((0, h, w), dtype=np.float32)
        names = landmarks.names
    else:
        lm_px = []
        heatmaps = np.zeros((0, h, w), dtype=np.float32)
        names = []

    sample_meta = {
        "simulator": simulator,
        "seed": int(seed),
        "landmark_names": names,
        "heatmap_sigma_px": float(heatmap_sigma_px),
    }
    if meta:
        sample_meta.update(meta)
    return RadiographSample(
        image=image.astype(np.float32),
        seg_mask=seg,
        heatmaps=heatmaps.astype(np.float32),
        landmark_px=tuple(lm_px),
        meta=sample_meta,
    )
