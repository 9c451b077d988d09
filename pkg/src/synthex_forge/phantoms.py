"""Synthetic phantom volumes with labels and landmarks.

Used by the test suite, the acceptance checks, and the demo scripts; these
stand in for annotated CT scans.  All phantoms are centered on the world
origin so the canonical camera sees them at the isocenter.
"""

from __future__ import annotations

import numpy as np

from .volume import LabelVolume, LandmarkSet3D, Volume


def _centered_origin(dims, spacing) -> tuple[float, float, float]:
    dims = np.asarray(dims, dtype=np.float64)
    spacing = np.asarray(spacing, dtype=np.float64)
    return tuple(-(dims - 1.0) * spacing / 2.0)


def uniform_cube(hu: float = 0.0, extent_mm: float = 100.0,
                 spacing_mm: float = 1.0) -> Volume:
    """Uniform cube whose voxel-center extent is exactly ``extent_mm``."""
    n = int(round(extent_mm / spacing_mm)) + 1
    dims = (n, n, n)
    return Volume(
        dims=dims,
        spacing=(spacing_mm,) * 3,
        origin=_centered_origin(dims, (spacing_mm,) * 3),
        orientation=np.eye(3),
        voxels=np.full(dims, hu, dtype=np.float32),
    )


def index_grids(dims):
    return np.meshgrid(*(np.arange(n) for n in dims), indexing="ij")


def sphere_box_phantom(dims=(48, 48, 48), spacing_mm: float = 4.0):
    """Soft-tissue box with two bone spheres and an air pocket.

    Returns ``(volume, label_volume, landmarks)``: classes are the box shell,
    the large sphere and the small sphere; landmarks sit at the sphere centers
    and two box corners.
    """
    dims = tuple(dims)
    spacing = (spacing_mm,) * 3
    origin = _centered_origin(dims, spacing)
    ii, jj, kk = index_grids(dims)
    c = (np.asarray(dims) - 1.0) / 2.0

    hu = np.full(dims, -1000.0, dtype=np.float32)
    labels = np.zeros(dims, dtype=np.uint8)

    # soft-tissue interior with a denser shell
    box = (np.abs(ii - c[0]) <= 0.32 * dims[0]) \
        & (np.abs(jj - c[1]) <= 0.32 * dims[1]) \
        & (np.abs(kk - c[2]) <= 0.32 * dims[2])
    inner = (np.abs(ii - c[0]) <= 0.26 * dims[0]) \
        & (np.abs(jj - c[1]) <= 0.26 * dims[1]) \
        & (np.abs(kk - c[2]) <= 0.26 * dims[2])
    hu[box] = 300.0
    hu[inner] = 40.0
    labels[box & ~inner] = 1

    def ball(center_frac, radius_frac):
        cc = c + np.asarray(center_frac) * np.asarray(dims)
        rr = radius_frac * min(dims)
        return ((ii - cc[0]) ** 2 + (jj - cc[1]) ** 2 + (kk - cc[2]) ** 2) <= rr**2, cc

    big, big_c = ball((-0.12, 0.05, 0.0), 0.14)
    small, small_c = ball((0.16, -0.10, 0.08), 0.08)
    hu[big] = 1200.0
    hu[small] = 900.0
    labels[big] = 2
    labels[small] = 3

    # air pocket inside the soft tissue
    pocket, _ = ball((0.05, 0.22, -0.12), 0.06)
    hu[pocket & inner & ~big & ~small] = -950.0

    vol = Volume(dims=dims, spacing=spacing, origin=origin,
                 orientation=np.eye(3), voxels=hu)
    lv = LabelVolume(
        dims=dims, spacing=spacing, origin=origin, orientation=np.eye(3),
        labels=labels,
        class_names={1: "shell", 2: "big_sphere", 3: "small_sphere"},
    )

    def world(idx):
        return tuple(np.asarray(origin) + np.asarray(idx) * spacing_mm)

    corner = c - 0.32 * np.asarray(dims)
    lm = LandmarkSet3D(entries=(
        ("big-center", world(big_c)),
        ("small-center", world(small_c)),
        ("box-corner", world(corner)),
        ("box-center", world(c)),
    ))
    return vol, lv, lm


def halfspace_labels(dims=(33, 33, 33), spacing_mm: float = 3.0,
                     split_offset_vox: float = 0.5) -> LabelVolume:
    """Two classes split by the plane i = center + offset (for oracle tests)."""
    dims = tuple(dims)
    spacing = (spacing_mm,) * 3
    ii, _, _ = index_grids(dims)
    split = (dims[0] - 1) / 2.0 + split_offset_vox
    labels = np.where(ii < split, 1, 2).astype(np.uint8)
    return LabelVolume(
        dims=dims, spacing=spacing, origin=_centered_origin(dims, spacing),
        orientation=np.eye(3), labels=labels,
        class_names={1: "left", 2: "right"},
    )


def smooth_bump_volume(dims=(64, 64, 32), spacing_mm: float = 2.0) -> Volume:
    """Smooth compactly-supported HU bump (attenuation vanishes at the faces).

    Grazing rays see a C1 integrand, so trapezoid integration keeps its
    O(step^2) convergence; used by the convergence self-consistency checks.
    """
    dims = tuple(dims)
    ii, jj, kk = index_grids(dims)
    wx = np.sin(np.pi * ii / (dims[0] - 1)) ** 2
    wy = np.sin(np.pi * jj / (dims[1] - 1)) ** 2
    wz = np.sin(np.pi * kk / (dims[2] - 1)) ** 2
    ramp = 0.5 + 0.5 * ii / (dims[0] - 1)
    hu = (-1000.0 + 1800.0 * wx * wy * wz * ramp).astype(np.float32)
    spacing = (spacing_mm,) * 3
    return Volume(dims=dims, spacing=spacing,
                  origin=_centered_origin(dims, spacing),
                  orientation=np.eye(3), voxels=hu)
