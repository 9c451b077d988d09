"""Polychromatic spectrum handling, threshold material decomposition, scatter
surrogate, detector noise, and intensity normalization.

Spectrum and attenuation tables ship as CSV data files; every physics
constant is a knob with a documented default rather than a hard-coded value.
The detector is energy-integrating (detected signal weighted by photon
energy), not photon-counting.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

MATERIALS = ("air", "soft_tissue", "bone")


class PhysicsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# spectrum + attenuation tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Spectrum:
    """Energy bins (keV, ascending) and unattenuated photon fluence per bin."""

    energies_kev: np.ndarray
    fluence: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies_kev, dtype=np.float64)
        f = np.asarray(self.fluence, dtype=np.float64)
        if e.shape != f.shape or e.ndim != 1 or e.size == 0:
            raise PhysicsError("energies and fluence must be equal-length 1D arrays")
        if np.any(np.diff(e) <= 0):
            raise PhysicsError("energy bins must be strictly ascending")
        if np.any(f < 0) or f.sum() <= 0:
            raise PhysicsError("fluence must be non-negative with positive total")
        object.__setattr__(self, "energies_kev", e)
        object.__setattr__(self, "fluence", f)

    @staticmethod
    def mono(energy_kev: float, fluence: float = 1.0) -> "Spectrum":
        return Spectrum(np.array([energy_kev]), np.array([fluence]))

    def unattenuated_energy(self) -> float:
        """Total detected energy per pixel with nothing in the beam."""
        return float(np.sum(self.fluence * self.energies_kev))


@dataclass(frozen=True)
class MaterialLUT:
    """mu(material, energy) table in /mm plus the HU decomposition thresholds."""

    energies_kev: np.ndarray
    mu: np.ndarray                  # (3, n_energies), rows follow MATERIALS
    air_max_hu: float = -800.0
    bone_min_hu: float = 350.0
    mono_reference_kev: float = 60.0

    def __post_init__(self):
        e = np.asarray(self.energies_kev, dtype=np.float64)
        m = np.asarray(self.mu, dtype=np.float64)
        if m.shape != (len(MATERIALS), e.size):
            raise PhysicsError(f"mu table must be {len(MATERIALS)}x{e.size}")
        if np.any(m < 0):
            raise PhysicsError("mu must be non-negative")
        if np.any(np.diff(m, axis=1) >= 0):
            raise PhysicsError("mu must decrease with energy for every material")
        if self.air_max_hu >= self.bone_min_hu:
            raise PhysicsError("air_max_hu must be < bone_min_hu")
        object.__setattr__(self, "energies_kev", e)
        object.__setattr__(self, "mu", m)

    def mu_at(self, material: str, energies_kev) -> np.ndarray:
        """Log-linear interpolation within the tabulated range."""
        row = MATERIALS.index(material)
        e = np.asarray(energies_kev, dtype=np.float64)
        if np.any(e < self.energies_kev[0]) or np.any(e > self.energies_kev[-1]):
            raise PhysicsError("energy outside tabulated range")
        return np.exp(np.interp(e, self.energies_kev, np.log(self.mu[row])))

    def mu_water_mono(self) -> float:
        """Water attenuation at the mono-energetic reference setting."""
        return float(self.mu_at("soft_tissue", self.mono_reference_kev))


def _read_csv(path) -> dict[str, np.ndarray]:
    """Header + numeric rows; full-line `#` comments allowed anywhere."""
    with open(path) as f:
        lines = [ln.strip() for ln in f
                 if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise PhysicsError(f"no data rows in {path}")
    header = [h.strip() for h in lines[0].split(",")]
    rows = [[float(x) for x in ln.split(",")] for ln in lines[1:]]
    data = np.asarray(rows, dtype=np.float64)
    if data.shape[1] != len(header):
        raise PhysicsError(f"column count mismatch in {path}")
    return {name: data[:, i] for i, name in enumerate(header)}


def _data_file(name: str):
    return importlib.resources.files("synthex_forge").joinpath("data", name)


def load_spectrum(path=None) -> Spectrum:
    """Load a `energy_kev,fluence` CSV; default is the shipped 90 kVp table."""
    rows = _read_csv(path if path is not None else str(_data_file("spectrum_90kvp.csv")))
    return Spectrum(rows["energy_kev"], rows["fluence"])


def load_material_lut(path=None, **thresholds) -> MaterialLUT:
    """Load a `energy_kev,mu_air,mu_soft,mu_bone` CSV (/mm)."""
    rows = _read_csv(path if path is not None else str(_data_file("material_lut.csv")))
    mu = np.stack([rows["mu_air"], rows["mu_soft"], rows["mu_bone"]])
    return MaterialLUT(rows["energy_kev"], mu, **thresholds)


@dataclass(frozen=True)
class PhysicsConfig:
    spectrum: Spectrum = field(default_factory=load_spectrum)
    lut: MaterialLUT = field(default_factory=load_material_lut)
    photons_per_pixel: float = 5e4        # unattenuated count; inf = noiseless
    scatter_fraction: float = 0.1
    scatter_kernel_sigma_px: float = 32.0  # tuned for 360x360 output
    readout_noise_sigma: float = 20.0      # counts
    saturation_fraction: float = 1.0

    def __post_init__(self):
        if self.photons_per_pixel <= 0:
            raise PhysicsError("photons_per_pixel must be positive")
        if not (0.0 <= self.scatter_fraction < 1.0):
            raise PhysicsError("scatter_fraction must be in [0, 1)")
        if self.scatter_kernel_sigma_px < 0 or self.readout_noise_sigma < 0:
            raise PhysicsError("sigmas must be >= 0")
        if not (0.0 < self.saturation_fraction <= 1.0):
            raise PhysicsError("saturation_fraction must be in (0, 1]")

    def noiseless(self) -> "PhysicsConfig":
        return PhysicsConfig(
            spectrum=self.spectrum, lut=self.lut,
            photons_per_pixel=np.inf, scatter_fraction=0.0,
            scatter_kernel_sigma_px=self.scatter_kernel_sigma_px,
            readout_noise_sigma=0.0, saturation_fraction=1.0,
        )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def decompose_materials(voxels_hu: np.ndarray, lut: MaterialLUT):
    """Threshold decomposition into air / soft tissue / bone.

    Returns ``(indicators, density)`` where indicators maps material name to
    a boolean array and density is the (1 + HU/1000) scaling clamped at 0.
    Every voxel belongs to exactly one material.
    """
    hu = np.asarray(voxels_hu)
    air = hu < lut.air_max_hu
    bone = hu > lut.bone_min_hu
    soft = ~(air | bone)
    density = np.clip(1.0 + hu / 1000.0, 0.0, None).astype(np.float32)
    return {"air": air, "soft_tissue": soft, "bone": bone}, density


def polychromatic_integral(paths_mm: np.ndarray, spectrum: Spectrum,
                           lut: MaterialLUT) -> np.ndarray:
    """Detected energy for density-weighted per-material path lengths.

    ``paths_mm[..., m]`` follows the MATERIALS order.  Detection is
    energy-weighted: sum_E fluence(E) * E * exp(-sum_m mu(m,E) * path_m).
    """
    paths = np.asarray(paths_mm, dtype=np.float64)
    if paths.shape[-1] != len(MATERIALS):
        raise PhysicsError(
            f"expected {len(MATERIALS)} material paths, got {paths.shape[-1]}"
        )
    mu = np.stack([lut.mu_at(m, spectrum.energies_kev) for m in MATERIALS])  # (M, E)
    # optical depth per energy bin: (..., E)
    depth = paths @ mu
    weights = spectrum.fluence * spectrum.energies_kev
    return np.exp(-depth) @ weights


def gaussian_blur2d(img: np.ndarray, sigma_px: float) -> np.ndarray:
    """Separable blur with an explicitly sampled, normalized Gaussian kernel.

    `nearest` boundary handling keeps the blur of a constant image constant.
    """
    if sigma_px <= 0:
        return np.array(img, dtype=np.float64, copy=True)
    radius = int(np.ceil(4.0 * sigma_px))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma_px) ** 2)
    k /= k.sum()
    out = convolve1d(np.asarray(img, dtype=np.float64), k, axis=0, mode="nearest")
    return convolve1d(out, k, axis=1, mode="nearest")


def scatter_estimate(primary: np.ndarray, cfg: PhysicsConfig) -> np.ndarray:
    """Constant-fraction, low-frequency additive scatter surrogate."""
    if cfg.scatter_fraction == 0.0:
        return np.zeros_like(np.asarray(primary, dtype=np.float64))
    return cfg.scatter_fraction * gaussian_blur2d(primary, cfg.scatter_kernel_sigma_px)


def noise_apply(energy_img: np.ndarray, cfg: PhysicsConfig,
                rng: np.random.Generator) -> np.ndarray:
    """Signal-dependent (Poisson) plus readout (Gaussian) noise with saturation.

    The energy image is converted to expected photon counts via the
    unattenuated count ``photons_per_pixel``; output is a count image clamped
    to [0, saturation_fraction * photons_per_pixel].  With
    photons_per_pixel = inf the exact noiseless limit is returned (in
    transmission units, which downstream normalization cancels out).
    """
    e0 = cfg.spectrum.unattenuated_energy()
    transmission = np.asarray(energy_img, dtype=np.float64) / e0
    if not np.isfinite(cfg.photons_per_pixel):
        return np.clip(transmission, 0.0, cfg.saturation_fraction)
    expected = np.clip(transmission * cfg.photons_per_pixel, 0.0, None)
    counts = rng.poisson(expected).astype(np.float64)
    if cfg.readout_noise_sigma > 0:
        counts += rng.normal(0.0, cfg.readout_noise_sigma, size=counts.shape)
    return np.clip(counts, 0.0, cfg.saturation_fraction * cfg.photons_per_pixel)


def neglog_normalize(detected: np.ndarray, bone_dark: bool = False) -> np.ndarray:
    """Map a detected-signal image to [0, 1] via -log(I / I_max) + min-max.

    Default polarity is attenuation-like (bone bright); set ``bone_dark`` for
    the inverted display.  Zero/negative pixels are clamped to a tiny positive
    signal before the log.  An all-equal image maps to all zeros.
    """
    img = np.asarray(detected, dtype=np.float64)
    peak = img.max()
    if peak <= 0:
        return np.zeros_like(img)
    img = np.clip(img, peak * 1e-12, None)
    neg = -np.log(img / peak)
    span = neg.max() - neg.min()
    if span == 0:
        return np.zeros_like(neg)
    out = (neg - neg.min()) / span
    return 1.0 - out if bone_dark else out
