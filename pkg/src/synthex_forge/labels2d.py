"""Landmark heatmap encoding/decoding and the heatmap regression reference loss.

Heatmaps are unnormalized symmetric Gaussians with amplitude 1 at the
landmark pixel (zero map when the landmark is invisible), so a confidence
threshold keeps the same meaning at any resolution.  Pixels are (x, y);
arrays are indexed [y, x].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class LandmarkPrediction:
    pixel: tuple[int, int]    # (x, y)
    confidence: float         # peak heatmap response

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise LabelError(f"confidence {self.confidence} outside [0, 1]")


def encode_heatmap(pixel, dims: tuple[int, int], sigma_px: float) -> np.ndarray:
    """Gaussian response map for a landmark at ``pixel`` (or None if invisible).

    dims is (width, height); the returned array has shape (height, width).
    """
    if sigma_px <= 0:
        raise LabelError("sigma_px must be positive")
    w, h = dims
    if pixel is None:
        return np.zeros((h, w), dtype=np.float32)
    px, py = float(pixel[0]), float(pixel[1])
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    d2 = (xs - px) ** 2 + (ys - py) ** 2
    return np.exp(-0.5 * d2 / sigma_px**2).astype(np.float32)


def decode_heatmap(heatmap: np.ndarray) -> LandmarkPrediction:
    """Argmax location and peak value; ties break to the smallest row-major
    index.  An all-zero map decodes with confidence 0 (never activated)."""
    hm = np.asarray(heatmap)
    flat = int(np.argmax(hm))
    y, x = divmod(flat, hm.shape[1])
    return LandmarkPrediction(pixel=(x, y), confidence=float(hm[y, x]))


def mse_heatmap_loss(pred: np.ndarray, ref: np.ndarray) -> float:
    """Mean over pixels of the squared difference; reference implementation
    for parity checks against training-side losses."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise LabelError(f"shape mismatch {pred.shape} vs {ref.shape}")
    return float(np.mean((pred - ref) ** 2))
