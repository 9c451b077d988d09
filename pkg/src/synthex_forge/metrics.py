"""Evaluation metrics: Dice, confusion-matrix summaries, and the landmark
error-vs-activation curve.

The landmark curve sweeps a confidence threshold phi: a landmark counts as
activated when its peak heatmap response exceeds phi and its ground truth is
visible.  At each phi we report the activated fraction p and the mean
localization error over activated landmarks in detector-plane millimetres.
Numbers are reported at a target activation fraction (0.9 by default) as the
largest phi still achieving it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labels2d import LandmarkPrediction


class MetricsError(ValueError):
    pass


def detector_mm_per_px(output_resolution: int, native_px: int = 1536,
                       native_spacing_mm: float = 0.194) -> float:
    """Detector-plane mm per pixel at a rendered output resolution."""
    return native_spacing_mm * native_px / output_resolution


# ---------------------------------------------------------------------------
# segmentation metrics
# ---------------------------------------------------------------------------

def dice(pred_mask: np.ndarray, gt_mask: np.ndarray, class_id: int) -> float:
    """2|A n B| / (|A| + |B|); defined as 1.0 when both masks are empty."""
    pred_mask = np.asarray(pred_mask)
    gt_mask = np.asarray(gt_mask)
    if pred_mask.shape != gt_mask.shape:
        raise MetricsError(f"shape mismatch {pred_mask.shape} vs {gt_mask.shape}")
    a = pred_mask == class_id
    b = gt_mask == class_id
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.count_nonzero(a & b) / denom)


@dataclass(frozen=True)
class ConfusionStats:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def sensitivity(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def specificity(self) -> float:
        d = self.tn + self.fp
        return self.tn / d if d else 0.0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.sensitivity
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def f2(self) -> float:
        p, r = self.precision, self.sensitivity
        return 5 * p * r / (4 * p + r) if 4 * p + r else 0.0

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    def as_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
            "sensitivity": self.sensitivity, "specificity": self.specificity,
            "precision": self.precision, "f1": self.f1, "f2": self.f2,
            "accuracy": self.accuracy,
        }


def confusion(pred_mask: np.ndarray, gt_mask: np.ndarray) -> ConfusionStats:
    """Pixelwise confusion counts for binary masks (nonzero = positive)."""
    pred_mask = np.asarray(pred_mask)
    gt_mask = np.asarray(gt_mask)
    if pred_mask.shape != gt_mask.shape:
        raise MetricsError(f"shape mismatch {pred_mask.shape} vs {gt_mask.shape}")
    p = pred_mask.astype(bool)
    g = gt_mask.astype(bool)
    return ConfusionStats(
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
    )


# ---------------------------------------------------------------------------
# landmark curve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LandmarkCurve:
    """(phi, activated fraction p, mean error in mm) samples; e_mm is NaN
    where nothing is activated."""

    phi: np.ndarray
    p: np.ndarray
    e_mm: np.ndarray

    def __post_init__(self):
        if not (len(self.phi) == len(self.p) == len(self.e_mm)):
            raise MetricsError("curve arrays must have equal length")
        if np.any(np.diff(self.p) > 1e-12):
            raise MetricsError("activation must be non-increasing in phi")

    def report_at(self, target_p: float = 0.9):
        """Largest phi achieving p >= target; returns (phi, p, e_mm) or None."""
        ok = np.nonzero(self.p >= target_p)[0]
        if ok.size == 0:
            return None
        i = ok[-1]
        return float(self.phi[i]), float(self.p[i]), float(self.e_mm[i])


DEFAULT_PHI_GRID = np.linspace(0.0, 1.0, 101)


def landmark_curve(preds, gts, mm_per_px: float,
                   phi_grid=None) -> LandmarkCurve:
    """Sweep phi over per-image, per-landmark predictions.

    ``preds[i][k]`` is a LandmarkPrediction; ``gts[i][k]`` the matching ground
    truth pixel or None when invisible.  Landmarks with invisible ground truth
    are excluded from both numerator and denominator.
    """
    if mm_per_px <= 0:
        raise MetricsError("mm_per_px must be positive")
    if len(preds) != len(gts):
        raise MetricsError("prediction/gt image counts differ")
    phi_grid = DEFAULT_PHI_GRID if phi_grid is None else np.asarray(phi_grid)

    confs, errs = [], []
    for pred_img, gt_img in zip(preds, gts):
        if len(pred_img) != len(gt_img):
            raise MetricsError("prediction/gt landmark counts differ")
        for pred, gt in zip(pred_img, gt_img):
            if gt is None:
                continue
            if not isinstance(pred, LandmarkPrediction):
                raise MetricsError("predictions must be LandmarkPrediction")
            dx = pred.pixel[0] - gt[0]
            dy = pred.pixel[1] - gt[1]
            confs.append(pred.confidence)
            errs.append(np.hypot(dx, dy) * mm_per_px)
    confs = np.asarray(confs)
    errs = np.asarray(errs)
    n_visible = confs.size
    if n_visible == 0:
        raise MetricsError("no visible ground-truth landmarks")

    p = np.empty(len(phi_grid))
    e = np.empty(len(phi_grid))
    for i, phi in enumerate(phi_grid):
        act = confs > phi
        p[i] = act.sum() / n_visible
        e[i] = errs[act].mean() if act.any() else np.nan
    return LandmarkCurve(phi=np.asarray(phi_grid, dtype=np.float64), p=p, e_mm=e)


def summarize(values) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise MetricsError("cannot summarize an empty sequence")
    return float(values.mean()), float(values.std())
