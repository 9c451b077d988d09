"""Seeded, composable domain-randomization effects at two strength levels.

A plan is sampled once (all effect choices and parameters frozen, stochastic
effects carry their own sub-seed) and can be serialized to JSON and replayed
bit-identically.  Regular plans always contain exactly the three regular
effects; strong plans append up to two randomly chosen strong effects so the
augmentation never gets too heavy.

Effects operate on [0, 1] intensity images and clamp back after each step.
Geometric effects (crop, affine, distort) transform the segmentation mask and
landmark pixels with the same spatial map; heatmaps are regenerated from the
transformed landmarks downstream, keeping the Gaussians symmetric.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import affine_transform, map_coordinates, uniform_filter

from .physics import gaussian_blur2d

REGULAR_EFFECTS = ("gaussian_noise", "gamma", "random_crop")
STRONG_EFFECTS = (
    "invert", "impulse_noise", "affine", "contrast", "blur",
    "box_corruption", "dropout", "sharpen_emboss", "pooling",
    "multiply", "distort",
)
GEOMETRIC_EFFECTS = ("random_crop", "affine", "distort")
LEVELS = ("regular", "strong")

MAX_STRONG_PER_PLAN = 2


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentationPlan:
    seed: int
    level: str
    effects: tuple   # ordered (effect_id, params dict) pairs

    def __post_init__(self):
        if self.level not in LEVELS:
            raise AugmentError(f"unknown level {self.level!r}")
        ids = [e for e, _ in self.effects]
        if ids[: len(REGULAR_EFFECTS)] != list(REGULAR_EFFECTS):
            raise AugmentError("plan must start with the three regular effects")
        extra = ids[len(REGULAR_EFFECTS):]
        if self.level == "regular" and extra:
            raise AugmentError("regular plans contain only regular effects")
        if len(extra) > MAX_STRONG_PER_PLAN:
            raise AugmentError("strong plans concatenate at most two strong effects")
        for e in extra:
            if e not in STRONG_EFFECTS:
                raise AugmentError(f"unknown strong effect {e!r}")
        if len(set(extra)) != len(extra):
            raise AugmentError("strong effects must be distinct")

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "level": self.level,
            "effects": [[e, p] for e, p in self.effects],
        })

    @staticmethod
    def from_json(text: str) -> "AugmentationPlan":
        d = json.loads(text)
        return AugmentationPlan(
            seed=int(d["seed"]),
            level=str(d["level"]),
            effects=tuple((str(e), dict(p)) for e, p in d["effects"]),
        )


@dataclass(frozen=True)
class AugmentResult:
    image: np.ndarray
    seg: np.ndarray | None
    landmark_px: tuple


def _subseed(rng) -> int:
    return int(rng.integers(0, 2**31 - 1))


# ---------------------------------------------------------------------------
# parameter sampling
# ---------------------------------------------------------------------------

def _sample_params(effect: str, rng: np.random.Generator) -> dict:
    if effect == "gaussian_noise":
        return {"sigma": float(rng.uniform(0.005, 0.1)), "seed": _subseed(rng)}
    if effect == "gamma":
        return {"gamma": float(rng.uniform(0.7, 1.3))}
    if effect == "random_crop":
        return {"frac": 0.9, "u": float(rng.uniform()), "v": float(rng.uniform())}
    if effect == "invert":
        return {}
    if effect == "impulse_noise":
        variant = ["impulse", "pepper", "salt"][int(rng.integers(3))]
        return {"variant": variant, "rate": 0.10, "seed": _subseed(rng)}
    if effect == "affine":
        return {
            "translate_frac": [float(rng.uniform(-0.1, 0.1)) for _ in range(2)],
            "rotate_deg": float(rng.uniform(-15, 15)),
            "shear_deg": float(rng.uniform(-10, 10)),
            "scale": float(rng.uniform(0.85, 1.15)),
        }
    if effect == "contrast":
        mode = ["linear", "log", "sigmoid"][int(rng.integers(3))]
        p = {"mode": mode}
        if mode == "linear":
            p["gain"] = float(rng.uniform(0.5, 1.5))
        elif mode == "log":
            p["gain"] = float(rng.uniform(0.8, 1.2))
        else:
            p["gain"] = float(rng.uniform(5.0, 10.0))
            p["cutoff"] = float(rng.uniform(0.3, 0.7))
        return p
    if effect == "blur":
        if rng.integers(2):
            return {"mode": "gaussian", "sigma": 3.0}
        return {"mode": "average", "kernel": int(rng.integers(2, 8))}
    if effect == "box_corruption":
        n = int(rng.integers(1, 6))
        boxes = [
            {"u": float(rng.uniform()), "v": float(rng.uniform()),
             "side_frac": float(rng.uniform(0.05, 0.20))}
            for _ in range(n)
        ]
        return {"boxes": boxes, "seed": _subseed(rng)}
    if effect == "dropout":
        if rng.integers(2):
            return {"mode": "pixels", "rate": float(rng.uniform(0.01, 0.10)),
                    "seed": _subseed(rng)}
        return {"mode": "rect", "area_frac": float(rng.uniform(0.02, 0.05)),
                "u": float(rng.uniform()), "v": float(rng.uniform())}
    if effect == "sharpen_emboss":
        mode = "sharpen" if rng.integers(2) else "emboss"
        return {"mode": mode, "alpha": float(rng.uniform(0.0, 1.0))}
    if effect == "pooling":
        mode = ["avg", "max", "min", "median"][int(rng.integers(4))]
        return {"mode": mode, "kernel": int(rng.integers(2, 5))}
    if effect == "multiply":
        mode = "brightness" if rng.integers(2) else "elementwise"
        p = {"mode": mode}
        if mode == "brightness":
            p["factor"] = float(rng.uniform(0.5, 1.5))
        else:
            p["seed"] = _subseed(rng)
        return p
    if effect == "distort":
        return {"grid": 4, "scale": float(rng.uniform(0.01, 0.03)),
                "seed": _subseed(rng)}
    raise AugmentError(f"unknown effect {effect!r}")


def plan(level: str, rng: np.random.Generator, seed: int = 0) -> AugmentationPlan:
    """Sample a plan: the regular effects always, plus 0-2 strong effects."""
    if level not in LEVELS:
        raise AugmentError(f"unknown level {level!r}")
    effects = [(e, _sample_params(e, rng)) for e in REGULAR_EFFECTS]
    if level == "strong":
        n_strong = int(rng.integers(0, MAX_STRONG_PER_PLAN + 1))
        chosen = rng.choice(len(STRONG_EFFECTS), size=n_strong, replace=False)
        for idx in chosen:
            e = STRONG_EFFECTS[int(idx)]
            effects.append((e, _sample_params(e, rng)))
    return AugmentationPlan(seed=seed, level=level, effects=tuple(effects))


def plan_from_seed(level: str, seed: int) -> AugmentationPlan:
    return plan(level, np.random.default_rng(seed), seed=seed)


# ---------------------------------------------------------------------------
# effect application
# ---------------------------------------------------------------------------

def _minmax(img):
    lo, hi = img.min(), img.max()
    if hi == lo:
        return None
    return (img - lo) / (hi - lo)


def _apply_gaussian_noise(img, p, ctx):
    rng = np.random.default_rng(p["seed"])
    return img + rng.normal(0.0, p["sigma"], size=img.shape), ctx


def _apply_gamma(img, p, ctx):
    norm = _minmax(img)
    if norm is None:
        warnings.warn("gamma on a constant image is undefined; returning zeros")
        return np.zeros_like(img), ctx
    return norm ** p["gamma"], ctx


def _resize_bilinear(img, out_shape, src_origin, src_side, order):
    # align-corners sampling: output pixel o maps to origin + o*(side-1)/(n-1)
    h, w = out_shape
    oy = src_origin[0] + np.arange(h) * (src_side[0] - 1) / (h - 1)
    ox = src_origin[1] + np.arange(w) * (src_side[1] - 1) / (w - 1)
    coords = np.stack(np.meshgrid(oy, ox, indexing="ij"))
    return map_coordinates(img, coords, order=order, mode="nearest")


def _apply_random_crop(img, p, ctx):
    h, w = img.shape
    side = max(2, int(round(p["frac"] * min(h, w))))
    y0 = int(round(p["v"] * (h - side)))
    x0 = int(round(p["u"] * (w - side)))
    out = _resize_bilinear(img, (h, w), (y0, x0), (side, side), order=1)
    seg, lms = ctx
    if seg is not None:
        seg = _resize_bilinear(seg, (h, w), (y0, x0), (side, side),
                               order=0).astype(seg.dtype)
    def fwd(px):
        x = (px[0] - x0) * (w - 1) / (side - 1)
        y = (px[1] - y0) * (h - 1) / (side - 1)
        return (x, y) if 0 <= x <= w - 1 and 0 <= y <= h - 1 else None
    lms = tuple(None if q is None else fwd(q) for q in lms)
    return out, (seg, lms)


def _apply_invert(img, p, ctx):
    return img.max() - img, ctx


def _apply_impulse_noise(img, p, ctx):
    rng = np.random.default_rng(p["seed"])
    out = img.copy().ravel()
    n = int(round(p["rate"] * out.size))
    idx = rng.choice(out.size, size=n, replace=False)
    if p["variant"] == "pepper":
        out[idx] = 0.0
    elif p["variant"] == "salt":
        out[idx] = 1.0
    else:
        out[idx] = rng.uniform(0.0, 1.0, size=n)
    return out.reshape(img.shape), ctx


def _affine_matrices(p, shape):
    h, w = shape
    c = np.array([(h - 1) / 2.0, (w - 1) / 2.0])     # (y, x)
    th = np.deg2rad(p["rotate_deg"])
    sh = np.tan(np.deg2rad(p["shear_deg"]))
    s = p["scale"]
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    shear = np.array([[1.0, sh], [0.0, 1.0]])
    A = rot @ shear * s                               # forward, (y, x) order
    t = np.array([p["translate_frac"][1] * h, p["translate_frac"][0] * w])
    return A, t, c


def _apply_affine(img, p, ctx):
    A, t, c = _affine_matrices(p, img.shape)
    Ainv = np.linalg.inv(A)
    offset = c - Ainv @ (c + t)
    out = affine_transform(img, Ainv, offset=offset, order=1, mode="constant",
                           cval=0.0)
    seg, lms = ctx
    if seg is not None:
        seg = affine_transform(seg, Ainv, offset=offset, order=0,
                               mode="constant", cval=0).astype(seg.dtype)
    h, w = img.shape
    def fwd(px):
        yx = A @ (np.array([px[1], px[0]]) - c) + c + t
        x, y = yx[1], yx[0]
        return (float(x), float(y)) if 0 <= x <= w - 1 and 0 <= y <= h - 1 else None
    lms = tuple(None if q is None else fwd(q) for q in lms)
    return out, (seg, lms)


def _apply_contrast(img, p, ctx):
    if p["mode"] == "linear":
        return 0.5 + p["gain"] * (img - 0.5), ctx
    if p["mode"] == "log":
        return p["gain"] * np.log2(1.0 + np.clip(img, 0, 1)), ctx
    return 1.0 / (1.0 + np.exp(p["gain"] * (p["cutoff"] - img))), ctx


def _apply_blur(img, p, ctx):
    if p["mode"] == "gaussian":
        return gaussian_blur2d(img, p["sigma"]), ctx
    return uniform_filter(img, size=p["kernel"], mode="nearest"), ctx


def _apply_box_corruption(img, p, ctx):
    rng = np.random.default_rng(p["seed"])
    out = img.copy()
    h, w = img.shape
    for box in p["boxes"]:
        side = max(1, int(round(box["side_frac"] * w)))
        y0 = int(round(box["v"] * (h - side)))
        x0 = int(round(box["u"] * (w - side)))
        out[y0:y0 + side, x0:x0 + side] = rng.uniform(0.0, 1.0, (side, side))
    return out, ctx


def _apply_dropout(img, p, ctx):
    out = img.copy()
    h, w = img.shape
    if p["mode"] == "pixels":
        rng = np.random.default_rng(p["seed"])
        flat = out.ravel()
        n = int(round(p["rate"] * flat.size))
        idx = rng.choice(flat.size, size=n, replace=False)
        flat[idx] = 0.0
        out = flat.reshape(img.shape)
    else:
        side = max(1, int(round(np.sqrt(p["area_frac"] * h * w))))
        y0 = int(round(p["v"] * (h - side)))
        x0 = int(round(p["u"] * (w - side)))
        out[y0:y0 + side, x0:x0 + side] = 0.0
    return out, ctx


_EMBOSS_KERNEL = np.array([[-1.0, -1.0, 0.0],
                           [-1.0, 1.0, 1.0],
                           [0.0, 1.0, 1.0]])


def _apply_sharpen_emboss(img, p, ctx):
    alpha = p["alpha"]
    if p["mode"] == "sharpen":
        sharpened = img + (img - gaussian_blur2d(img, 1.0))
        return (1.0 - alpha) * img + alpha * sharpened, ctx
    from scipy.ndimage import convolve
    embossed = convolve(img, _EMBOSS_KERNEL, mode="nearest")
    return img + alpha * embossed, ctx


def _apply_pooling(img, p, ctx):
    k = p["kernel"]
    h, w = img.shape
    ph = (k - h % k) % k
    pw = (k - w % k) % k
    padded = np.pad(img, ((0, ph), (0, pw)), mode="edge")
    blocks = padded.reshape(padded.shape[0] // k, k, padded.shape[1] // k, k)
    blocks = blocks.transpose(0, 2, 1, 3).reshape(
        padded.shape[0] // k, padded.shape[1] // k, k * k)
    if p["mode"] == "avg":
        pooled = blocks.mean(axis=-1)
    elif p["mode"] == "max":
        pooled = blocks.max(axis=-1)
    elif p["mode"] == "min":
        pooled = blocks.min(axis=-1)
    else:
        pooled = np.median(blocks, axis=-1)
    up = np.repeat(np.repeat(pooled, k, axis=0), k, axis=1)
    return up[:h, :w], ctx


def _apply_multiply(img, p, ctx):
    if p["mode"] == "brightness":
        return img * p["factor"], ctx
    rng = np.random.default_rng(p["seed"])
    return img * rng.uniform(0.5, 1.5, size=img.shape), ctx


def _displacement_field(p, shape):
    rng = np.random.default_rng(p["seed"])
    h, w = shape
    g = p["grid"]
    amp = p["scale"] * min(h, w)
    coarse = rng.normal(0.0, amp, size=(2, g, g))
    oy = np.arange(h) * (g - 1) / (h - 1)
    ox = np.arange(w) * (g - 1) / (w - 1)
    coords = np.stack(np.meshgrid(oy, ox, indexing="ij"))
    return np.stack([
        map_coordinates(coarse[0], coords, order=1, mode="nearest"),
        map_coordinates(coarse[1], coords, order=1, mode="nearest"),
    ])


def _apply_distort(img, p, ctx):
    # smooth local distortion from a jittered control grid (piecewise local
    # warp); output pixel o samples input at o + D(o)
    h, w = img.shape
    D = _displacement_field(p, img.shape)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.stack([ys + D[0], xs + D[1]])
    out = map_coordinates(img, coords, order=1, mode="nearest")
    seg, lms = ctx
    if seg is not None:
        seg = map_coordinates(seg, coords, order=0, mode="nearest").astype(seg.dtype)
    def fwd(px):
        # invert o + D(o) = p by fixed-point iteration (D is smooth and small)
        o = np.array([px[1], px[0]], dtype=np.float64)
        target = o.copy()
        for _ in range(8):
            d = np.array([
                map_coordinates(D[0], o.reshape(2, 1), order=1, mode="nearest")[0],
                map_coordinates(D[1], o.reshape(2, 1), order=1, mode="nearest")[0],
            ])
            o = target - d
        x, y = o[1], o[0]
        return (float(x), float(y)) if 0 <= x <= w - 1 and 0 <= y <= h - 1 else None
    lms = tuple(None if q is None else fwd(q) for q in lms)
    return out, (seg, lms)


_APPLIERS = {
    "gaussian_noise": _apply_gaussian_noise,
    "gamma": _apply_gamma,
    "random_crop": _apply_random_crop,
    "invert": _apply_invert,
    "impulse_noise": _apply_impulse_noise,
    "affine": _apply_affine,
    "contrast": _apply_contrast,
    "blur": _apply_blur,
    "box_corruption": _apply_box_corruption,
    "dropout": _apply_dropout,
    "sharpen_emboss": _apply_sharpen_emboss,
    "pooling": _apply_pooling,
    "multiply": _apply_multiply,
    "distort": _apply_distort,
}


def apply_effect(effect: str, img: np.ndarray, params: dict,
                 seg=None, landmark_px=()) -> AugmentResult:
    """Apply a single effect (clamped to [0, 1]); labels follow geometric maps."""
    if effect not in _APPLIERS:
        raise AugmentError(f"unknown effect {effect!r}")
    if not np.all(np.isfinite(img)):
        raise AugmentError("image must be finite")
    out, (seg, lms) = _APPLIERS[effect](
        np.asarray(img, dtype=np.float64), params, (seg, tuple(landmark_px))
    )
    return AugmentResult(image=np.clip(out, 0.0, 1.0), seg=seg, landmark_px=lms)


def apply(img: np.ndarray, p: AugmentationPlan, seg=None,
          landmark_px=()) -> AugmentResult:
    """Replay a plan on an image (and labels); bit-identical across runs."""
    res = AugmentResult(
        image=np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0),
        seg=seg, landmark_px=tuple(landmark_px),
    )
    for effect, params in p.effects:
        res = apply_effect(effect, res.image, params, res.seg, res.landmark_px)
    return res
