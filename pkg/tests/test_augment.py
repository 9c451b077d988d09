import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthex_forge.augment import (
    GEOMETRIC_EFFECTS,
    REGULAR_EFFECTS,
    STRONG_EFFECTS,
    AugmentationPlan,
    AugmentError,
    apply,
    apply_effect,
    plan,
    plan_from_seed,
)


@pytest.fixture
def image():
    rng = np.random.default_rng(0)
    img = rng.random((96, 96))
    img[20:50, 30:70] += 0.5
    return np.clip(img, 0, 1)


def test_regular_plan_is_exactly_the_three_effects():
    p = plan_from_seed("regular", 1)
    assert [e for e, _ in p.effects] == list(REGULAR_EFFECTS)


def test_strong_plan_counts():
    counts = set()
    for seed in range(500):
        p = plan_from_seed("strong", seed)
        ids = [e for e, _ in p.effects]
        assert ids[:3] == list(REGULAR_EFFECTS)
        extra = ids[3:]
        assert len(extra) <= 2
        assert all(e in STRONG_EFFECTS for e in extra)
        assert len(set(extra)) == len(extra)
        counts.add(len(extra))
    assert counts == {0, 1, 2}


def test_plan_deterministic():
    assert plan_from_seed("strong", 7).to_json() == plan_from_seed("strong", 7).to_json()


def test_plan_json_roundtrip():
    p = plan_from_seed("strong", 11)
    back = AugmentationPlan.from_json(p.to_json())
    assert back == p


def test_plan_invariants_enforced():
    good = plan_from_seed("regular", 0)
    with pytest.raises(AugmentError):
        AugmentationPlan(seed=0, level="regular",
                         effects=good.effects + (("invert", {}),))
    three_strong = good.effects + tuple(
        (e, {}) for e in ("invert", "multiply", "contrast")
    )
    with pytest.raises(AugmentError):
        AugmentationPlan(seed=0, level="strong", effects=three_strong)


def test_apply_deterministic(image):
    p = plan_from_seed("strong", 3)
    a = apply(image, p)
    b = apply(image, p)
    assert np.array_equal(a.image, b.image)


def test_gamma_one_is_identity_on_normalized(image):
    # a min-max normalized image passes through gamma=1 unchanged
    norm = (image - image.min()) / (image.max() - image.min())
    out = apply_effect("gamma", norm, {"gamma": 1.0})
    assert np.allclose(out.image, norm, atol=1e-12)


def test_gamma_constant_image_warns():
    with pytest.warns(UserWarning, match="constant"):
        out = apply_effect("gamma", np.full((8, 8), 0.5), {"gamma": 0.9})
    assert not out.image.any()


def test_double_invert_identity(image):
    # involution holds when the max is preserved across applications,
    # i.e. for images whose minimum is 0 (max(max - x) = max again)
    norm = (image - image.min()) / (image.max() - image.min())
    once = apply_effect("invert", norm, {})
    twice = apply_effect("invert", once.image, {})
    assert np.allclose(twice.image, norm, atol=1e-12)


def test_dropout_pixel_count_matches_plan_rate(image):
    params = {"mode": "pixels", "rate": 0.07, "seed": 123}
    out = apply_effect("dropout", image + 0.01, params)  # strictly positive
    zeroed = np.count_nonzero(out.image == 0.0)
    assert zeroed == round(0.07 * image.size)
    assert 0.01 * image.size <= zeroed <= 0.10 * image.size


def test_impulse_noise_replaces_ten_percent(image):
    params = {"variant": "salt", "rate": 0.10, "seed": 5}
    out = apply_effect("impulse_noise", image * 0.5, params)
    changed = np.count_nonzero(out.image != np.clip(image * 0.5, 0, 1))
    assert changed == round(0.10 * image.size)


def test_output_shape_always_preserved(image):
    for effect in REGULAR_EFFECTS + STRONG_EFFECTS:
        p = plan_from_seed("strong", 0)
        rng = np.random.default_rng(42)
        from synthex_forge.augment import _sample_params
        params = _sample_params(effect, rng)
        out = apply_effect(effect, image, params)
        assert out.image.shape == image.shape, effect
        assert out.image.min() >= 0.0 and out.image.max() <= 1.0, effect


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_full_plans_preserve_shape_and_range(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((48, 48))
    p = plan_from_seed("strong", seed)
    out = apply(img, p)
    assert out.image.shape == img.shape
    assert out.image.min() >= 0.0 and out.image.max() <= 1.0


def test_geometric_effects_move_labels_consistently(image):
    # a landmark at the center of a bright square must stay inside the
    # square's transformed mask for every geometric effect
    seg = np.zeros_like(image, dtype=np.uint8)
    seg[34:62, 30:58] = 1
    lm = (43.0, 47.0)  # (x, y) center of the square
    img = np.where(seg, 0.9, 0.1).astype(np.float64)
    for effect in GEOMETRIC_EFFECTS:
        for seed in range(5):
            from synthex_forge.augment import _sample_params
            params = _sample_params(effect, np.random.default_rng(seed))
            out = apply_effect(effect, img, params, seg=seg, landmark_px=(lm,))
            moved = out.landmark_px[0]
            if moved is None:
                continue
            x, y = int(round(moved[0])), int(round(moved[1]))
            assert out.seg[y, x] == 1, (effect, seed)


def test_nongeometric_effects_leave_labels_alone(image):
    seg = np.zeros_like(image, dtype=np.uint8)
    seg[10:20, 10:20] = 2
    lm = ((14.0, 14.0),)
    out = apply_effect("invert", image, {}, seg=seg, landmark_px=lm)
    assert np.array_equal(out.seg, seg)
    assert out.landmark_px == lm


def test_crop_then_resize_keeps_dims(image):
    params = {"frac": 0.9, "u": 0.3, "v": 0.8}
    out = apply_effect("random_crop", image, params)
    assert out.image.shape == image.shape


def test_unknown_effect_rejected(image):
    with pytest.raises(AugmentError):
        apply_effect("sparkle", image, {})
