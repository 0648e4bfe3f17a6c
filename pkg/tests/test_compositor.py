import numpy as np
import pytest

from spotlight.compositor import (
    ShadowMatte,
    detail_transfer,
    gaussian_blur,
    preserve_background,
    reexposed_render,
    shadow_matte,
)
from spotlight.imagecore import LINEAR, MaskMap, PixelMap
from spotlight.toyscene import make_scene_bundle


def img(data):
    return PixelMap(np.asarray(data, dtype=np.float32), LINEAR)


def random_img(seed, shape=(12, 12, 3), lo=0.05, hi=1.0):
    rng = np.random.default_rng(seed)
    return img(rng.uniform(lo, hi, shape))


class TestShadowMatte:
    def test_equal_inputs_matte_near_one(self):
        a = random_img(0, lo=0.15)  # eps rounding stays within 1e-3 for mid-tones
        matte = shadow_matte(a, a)
        np.testing.assert_allclose(matte.data, 1.0, atol=1e-3)

    def test_half_ratio(self):
        without = random_img(1, lo=0.2)
        with_ = img(without.data * 0.5)
        matte = shadow_matte(with_, without)
        np.testing.assert_allclose(matte.data, 0.5, atol=2e-3)

    def test_black_denominator_guard(self):
        without = img(np.zeros((4, 4, 3)))
        with_ = random_img(2, (4, 4, 3))
        matte = shadow_matte(with_, without)
        np.testing.assert_array_equal(matte.data, 1.0)

    def test_clamped_to_unit(self):
        without = img(np.full((4, 4, 3), 0.3))
        with_ = img(np.full((4, 4, 3), 0.9))  # brighter than the shadow-free pass
        matte = shadow_matte(with_, without)
        assert matte.data.max() <= 1.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            shadow_matte(random_img(0, (4, 4, 3)), random_img(0, (5, 5, 3)))


class TestPreserveBackground:
    def test_identity_composite_bitwise(self):
        bg = random_img(3)
        matte = ShadowMatte(np.ones_like(bg.data))
        out = preserve_background(bg, random_img(4), matte, MaskMap.zeros(12, 12))
        np.testing.assert_array_equal(out.data, bg.data)

    def test_object_region_passes_render_through(self):
        bg, render = random_img(5), random_img(6)
        matte = ShadowMatte(np.full_like(bg.data, 0.5))
        m_obj = np.zeros((12, 12), dtype=np.float32)
        m_obj[3:7, 3:7] = 1.0
        out = preserve_background(bg, render, matte, MaskMap(m_obj))
        np.testing.assert_array_equal(out.data[3:7, 3:7], render.data[3:7, 3:7])

    def test_scalar_attenuation(self):
        bg = img(np.full((1, 1, 3), 0.8))
        matte = ShadowMatte(np.full((1, 1, 3), 0.5, dtype=np.float32))
        out = preserve_background(bg, img(np.zeros((1, 1, 3))), matte, MaskMap.zeros(1, 1))
        np.testing.assert_allclose(out.data, 0.4, atol=1e-7)

    def test_never_brightens_background(self):
        rng = np.random.default_rng(7)
        bg = random_img(8)
        matte = ShadowMatte(rng.uniform(0, 1, bg.data.shape).astype(np.float32))
        out = preserve_background(bg, random_img(9), matte, MaskMap.zeros(12, 12))
        assert np.all(out.data <= bg.data + 1e-7)


class TestDetailTransfer:
    def test_constant_source_adds_nothing(self):
        src = img(np.full((16, 16, 3), 0.6))
        tgt = random_img(10, (16, 16, 3))
        out = detail_transfer(src, tgt, sigma=1.0)
        np.testing.assert_allclose(out.data, tgt.data, atol=1e-6)

    def test_blurred_target_recovers_source(self):
        src = random_img(11, (24, 24, 3))
        blurred = np.stack(
            [gaussian_blur(src.data[:, :, c].astype(np.float64), 1.0) for c in range(3)], axis=2
        )
        out = detail_transfer(src, img(np.clip(blurred, 0, None)), sigma=1.0)
        np.testing.assert_allclose(out.data, src.data, atol=1e-3)

    def test_detail_layer_zero_mean_interior(self):
        # smooth image: the high-pass layer carries no DC component
        scene = make_scene_bundle(seed=12, size=64)
        src = scene.background
        detail = src.data.astype(np.float64) - np.stack(
            [gaussian_blur(src.data[:, :, c].astype(np.float64), 1.0) for c in range(3)], axis=2
        )
        interior = detail[3:-3, 3:-3]
        assert abs(float(interior.mean())) < 1e-3

    def test_masked_application(self):
        src = random_img(13, (16, 16, 3))
        tgt = random_img(14, (16, 16, 3))
        m = np.zeros((16, 16), dtype=np.float32)
        m[4:8, 4:8] = 1.0
        out = detail_transfer(src, tgt, sigma=1.0, mask=MaskMap(m))
        np.testing.assert_array_equal(out.data[m == 0], tgt.data[m == 0])
        assert not np.allclose(out.data[m == 1], tgt.data[m == 1])

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            detail_transfer(random_img(0), random_img(1), sigma=0.0)


class TestReexposedRender:
    def test_identity_render_is_identity(self):
        wrapped = reexposed_render(lambda x: x, factor=2.0)
        src = random_img(15)
        np.testing.assert_array_equal(wrapped(src).data, src.data)

    def test_factor_one_noop(self):
        calls = []

        def render(x):
            calls.append(x)
            return x

        wrapped = reexposed_render(render, factor=1.0)
        src = random_img(16)
        np.testing.assert_array_equal(wrapped(src).data, src.data)

    def test_homogeneous_render_unchanged(self):
        def render(x):
            return PixelMap(x.data * np.float32(0.7), LINEAR)

        src = random_img(17)
        direct = render(src)
        wrapped = reexposed_render(render, factor=2.0)(src)
        np.testing.assert_allclose(wrapped.data, direct.data, atol=1e-6)

    def test_nonlinear_render_is_corrected(self):
        # an additive-bias render (the over-brightness mechanism) gets halved
        def render(x):
            return PixelMap(x.data + np.float32(0.2), LINEAR)

        src = img(np.full((2, 2, 3), 0.1))
        out = reexposed_render(render, factor=2.0)(src)
        np.testing.assert_allclose(out.data, 0.1 + 0.1, atol=1e-6)
