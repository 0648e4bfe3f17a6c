import math

import numpy as np
import pytest

from spotlight.imagecore import LINEAR, PixelMap
from spotlight.lighting import (
    EnvMapParams,
    ambient_from_background,
    envmap_to_latlong,
    eval_envmap,
    light_color,
    sg_sphere_integral,
    sg_sphere_integral_mc,
    uniform_sphere_points,
    user_controlled_directions,
)


def params(v=(0.0, 0.0, 1.0), lam=300.0):
    v = np.asarray(v, dtype=np.float64)
    return EnvMapParams(
        c_light=np.array([2.0, 1.0, 0.5]),
        c_amb=np.array([0.2, 0.3, 0.1]),
        v=v / np.linalg.norm(v),
        lam=lam,
    )


class TestEvalEnvmap:
    def test_peak_at_dominant_direction(self):
        p = params()
        out = eval_envmap(p.v, p)
        np.testing.assert_array_equal(out, p.c_light + p.c_amb)

    def test_opposite_direction_is_ambient(self):
        p = params()
        out = eval_envmap(-p.v, p)
        np.testing.assert_allclose(out, p.c_amb, atol=1e-12 * np.max(p.c_light))

    def test_half_power_angle(self):
        # solve exp(lam * (cos - 1)) = 1/2  =>  cos = 1 - ln2/lam
        p = params()
        cos = 1.0 - math.log(2.0) / p.lam
        omega = np.array([math.sqrt(1.0 - cos * cos), 0.0, cos])
        out = eval_envmap(omega, p)
        np.testing.assert_allclose(out, p.c_light / 2.0 + p.c_amb, atol=1e-9)

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(12)
        rot, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        omega = rng.standard_normal(3)
        omega /= np.linalg.norm(omega)
        p = params(v=(0.2, -0.7, 0.9))
        p_rot = EnvMapParams(p.c_light, p.c_amb, rot @ p.v, p.lam)
        np.testing.assert_allclose(
            eval_envmap(omega, p), eval_envmap(rot @ omega, p_rot), atol=1e-12
        )

    def test_non_unit_omega_rejected(self):
        with pytest.raises(ValueError):
            eval_envmap(np.array([0.0, 0.0, 2.0]), params())


class TestAmbient:
    def test_constant_image(self):
        img = PixelMap(np.full((6, 6, 3), 0.37, dtype=np.float32), LINEAR)
        np.testing.assert_allclose(ambient_from_background(img), 0.37, atol=1e-6)

    def test_half_and_half(self):
        data = np.zeros((4, 4, 3), dtype=np.float32)
        data[:2] = 1.0
        np.testing.assert_allclose(
            ambient_from_background(PixelMap(data, LINEAR)), 0.5, atol=1e-7
        )

    def test_linearity_in_scale(self):
        rng = np.random.default_rng(1)
        data = rng.uniform(0, 1, (8, 8, 3)).astype(np.float32)
        a = ambient_from_background(PixelMap(data, LINEAR))
        b = ambient_from_background(PixelMap(3.0 * data, LINEAR))
        np.testing.assert_allclose(b, 3.0 * a, rtol=1e-6)


class TestLightColor:
    def test_unit_norm_input(self):
        np.testing.assert_allclose(light_color(np.array([1.0, 0.0, 0.0]), 2.0), [2.0, 0.0, 0.0])

    def test_norm_cancels(self):
        np.testing.assert_allclose(light_color(np.array([3.0, 4.0, 0.0]), 5.0), [3.0, 4.0, 0.0])

    def test_result_norm_is_k(self):
        rng = np.random.default_rng(2)
        for k in (0.5, 6.0, 11.0):
            c = rng.uniform(0.01, 2.0, 3)
            assert np.linalg.norm(light_color(c, k)) == pytest.approx(k, rel=1e-9)

    def test_zero_ambient_rejected(self):
        with pytest.raises(ValueError):
            light_color(np.zeros(3), 6.0)


class TestUserControlledDirections:
    def test_five_directions_45_apart(self):
        lights = user_controlled_directions(45.0, 5)
        assert len(lights) == 5
        azimuths = [l.azimuth for l in lights]
        np.testing.assert_allclose(np.diff(azimuths), 45.0)
        assert all(l.elevation == 45.0 for l in lights)

    def test_single_direction_is_behind_axis(self):
        (light,) = user_controlled_directions(45.0, 1)
        assert light.azimuth == 0.0
        np.testing.assert_allclose(light.direction, [0.0, -math.sin(math.radians(45)), math.cos(math.radians(45))], atol=1e-12)

    def test_mirror_symmetry(self):
        azimuths = [l.azimuth for l in user_controlled_directions(30.0, 7)]
        np.testing.assert_allclose(azimuths, [-a for a in azimuths[::-1]])

    def test_even_count_rejected(self):
        with pytest.raises(ValueError):
            user_controlled_directions(45.0, 4)


class TestSphereIntegral:
    def test_uniform_points_are_unit(self):
        pts = uniform_sphere_points(1000)
        np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)
        # equal-area set covers both hemispheres evenly
        assert abs(float(np.mean(pts[:, 2] > 0)) - 0.5) < 0.01

    def test_matches_closed_form_within_two_percent(self):
        for v in ((0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (0.4, -0.6, 0.7)):
            p = params(v=v)
            est = sg_sphere_integral_mc(p, 100_000)
            exact = sg_sphere_integral(p)
            assert np.max(np.abs(est - exact) / exact) < 0.02

    def test_closed_form_value(self):
        p = params(lam=300.0)
        expected = p.c_light * 2.0 * math.pi * (1.0 - math.exp(-600.0)) / 300.0
        np.testing.assert_allclose(sg_sphere_integral(p), expected, rtol=1e-12)


class TestLatLongExport:
    def test_orientation(self):
        p = params(v=(0.0, 0.0, 1.0))
        img = envmap_to_latlong(p, width=64, height=32)
        assert (img.height, img.width, img.channels) == (32, 64, 3)
        # center pixel looks along +z: the dominant direction
        center = img.data[16, 32]
        assert center.max() > img.data[0, 0].max()
        # zenith row is ambient only for a horizon-level light
        np.testing.assert_allclose(img.data[0].mean(axis=0), p.c_amb, atol=1e-6)
