"""Parametric lighting: a spherical-gaussian + ambient environment model,
ambient estimation from the background, and user-controlled direction sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imagecore import LINEAR, PixelMap
from .shadowsynth import GOLDEN_ANGLE, DirectionalLight

DEFAULT_BANDWIDTH = 300.0
# Dominant-light to ambient intensity ratio. The source panorama statistics
# are not shipped, so this stays a config constant; it already includes the
# divide-by-two hemisphere correction.
DEFAULT_INTENSITY_RATIO = 6.0


@dataclass(frozen=True)
class EnvMapParams:
    c_light: np.ndarray  # RGB radiance of the dominant lobe
    c_amb: np.ndarray  # RGB ambient radiance
    v: np.ndarray  # unit dominant light direction
    lam: float = DEFAULT_BANDWIDTH
    k: float = DEFAULT_INTENSITY_RATIO

    def __post_init__(self):
        for name in ("c_light", "c_amb"):
            c = np.asarray(getattr(self, name), dtype=np.float64)
            if c.shape != (3,) or c.min() < 0:
                raise ValueError(f"{name} must be a non-negative RGB triple")
            object.__setattr__(self, name, c)
        v = np.asarray(self.v, dtype=np.float64)
        if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError("v must be a unit 3-vector")
        object.__setattr__(self, "v", v)
        if self.lam <= 0:
            raise ValueError("bandwidth must be > 0")

    @classmethod
    def from_background(
        cls,
        bg: PixelMap,
        direction: DirectionalLight,
        lam: float = DEFAULT_BANDWIDTH,
        k: float = DEFAULT_INTENSITY_RATIO,
    ) -> "EnvMapParams":
        c_amb = ambient_from_background(bg)
        return cls(light_color(c_amb, k), c_amb, direction.direction, lam, k)


def eval_envmap(omega: np.ndarray, p: EnvMapParams) -> np.ndarray:
    """Radiance along omega: c_light * exp(lam * (omega . v - 1)) + c_amb.

    Accepts a single direction (3,) or a batch (N, 3); returns matching RGB.
    """
    omega = np.asarray(omega, dtype=np.float64)
    single = omega.ndim == 1
    pts = omega[None, :] if single else omega
    norms = np.linalg.norm(pts, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-6):
        raise ValueError("omega must be unit length")
    lobe = np.exp(p.lam * (pts @ p.v - 1.0))[:, None] * p.c_light[None, :]
    out = lobe + p.c_amb[None, :]
    return out[0] if single else out


def ambient_from_background(bg: PixelMap) -> np.ndarray:
    """Per-channel mean of the linear background."""
    if bg.space != LINEAR:
        raise ValueError("ambient estimation expects a linear-space image")
    if bg.data.size == 0:
        raise ValueError("empty image")
    color = bg.data[:, :, :3] if bg.channels >= 3 else np.repeat(bg.data, 3, axis=2)
    return color.reshape(-1, 3).mean(axis=0).astype(np.float64)


def light_color(c_amb: np.ndarray, k: float = DEFAULT_INTENSITY_RATIO) -> np.ndarray:
    """Dominant light color: the ambient chroma normalized to unit norm, scaled by k."""
    c_amb = np.asarray(c_amb, dtype=np.float64)
    norm = np.linalg.norm(c_amb)
    if norm == 0:
        raise ValueError("ambient color must be non-zero")
    return k * c_amb / norm


def user_controlled_directions(
    elevation_deg: float = 45.0, count: int = 5, step_deg: float = 45.0
) -> list[DirectionalLight]:
    """Azimuth fan symmetric about the behind-object axis (azimuth 0), in
    fixed increments at a fixed elevation."""
    if count < 1 or count % 2 == 0:
        raise ValueError("direction count must be odd and >= 1")
    offsets = (np.arange(count) - (count - 1) / 2.0) * step_deg
    return [DirectionalLight.from_angles(float(a), elevation_deg) for a in offsets]


def sg_sphere_integral(p: EnvMapParams) -> np.ndarray:
    """Closed form of the SG lobe integrated over the sphere:
    c_light * 2*pi*(1 - exp(-2*lam)) / lam."""
    return p.c_light * (2.0 * math.pi * (1.0 - math.exp(-2.0 * p.lam)) / p.lam)


def uniform_sphere_points(n: int, method: str = "fibonacci", seed: int | None = None) -> np.ndarray:
    """Uniformly distributed unit vectors: a deterministic equal-area
    Fibonacci set, or iid random draws when method="random"."""
    if method == "fibonacci":
        i = np.arange(n, dtype=np.float64)
        z = 1.0 - 2.0 * (i + 0.5) / n
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        theta = i * GOLDEN_ANGLE
        return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    if method == "random":
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((n, 3))
        return pts / np.linalg.norm(pts, axis=1, keepdims=True)
    raise ValueError(f"unknown sampling method {method!r}")


def sg_sphere_integral_mc(
    p: EnvMapParams, n: int = 100_000, method: str = "fibonacci", seed: int | None = None
) -> np.ndarray:
    """Monte-Carlo estimate of the SG lobe's sphere integral from uniform samples."""
    pts = uniform_sphere_points(n, method, seed)
    lobe = np.exp(p.lam * (pts @ p.v - 1.0))
    return 4.0 * math.pi * lobe.mean() * p.c_light


def envmap_to_latlong(p: EnvMapParams, width: int = 256, height: int = 128) -> PixelMap:
    """Rasterize the analytic environment to an equirectangular image:
    +Z forward at the center column, row 0 at the zenith."""
    rows = (np.arange(height) + 0.5) / height * math.pi  # polar angle from zenith
    cols = ((np.arange(width) + 0.5) / width - 0.5) * 2.0 * math.pi
    sin_t = np.sin(rows)[:, None]
    omega = np.stack(
        [
            np.broadcast_to(sin_t * np.sin(cols)[None, :], (height, width)),
            np.broadcast_to(-np.cos(rows)[:, None], (height, width)),  # up is -y
            np.broadcast_to(sin_t * np.cos(cols)[None, :], (height, width)),
        ],
        axis=2,
    )
    radiance = eval_envmap(omega.reshape(-1, 3), p).reshape(height, width, 3)
    return PixelMap(radiance.astype(np.float32), LINEAR)
