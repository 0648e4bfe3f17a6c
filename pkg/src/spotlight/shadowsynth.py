"""Coarse shadow-mask synthesis by three routes: depth-based shadow mapping,
pixel-height soft shadows for 2D cutouts, and scribble ingestion.

Camera/world convention: x right, y down, z forward (image convention), so
"up" is -y. Azimuth 0 points along +z (away from the camera, behind the
object) and positive elevation raises the light above the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imagecore import MaskMap, PixelMap

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
WORLD_UP = np.array([0.0, -1.0, 0.0])


@dataclass(frozen=True)
class Heightfield:
    """Per-pixel 3D positions in camera space plus a validity mask."""

    points: np.ndarray  # (H, W, 3) float64
    valid: MaskMap

    def __post_init__(self):
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise ValueError(f"heightfield points must be HxWx3, got {self.points.shape}")
        if self.points.shape[:2] != self.valid.data.shape:
            raise ValueError("points and validity mask must share dimensions")
        ok = self.valid.data >= 0.5
        if not np.all(np.isfinite(self.points[ok])):
            raise ValueError("valid heightfield points must be finite")

    def valid_points(self, extra_mask: np.ndarray | None = None) -> np.ndarray:
        sel = self.valid.data >= 0.5
        if extra_mask is not None:
            sel = sel & extra_mask
        return self.points[sel]


@dataclass(frozen=True)
class DirectionalLight:
    """Distant light; ``direction`` is the unit vector toward the light."""

    direction: np.ndarray
    azimuth: float  # degrees
    elevation: float  # degrees

    @classmethod
    def from_angles(cls, azimuth_deg: float, elevation_deg: float) -> "DirectionalLight":
        az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
        direction = np.array(
            [math.cos(el) * math.sin(az), -math.sin(el), math.cos(el) * math.cos(az)]
        )
        return cls(direction / np.linalg.norm(direction), azimuth_deg, elevation_deg)

    def opposite_azimuth(self) -> "DirectionalLight":
        return DirectionalLight.from_angles(self.azimuth + 180.0, self.elevation)

    def __post_init__(self):
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-6:
            raise ValueError("light direction must be a unit vector")


@dataclass(frozen=True)
class PointLight2D:
    """2D point light: ground-foot pixel coordinates, pixel height, softness."""

    x: float
    y: float
    h: float
    radius: float = 0.0

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("point light height must be > 0")
        if self.radius < 0:
            raise ValueError("light radius must be >= 0")


class PixelHeightMap:
    """Per-object-pixel height above its ground foot, in pixels."""

    def __init__(self, heights: np.ndarray):
        heights = np.asarray(heights, dtype=np.float32)
        if heights.ndim != 2:
            raise ValueError("pixel heights must be HxW")
        if heights.min() < 0:
            raise ValueError("pixel heights must be >= 0")
        heights = heights.copy()
        heights.flags.writeable = False
        self.heights = heights


def backproject_depth(
    depth: PixelMap, fov_deg: float = 50.0, principal: tuple[float, float] | None = None
) -> Heightfield:
    """Lift a depth map to camera-space points under a pinhole camera.

    P(x, y) = depth * K^-1 (x+0.5, y+0.5, 1), focal from the horizontal FOV.
    Nonpositive depth is marked invalid.
    """
    if depth.channels != 1:
        raise ValueError("depth map must be single-channel")
    d = depth.data[:, :, 0].astype(np.float64)
    h, w = d.shape
    focal = w / (2.0 * math.tan(math.radians(fov_deg) / 2.0))
    cx, cy = principal if principal is not None else (w / 2.0, h / 2.0)
    xs = (np.arange(w) + 0.5 - cx) / focal
    ys = (np.arange(h) + 0.5 - cy) / focal
    rays = np.stack(
        [np.broadcast_to(xs, (h, w)), np.broadcast_to(ys[:, None], (h, w)), np.ones((h, w))],
        axis=2,
    )
    valid = d > 0
    points = rays * np.where(valid, d, 0.0)[:, :, None]
    return Heightfield(points, MaskMap(valid.astype(np.float32)))


def _light_basis(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    e1 = np.cross(WORLD_UP, direction)
    if np.linalg.norm(e1) < 1e-6:  # light along the vertical axis
        e1 = np.cross(np.array([1.0, 0.0, 0.0]), direction)
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(direction, e1)
    return e1, e2


def shadow_map_directional(
    ground: Heightfield,
    obj: Heightfield,
    m_obj: MaskMap,
    light: DirectionalLight,
    *,
    splat_radius: float = 1.5,
    bias_scale: float = 0.02,
    buffer_res: int | None = None,
) -> MaskMap:
    """Hard shadow of the object heightfield on the ground heightfield.

    An orthographic light-space depth buffer is built from the object points
    (disk splats of ``splat_radius`` texels, scatter-min). A ground pixel is
    shadowed when a splat sits nearer the light than the pixel along its own
    light ray, with a depth bias of ``bias_scale`` times the light-space depth
    range. The binary result is softened by a 3x3 box filter.
    """
    if -light.direction[1] <= 1e-9:
        raise ValueError("light must be above the horizon")
    if obj.points.shape[:2] != m_obj.data.shape:
        raise ValueError("object mask must match the object heightfield")

    h, w = ground.points.shape[:2]
    out = np.zeros((h, w), dtype=np.float32)
    obj_pts = obj.valid_points(m_obj.data >= 0.5)
    if obj_pts.size == 0:
        return MaskMap(out)

    direction = light.direction / np.linalg.norm(light.direction)
    e1, e2 = _light_basis(direction)

    def project(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return points @ e1, points @ e2, -(points @ direction)

    ground_sel = ground.valid.data >= 0.5
    gnd_pts = ground.points[ground_sel]
    ou, ov, od = project(obj_pts)
    gu, gv, gd = project(gnd_pts)

    umin = min(ou.min(), gu.min())
    umax = max(ou.max(), gu.max())
    vmin = min(ov.min(), gv.min())
    vmax = max(ov.max(), gv.max())
    res = buffer_res or int(np.clip(max(w, h), 64, 2048))
    texel = max(umax - umin, vmax - vmin, 1e-9) / max(res - 1, 1)
    cols = int(np.floor((umax - umin) / texel)) + 1
    rows = int(np.floor((vmax - vmin) / texel)) + 1

    buf = np.full((rows, cols), np.inf)
    cu = (ou - umin) / texel
    cv = (ov - vmin) / texel
    base_c = np.floor(cu).astype(int)
    base_r = np.floor(cv).astype(int)
    reach = int(math.ceil(splat_radius)) + 1
    for dr in range(-reach, reach + 1):
        for dc in range(-reach, reach + 1):
            rr = base_r + dr
            cc = base_c + dc
            inside = (
                ((rr - cv) ** 2 + (cc - cu) ** 2 <= splat_radius**2)
                & (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
            )
            if np.any(inside):
                np.minimum.at(buf, (rr[inside], cc[inside]), od[inside])

    depth_range = max(od.max(), gd.max()) - min(od.min(), gd.min())
    bias = bias_scale * max(depth_range, 1e-9)

    qc = np.clip(np.rint((gu - umin) / texel).astype(int), 0, cols - 1)
    qr = np.clip(np.rint((gv - vmin) / texel).astype(int), 0, rows - 1)
    shadowed = buf[qr, qc] < (gd - bias)
    out[ground_sel] = shadowed.astype(np.float32)
    return MaskMap(ndimage.uniform_filter(out, size=3, mode="nearest").clip(0.0, 1.0))


def pixel_height_estimate(m_obj: MaskMap) -> PixelHeightMap:
    """Heights from the row coordinate: the lowest three object rows sit at
    ground level, everything above rises one pixel per row."""
    binary = m_obj.data >= 0.5
    if not binary.any():
        raise ValueError("object mask is empty")
    y_max = int(np.max(np.nonzero(binary.any(axis=1))[0]))
    ys = np.arange(m_obj.height, dtype=np.float32)[:, None]
    heights = np.maximum(0.0, y_max - ys - 2.0) * binary
    return PixelHeightMap(heights)


def negative_light_position(
    light: PointLight2D, object_bottom: tuple[float, float], width: int, height: int
) -> PointLight2D:
    """Point-reflect the light head about the object bottom center, keeping
    its height; the foot is clipped to the image bounds."""
    x_o, y_o = object_bottom
    x_neg = 2.0 * x_o - light.x
    y_neg = (2.0 * y_o - (light.y - light.h)) + light.h
    return PointLight2D(
        x=float(np.clip(x_neg, 0, width - 1)),
        y=float(np.clip(y_neg, 0, height - 1)),
        h=light.h,
        radius=light.radius,
    )


def _disk_samples(cx: float, cy: float, radius: float, n: int) -> np.ndarray:
    i = np.arange(n, dtype=np.float64)
    r = radius * np.sqrt((i + 0.5) / n)
    theta = i * GOLDEN_ANGLE
    return np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=1)


def soft_shadow_point_light(
    m_obj: MaskMap, heights: PixelHeightMap, light: PointLight2D, samples: int = 16
) -> MaskMap:
    """Soft shadow of a 2.5D cutout under an area light of the given radius.

    Each object pixel (x, y) with height h_p has its ground foot at
    (x, y + h_p); its hard shadow lands at S = foot + (foot - L) * h_p/(h_L - h_p)
    for the light foot L. The soft mask is the mean over deterministic disk
    samples of the light foot, each splatted and hole-filled by a 3x3 close.
    """
    if heights.heights.shape != m_obj.data.shape:
        raise ValueError("pixel heights must match the object mask")
    binary = m_obj.data >= 0.5
    h_img, w_img = binary.shape
    if not binary.any():
        return MaskMap.zeros(w_img, h_img)
    ys, xs = np.nonzero(binary)
    hp = heights.heights[ys, xs].astype(np.float64)
    if light.h <= hp.max():
        raise ValueError("light height must exceed the tallest object pixel")

    foot_x = xs.astype(np.float64)
    foot_y = ys.astype(np.float64) + hp
    ratio = hp / (light.h - hp)
    n = max(1, int(samples))
    accum = np.zeros((h_img, w_img), dtype=np.float64)
    structure = np.ones((3, 3), dtype=bool)
    for lx, ly in _disk_samples(light.x, light.y, light.radius, n):
        sx = np.rint(foot_x + (foot_x - lx) * ratio).astype(int)
        sy = np.rint(foot_y + (foot_y - ly) * ratio).astype(int)
        keep = (sx >= 0) & (sx < w_img) & (sy >= 0) & (sy < h_img)
        splat = np.zeros((h_img, w_img), dtype=bool)
        splat[sy[keep], sx[keep]] = True
        closed = ndimage.binary_closing(splat, structure=structure) | splat
        accum += closed
    return MaskMap((accum / n).astype(np.float32))


def ingest_scribble(img: PixelMap) -> MaskMap:
    """Dark strokes (luminance strictly below 0.5) become shadow, then a 3x3
    morphological close fills pinholes. No further refinement happens here."""
    if img.channels >= 3:
        lum = (
            0.2126 * img.data[:, :, 0]
            + 0.7152 * img.data[:, :, 1]
            + 0.0722 * img.data[:, :, 2]
        )
    else:
        lum = img.data[:, :, 0]
    strokes = lum < 0.5
    closed = ndimage.binary_closing(strokes, structure=np.ones((3, 3), dtype=bool)) | strokes
    return MaskMap(closed.astype(np.float32))
