"""Three ways to get a coarse shadow mask.

The sampler only needs a rough blob in roughly the right place; it refines
softness and contact on its own. This script produces masks by (1) depth-based
shadow mapping, (2) 2.5D pixel-height projection from a point light, and
(3) ingesting a hand-drawn scribble, writing each to demos/output/.
"""

import pathlib

import numpy as np

from spotlight import fileio
from spotlight.imagecore import LINEAR, MaskMap, PixelMap
from spotlight.shadowsynth import (
    DirectionalLight,
    Heightfield,
    PointLight2D,
    ingest_scribble,
    negative_light_position,
    pixel_height_estimate,
    soft_shadow_point_light,
    shadow_map_directional,
)

OUT = pathlib.Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

# ---------------------------------------------------------------- shadow mapping
# A synthetic "floor + floating slab" scene built directly as heightfields:
# the pixel grid doubles as the ground plane, the slab hovers 12 units up.
size, h = 96, 12.0
ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
ground = Heightfield(
    np.stack([xs, np.zeros_like(xs), ys], axis=2),
    MaskMap(np.ones((size, size), dtype=np.float32)),
)
box = np.zeros((size, size), dtype=np.float32)
box[40:56, 40:56] = 1.0
slab = Heightfield(np.stack([xs, np.where(box > 0, -h, 0.0), ys], axis=2), MaskMap(box))

for azimuth in (0.0, 90.0, 225.0):
    light = DirectionalLight.from_angles(azimuth, 45.0)
    mask = shadow_map_directional(ground, slab, MaskMap(box), light)
    fileio.write_mask_png(OUT / f"shadowmap_az{int(azimuth):03d}.png", mask)
    print(f"shadow mapping, azimuth {azimuth:5.1f}: {int((mask.data > 0.5).sum())} px")
# At 45 degrees elevation the offset equals the slab height; flipping the
# azimuth by 180 degrees mirrors it, which is exactly how the negative
# guidance branch gets its shadow.

# ------------------------------------------------------------- pixel-height soft
# For 2D cutouts there is no geometry, so each object pixel gets a height from
# its row (the lowest three rows sit on the ground) and a point light projects
# the pixels past their feet. Larger light radii soften the result.
cutout = np.zeros((128, 128), dtype=np.float32)
cutout[30:70, 46:54] = 1.0  # a narrow standing rectangle
heights = pixel_height_estimate(MaskMap(cutout))
print(f"pixel heights: max {heights.heights.max():.0f} px")

for radius in (0.0, 4.0, 16.0):
    light = PointLight2D(x=30.0, y=120.0, h=150.0, radius=radius)
    soft = soft_shadow_point_light(MaskMap(cutout), heights, light, samples=16)
    fileio.write_mask_png(OUT / f"pixht_r{int(radius)}.png", soft)
    area = int((soft.data > 0).sum())
    penumbra = int(((soft.data > 0) & (soft.data < 1)).sum())
    print(f"point light radius {radius:3.0f}: {area} px total, {penumbra} px penumbra")

neg = negative_light_position(PointLight2D(20.0, 30.0, 90.0, 3.0), (50.5, 69.0), 96, 96)
print(f"negative light lands at ({neg.x:.1f}, {neg.y:.1f}), same height {neg.h:.0f}")

# ------------------------------------------------------------------- scribbles
# Any dark strokes count as shadow; a 3x3 close fills pinholes.
paper = np.ones((96, 96, 3), dtype=np.float32)
for t in np.linspace(0, 1, 400):  # a loose curved stroke
    x = int(20 + 55 * t)
    y = int(70 + 8 * np.sin(6.0 * t))
    paper[y : y + 3, x : x + 2] = 0.05
scribble = ingest_scribble(PixelMap(paper, LINEAR))
fileio.write_mask_png(OUT / "scribble.png", scribble)
print(f"scribble mask: {int(scribble.data.sum())} px -> {OUT/'scribble.png'}")
