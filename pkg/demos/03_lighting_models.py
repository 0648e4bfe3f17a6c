"""The parametric lighting used by the evaluation protocol.

An environment is a single spherical-gaussian lobe plus a constant ambient
term. The ambient color comes from the background image; the lobe color is
the normalized ambient chroma scaled by an intensity ratio. This script
evaluates the model analytically, validates the lobe's sphere integral against
its closed form, and exports a lat-long PFM for renderers that want an image.
"""

import pathlib

import numpy as np

from spotlight import fileio
from spotlight.imagecore import LINEAR, PixelMap
from spotlight.lighting import (
    EnvMapParams,
    ambient_from_background,
    envmap_to_latlong,
    eval_envmap,
    light_color,
    sg_sphere_integral,
    sg_sphere_integral_mc,
    user_controlled_directions,
)

OUT = pathlib.Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

# A warm indoor-ish background drives the ambient estimate.
rng = np.random.default_rng(0)
bg = PixelMap((rng.uniform(0.2, 0.5, (64, 64, 3)) * [1.0, 0.85, 0.6]).astype(np.float32), LINEAR)
c_amb = ambient_from_background(bg)
c_light = light_color(c_amb, k=6.0)
print(f"ambient {np.round(c_amb, 3)}, dominant lobe {np.round(c_light, 3)} (|c|=6)")

# Five user-controllable directions fan out 45 degrees apart around the
# behind-the-object axis, all at 45 degrees elevation.
directions = user_controlled_directions(elevation_deg=45.0, count=5)
print("azimuth fan:", [f"{l.azimuth:+.0f}" for l in directions])

for light in directions[:1] + directions[-1:]:
    p = EnvMapParams(c_light, c_amb, light.direction, lam=300.0)
    peak = eval_envmap(p.v, p)
    print(f"azimuth {light.azimuth:+4.0f}: peak radiance {np.round(peak, 3)}")

# The lobe integrates to 2 pi (1 - e^(-2 lam)) / lam of its peak color; the
# equal-area sample estimate agrees to fractions of a percent.
p = EnvMapParams(c_light, c_amb, directions[2].direction, lam=300.0)
exact = sg_sphere_integral(p)
estimate = sg_sphere_integral_mc(p, 100_000)
print(f"SG integral exact {exact[0]:.6f} vs sampled {estimate[0]:.6f}")

latlong = envmap_to_latlong(p, width=256, height=128)
fileio.write_pfm(OUT / "envmap_latlong.pfm", latlong.data)
print(f"wrote equirectangular radiance map -> {OUT/'envmap_latlong.pfm'}")
