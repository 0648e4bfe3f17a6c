"""End-to-end shadow-guided relighting on a toy scene.

The analytic toy denoiser stands in for a pretrained backbone, so every claim
here is checkable: the guided pass pulls the latents toward the shadow
composite each step, the dual-branch guidance amplifies the lighting change on
the object by the scale gamma, and the shadow matte keeps the background
byte-for-byte stable outside the edit region.
"""

import pathlib

import numpy as np

from spotlight import fileio
from spotlight.compositor import preserve_background, shadow_matte
from spotlight.denoisers import IdentityCodec, ToyDenoiser
from spotlight.guidance import Branch, GuidanceConfig, run_sampler
from spotlight.imagecore import LatentTensor, dilate_mask
from spotlight.scheduler import make_schedule
from spotlight.toyscene import make_scene_bundle

OUT = pathlib.Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

scene = make_scene_bundle(seed=5, size=96)
schedule = make_schedule(1000, 50)
codec = IdentityCodec()


class BranchShadedToy(ToyDenoiser):
    """Toy stand-in for a backbone that reshades the object per light side:
    the object comes out brighter when lit from the positive direction and
    dimmer under the opposite light. Outside the object the target is the
    branch's shadow composite, as in the plain toy model."""

    def __init__(self, schedule, codec, obj_mask):
        def rule(inputs, branch):
            base = codec.encode(inputs.guidance_composite).data.copy()
            base[:, obj_mask] *= 1.1 if branch == Branch.POSITIVE else 0.9
            return LatentTensor(base)

        super().__init__(schedule, codec, target_rule=rule)


toy = BranchShadedToy(schedule, codec, scene.m_obj.data >= 0.5)

fileio.write_image_png(OUT / "relight_background.png", scene.background)

# Sweep the guidance scale: gamma = 1 means "positive branch only", larger
# values push the object's shading further from the opposite-light branch.
for gamma in (1.0, 3.0, 7.0):
    cfg = GuidanceConfig(gamma=gamma, beta=0.05, steps=50, seed=11)
    result = run_sampler(scene, cfg, toy, codec, schedule)
    matte = shadow_matte(result.image_with, result.image_without)
    final = preserve_background(scene.background, result.image_with, matte, scene.m_obj)
    fileio.write_image_png(OUT / f"relight_gamma{int(gamma)}.png", final)

    edit_region = (scene.m_obj.data >= 0.5) | (
        dilate_mask(scene.m_shw_pos, cfg.dilation_kernel).data >= 0.5
    )
    drift = float(np.abs(final.data - scene.background.data)[~edit_region].max())
    obj_mean = float(final.data[scene.m_obj.data >= 0.5].mean())
    print(
        f"gamma {gamma:3.1f}: object mean {obj_mean:.4f}, "
        f"background drift outside edit region {drift:.2e}"
    )

# The matte itself is worth looking at: values < 1 are exactly where the
# sampler decided the shadow lives.
fileio.write_pfm(OUT / "relight_matte.pfm", matte.data)
print(f"matte range [{matte.data.min():.3f}, {matte.data.max():.3f}] -> relight_matte.pfm")

# Determinism check: the whole pipeline is a pure function of (scene, config).
again = run_sampler(scene, GuidanceConfig(gamma=7.0, beta=0.05, steps=50, seed=11), toy, codec, schedule)
print("bitwise repeatable:", np.array_equal(again.image_with.data, result.image_with.data))
