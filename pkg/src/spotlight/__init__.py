"""Shadow-conditioned object relighting for diffusion-based neural renderers.

The sampler blends a noised shadow composite into the latents each step and
amplifies the shadow's effect on the object with dual-branch, object-masked
guidance; shadow masks come from depth-based shadow mapping, 2.5D pixel-height
projection, or hand-drawn scribbles. A fully analytic toy denoiser makes the
whole pipeline verifiable without pretrained weights, and a framed wire
protocol plugs in real backbones out of process.
"""

from .compositor import ShadowMatte, detail_transfer, preserve_background, reexposed_render, shadow_matte
from .denoisers import DualConnectionDenoiser, IdentityCodec, SidecarClient, ToyDenoiser
from .guidance import (
    Branch,
    BranchInputs,
    CodecInterface,
    DenoiserFailure,
    DenoiserInterface,
    GuidanceConfig,
    NaNAbort,
    SamplerResult,
    SceneBundle,
    blend_shadow_latents,
    masked_guidance,
    run_sampler,
)
from .imagecore import (
    IntrinsicStack,
    LatentTensor,
    MaskMap,
    PixelMap,
    color_transfer,
    dilate_mask,
    downsample_bilinear,
    make_guidance_composite,
)
from .lighting import (
    EnvMapParams,
    ambient_from_background,
    envmap_to_latlong,
    eval_envmap,
    light_color,
    sg_sphere_integral,
    sg_sphere_integral_mc,
    user_controlled_directions,
)
from .metrics import (
    MetricReport,
    PreferenceMatrix,
    ThurstoneResult,
    pixel_metrics,
    preference_matrix_from_votes,
    simulate_votes,
    thurstone_case_v,
)
from .scheduler import (
    NoiseSchedule,
    VPrediction,
    add_noise,
    ddim_step,
    eps_from,
    make_schedule,
    v_from,
    v_from_eps,
    x0_from,
)
from .shadowsynth import (
    DirectionalLight,
    Heightfield,
    PixelHeightMap,
    PointLight2D,
    backproject_depth,
    ingest_scribble,
    negative_light_position,
    pixel_height_estimate,
    shadow_map_directional,
    soft_shadow_point_light,
)

__version__ = "0.1.0"
