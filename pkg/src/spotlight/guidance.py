"""Shadow-guided sampling: per-step latent shadow blending, dual-branch denoiser
evaluation with object-masked guidance, and the deterministic denoising loop.

The loop runs two passes from the same seed: the guided pass and a shadow-free
pass whose ratio later yields the shadow matte.
"""

from __future__ import annotations

import abc
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .imagecore import (
    IntrinsicStack,
    LatentTensor,
    MaskMap,
    PixelMap,
    dilate_mask,
    downsample_bilinear,
    make_guidance_composite,
)
from .scheduler import (
    NoiseSchedule,
    VPrediction,
    add_noise,
    ddim_step,
    make_schedule,
    v_from_eps,
)


class Branch(enum.IntEnum):
    POSITIVE = 0
    NEGATIVE = 1


@dataclass(frozen=True)
class GuidanceConfig:
    gamma: float = 3.0  # guidance scale
    beta: float = 0.05  # shadow latent weight
    dilation_kernel: int = 33
    steps: int = 50
    seed: int = 0
    shadow_gain: float = 0.4  # shadow darkness painted into the composite
    positive_only: bool = False  # skip the negative branch entirely
    train_steps: int = 1000

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.dilation_kernel < 1 or self.dilation_kernel % 2 == 0:
            raise ValueError("dilation kernel must be odd")


@dataclass(frozen=True)
class BranchInputs:
    """Everything one denoiser branch sees besides the latent.

    The object mask rides along for remote backbones whose masking rules
    cover the object region as well as the shadow region.
    """

    intrinsics: IntrinsicStack
    shadow_mask: MaskMap
    guidance_composite: PixelMap
    object_mask: MaskMap | None = None


@dataclass(frozen=True)
class SceneBundle:
    """One render job: background, intrinsics, object cutout and shadow spec."""

    background: PixelMap  # linear
    object_albedo: PixelMap  # linear, full-frame cutout albedo
    m_obj: MaskMap
    m_shw_pos: MaskMap
    m_shw_neg: MaskMap | None = None  # None selects the no-shadow negative
    intrinsics: IntrinsicStack = field(default_factory=lambda: IntrinsicStack([]))

    def __post_init__(self):
        shape = (self.background.height, self.background.width)
        for other in (
            self.object_albedo.data.shape[:2],
            self.m_obj.data.shape,
            self.m_shw_pos.data.shape,
        ):
            if tuple(other) != shape:
                raise ValueError("scene maps must share dimensions")
        if self.m_shw_neg is not None and self.m_shw_neg.data.shape != self.m_obj.data.shape:
            raise ValueError("scene maps must share dimensions")


class DenoiserInterface(abc.ABC):
    """A diffusion backbone evaluated once per branch per step."""

    #: "v" or "eps"; eps predictions are converted via the scheduler identities.
    prediction_kind: str = "v"
    #: True when two branch calls may run concurrently.
    parallel_branches: bool = False

    @abc.abstractmethod
    def denoise(self, z: LatentTensor, inputs: BranchInputs, t: int, branch: Branch) -> LatentTensor:
        """Raw model prediction (kind per ``prediction_kind``) at latent dims."""


class CodecInterface(abc.ABC):
    """Latent codec pair; the toy world uses the identity codec."""

    downscale_factor: int = 1
    latent_channels: int = 3

    @abc.abstractmethod
    def encode(self, img: PixelMap) -> LatentTensor: ...

    @abc.abstractmethod
    def decode(self, lat: LatentTensor) -> PixelMap: ...


class SamplerError(RuntimeError):
    def __init__(self, message: str, step_index: int, timestep: int):
        super().__init__(f"{message} (step {step_index}, t={timestep})")
        self.step_index = step_index
        self.timestep = timestep


class DenoiserFailure(SamplerError):
    pass


class NaNAbort(SamplerError):
    pass


@dataclass(frozen=True)
class StepTrace:
    index: int
    t: int
    t_prev: int
    blended: bool
    latent_max_abs: float
    v_max_abs: float


@dataclass(frozen=True)
class SamplerResult:
    image_with: PixelMap
    image_without: PixelMap
    trace: list[StepTrace]


def blend_shadow_latents(
    schedule: NoiseSchedule,
    z_t: LatentTensor,
    g_lat: LatentTensor,
    m_shw_lat: MaskMap,
    t: int,
    beta: float,
    rng: np.random.Generator,
) -> LatentTensor:
    """Pull the latent toward the noised shadow composite inside the mask.

    z~ = (1 - beta*m) (*) z + (beta*m) (*) add_noise(g_lat, eps, t)

    Fresh noise comes from the run's dedicated blend stream each step. The
    beta = 0 and empty-mask cases return z_t unchanged without consuming noise,
    which keeps them bit-identical to a run with blending disabled.
    """
    if m_shw_lat.data.shape != z_t.data.shape[1:]:
        raise ValueError(
            f"shadow mask {m_shw_lat.data.shape} does not match latent {z_t.data.shape[1:]}"
        )
    if beta == 0.0 or not m_shw_lat.any():
        return z_t
    eps = LatentTensor(rng.standard_normal(z_t.shape, dtype=np.float32))
    noised = add_noise(schedule, g_lat, eps, t)
    w = (np.float32(beta) * m_shw_lat.data)[None, :, :]
    return LatentTensor((1.0 - w) * z_t.data + w * noised.data)


def masked_guidance(
    v_pos: VPrediction,
    v_neg: VPrediction,
    m_obj_lat: MaskMap,
    gamma: float,
) -> VPrediction:
    """Classifier-free guidance restricted to the object region.

    v~ = (1 - m) (*) v_pos + m (*) (v_neg + gamma * (v_pos - v_neg))

    gamma = 1 collapses to v_pos exactly (returned bitwise).
    """
    if gamma == 1.0:
        return v_pos
    if v_pos.tensor.shape != v_neg.tensor.shape:
        raise ValueError("branch predictions must share shape")
    if m_obj_lat.data.shape != v_pos.tensor.shape[1:]:
        raise ValueError("object mask must be at latent resolution")
    m = m_obj_lat.data[None, :, :]
    pos, neg = v_pos.tensor.data, v_neg.tensor.data
    guided = (1.0 - m) * pos + m * (neg + np.float32(gamma) * (pos - neg))
    return VPrediction(LatentTensor(guided))


def _latent_dims(scene: SceneBundle, codec: CodecInterface) -> tuple[int, int]:
    ds = codec.downscale_factor
    h, w = scene.background.height, scene.background.width
    if h % ds or w % ds:
        raise ValueError(f"image dims {w}x{h} not divisible by codec downscale {ds}")
    return h // ds, w // ds


def _as_v(
    schedule: NoiseSchedule, f: DenoiserInterface, raw: LatentTensor, z: LatentTensor, t: int
) -> VPrediction:
    if f.prediction_kind == "v":
        return VPrediction(raw)
    if f.prediction_kind == "eps":
        return v_from_eps(schedule, z, raw, t)
    raise ValueError(f"unknown prediction kind {f.prediction_kind!r}")


def _run_chain(
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
    f: DenoiserInterface,
    pos: BranchInputs,
    neg: BranchInputs | None,
    g_lat: LatentTensor,
    m_shw_lat: MaskMap,
    m_obj_lat: MaskMap,
    init_noise: np.ndarray,
    blend_rng: np.random.Generator,
    gamma: float,
    beta: float,
) -> tuple[LatentTensor, list[StepTrace]]:
    z = LatentTensor(init_noise)
    trace: list[StepTrace] = []
    need_negative = neg is not None and gamma != 1.0
    pool = ThreadPoolExecutor(max_workers=2) if (need_negative and f.parallel_branches) else None
    try:
        for index, (t, t_prev) in enumerate(schedule.step_pairs()):
            blended = blend_shadow_latents(schedule, z, g_lat, m_shw_lat, t, beta, blend_rng)
            try:
                if need_negative and pool is not None:
                    fut_pos = pool.submit(f.denoise, blended, pos, t, Branch.POSITIVE)
                    fut_neg = pool.submit(f.denoise, blended, neg, t, Branch.NEGATIVE)
                    raw_pos, raw_neg = fut_pos.result(), fut_neg.result()
                else:
                    raw_pos = f.denoise(blended, pos, t, Branch.POSITIVE)
                    raw_neg = f.denoise(blended, neg, t, Branch.NEGATIVE) if need_negative else None
            except Exception as exc:
                raise DenoiserFailure(f"denoiser failed: {exc}", index, t) from exc
            for raw in (raw_pos,) if raw_neg is None else (raw_pos, raw_neg):
                if raw.shape != z.shape:
                    raise DenoiserFailure(
                        f"denoiser returned {raw.shape}, expected {z.shape}", index, t
                    )
            try:
                v_pos = _as_v(schedule, f, raw_pos, blended, t)
                if need_negative:
                    v_neg = _as_v(schedule, f, raw_neg, blended, t)
                    guided = masked_guidance(v_pos, v_neg, m_obj_lat, gamma)
                else:
                    guided = v_pos
                z = ddim_step(schedule, blended, guided, t, t_prev)
            except ValueError as exc:
                # LatentTensor construction enforces finiteness, so overflow or
                # NaN in the guided update surfaces here
                raise NaNAbort(f"non-finite latent update: {exc}", index, t) from exc
            trace.append(
                StepTrace(
                    index=index,
                    t=t,
                    t_prev=t_prev,
                    blended=blended is not z,
                    latent_max_abs=float(np.max(np.abs(z.data))),
                    v_max_abs=float(np.max(np.abs(guided.tensor.data))),
                )
            )
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    return z, trace


def run_sampler(
    scene: SceneBundle,
    cfg: GuidanceConfig,
    f: DenoiserInterface,
    codec: CodecInterface,
    schedule: NoiseSchedule | None = None,
) -> SamplerResult:
    """Run the guided pass and the shadow-free pass from the same seed.

    Each guided step: blend the shadow latents, evaluate both branches, apply
    object-masked guidance, then a deterministic DDIM update. The shadow-free
    pass (empty shadow mask, gamma = 1) feeds the shadow-matte computation.
    Outputs are a pure function of (scene, cfg, denoiser).
    """
    if schedule is None:
        schedule = make_schedule(cfg.train_steps, cfg.steps)
    lat_h, lat_w = _latent_dims(scene, codec)
    lat_c = codec.latent_channels

    empty_mask = MaskMap.zeros(scene.background.width, scene.background.height)
    empty_lat_mask = MaskMap.zeros(lat_w, lat_h)
    m_shw_neg = scene.m_shw_neg if scene.m_shw_neg is not None else empty_mask

    g_pos = make_guidance_composite(
        scene.background, scene.object_albedo, scene.m_obj, scene.m_shw_pos, cfg.shadow_gain
    )
    g_neg = make_guidance_composite(
        scene.background, scene.object_albedo, scene.m_obj, m_shw_neg, cfg.shadow_gain
    )
    g_free = make_guidance_composite(
        scene.background, scene.object_albedo, scene.m_obj, empty_mask, cfg.shadow_gain
    )

    pos = BranchInputs(scene.intrinsics, scene.m_shw_pos, g_pos, scene.m_obj)
    neg = (
        None
        if cfg.positive_only
        else BranchInputs(scene.intrinsics, m_shw_neg, g_neg, scene.m_obj)
    )
    free = BranchInputs(scene.intrinsics, empty_mask, g_free, scene.m_obj)

    m_shw_lat = downsample_bilinear(
        dilate_mask(scene.m_shw_pos, cfg.dilation_kernel), lat_w, lat_h
    )
    m_obj_lat = downsample_bilinear(scene.m_obj, lat_w, lat_h)

    def fresh_streams() -> tuple[np.ndarray, np.random.Generator]:
        init_ss, blend_ss = np.random.SeedSequence(cfg.seed).spawn(2)
        init = np.random.default_rng(init_ss).standard_normal(
            (lat_c, lat_h, lat_w), dtype=np.float32
        )
        return init, np.random.default_rng(blend_ss)

    init, blend_rng = fresh_streams()
    z_with, trace = _run_chain(
        schedule, cfg, f, pos, neg, codec.encode(g_pos), m_shw_lat, m_obj_lat,
        init, blend_rng, cfg.gamma, cfg.beta,
    )

    init, blend_rng = fresh_streams()
    z_without, _ = _run_chain(
        schedule, cfg, f, free, None, codec.encode(g_free), empty_lat_mask, m_obj_lat,
        init, blend_rng, 1.0, cfg.beta,
    )

    return SamplerResult(
        image_with=codec.decode(z_with),
        image_without=codec.decode(z_without),
        trace=trace,
    )
