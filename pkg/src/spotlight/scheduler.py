"""Deterministic DDIM noise schedule and v-parametrization identities.

Schedule constants are accumulated in float64; latent tensors stay float32.
All conversions are mutually consistent with x_t = sqrt(abar)*x0 + sqrt(1-abar)*eps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imagecore import LatentTensor

BETA_START = 0.00085
BETA_END = 0.012


@dataclass(frozen=True)
class NoiseSchedule:
    train_steps: int
    alphas_bar: np.ndarray  # float64, decreasing, in (0, 1]
    inference_timesteps: np.ndarray  # strictly decreasing train-step indices

    def __post_init__(self):
        self.alphas_bar.flags.writeable = False
        self.inference_timesteps.flags.writeable = False

    def alpha_bar(self, t: int) -> float:
        """abar at train step t; t = -1 denotes the clean endpoint (abar = 1)."""
        if t == -1:
            return 1.0
        if not 0 <= t < self.train_steps:
            raise ValueError(f"timestep {t} outside [0, {self.train_steps})")
        return float(self.alphas_bar[t])

    def step_pairs(self) -> list[tuple[int, int]]:
        """(t, t_prev) pairs for one full sampling pass, ending at t_prev = -1."""
        ts = list(self.inference_timesteps)
        prevs = ts[1:] + [-1]
        return list(zip(ts, prevs))


@dataclass(frozen=True)
class VPrediction:
    tensor: LatentTensor


def make_schedule(
    train_steps: int = 1000,
    inference_steps: int = 50,
    beta_schedule: str = "scaled_linear",
) -> NoiseSchedule:
    """Scaled-linear beta schedule with evenly spaced, descending inference steps."""
    if beta_schedule != "scaled_linear":
        raise ValueError(f"unsupported beta schedule {beta_schedule!r}")
    if train_steps < 1 or not 1 <= inference_steps <= train_steps:
        raise ValueError(f"invalid step counts: train={train_steps}, inference={inference_steps}")
    betas = (
        np.linspace(BETA_START**0.5, BETA_END**0.5, train_steps, dtype=np.float64) ** 2
    )
    alphas_bar = np.cumprod(1.0 - betas)
    step_ratio = train_steps // inference_steps
    timesteps = (np.arange(inference_steps, dtype=np.int64) * step_ratio)[::-1].copy()
    return NoiseSchedule(train_steps, alphas_bar, timesteps)


def _coeffs(schedule: NoiseSchedule, t: int) -> tuple[np.float32, np.float32]:
    abar = schedule.alpha_bar(t)
    return np.float32(np.sqrt(abar)), np.float32(np.sqrt(1.0 - abar))


def _check_shapes(*tensors: LatentTensor):
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"latent shape mismatch: {sorted(shapes)}")


def add_noise(schedule: NoiseSchedule, x0: LatentTensor, eps: LatentTensor, t: int) -> LatentTensor:
    """x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    _check_shapes(x0, eps)
    a, s = _coeffs(schedule, t)
    return LatentTensor(a * x0.data + s * eps.data)


def v_from(schedule: NoiseSchedule, x0: LatentTensor, eps: LatentTensor, t: int) -> VPrediction:
    """v = sqrt(abar) * eps - sqrt(1 - abar) * x0."""
    _check_shapes(x0, eps)
    a, s = _coeffs(schedule, t)
    return VPrediction(LatentTensor(a * eps.data - s * x0.data))


def x0_from(schedule: NoiseSchedule, x_t: LatentTensor, v: VPrediction, t: int) -> LatentTensor:
    """x0 = sqrt(abar) * x_t - sqrt(1 - abar) * v."""
    _check_shapes(x_t, v.tensor)
    a, s = _coeffs(schedule, t)
    return LatentTensor(a * x_t.data - s * v.tensor.data)


def eps_from(schedule: NoiseSchedule, x_t: LatentTensor, v: VPrediction, t: int) -> LatentTensor:
    """eps = sqrt(1 - abar) * x_t + sqrt(abar) * v."""
    _check_shapes(x_t, v.tensor)
    a, s = _coeffs(schedule, t)
    return LatentTensor(s * x_t.data + a * v.tensor.data)


def v_from_eps(schedule: NoiseSchedule, x_t: LatentTensor, eps: LatentTensor, t: int) -> VPrediction:
    """Adapt an eps-predicting model: v = (eps - sqrt(1 - abar) * x_t) / sqrt(abar)."""
    _check_shapes(x_t, eps)
    a, s = _coeffs(schedule, t)
    return VPrediction(LatentTensor((eps.data - s * x_t.data) / a))


def ddim_step(
    schedule: NoiseSchedule,
    z_t: LatentTensor,
    v: VPrediction,
    t: int,
    t_prev: int,
    eta: float = 0.0,
) -> LatentTensor:
    """One deterministic DDIM update from t to t_prev (t_prev = -1 returns x0_hat)."""
    if eta != 0.0:
        raise ValueError("only deterministic DDIM (eta = 0) is supported")
    if t_prev >= t:
        raise ValueError(f"t_prev ({t_prev}) must be < t ({t})")
    x0_hat = x0_from(schedule, z_t, v, t)
    if t_prev == -1:
        return x0_hat
    eps_hat = eps_from(schedule, z_t, v, t)
    return add_noise(schedule, x0_hat, eps_hat, t_prev)
