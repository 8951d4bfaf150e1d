"""Classifier-free guided DDIM sampling."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from ttm.conditioning import ConditionBatch
from ttm.schedule import NoiseSchedule, ddim_step, timestep_subsequence

CFG_FORMULAS = ("standard", "paper-literal")


@dataclass(frozen=True)
class SamplerConfig:
    num_sampling_steps: int = 200
    guidance_scale: float = 9.0
    cfg_formula: str = "standard"
    seed: int = 0

    def validate(self) -> list[str]:
        errs = []
        if self.num_sampling_steps < 1:
            errs.append("num_sampling_steps must be >= 1")
        if self.guidance_scale < 0:
            errs.append("guidance_scale must be >= 0")
        if self.cfg_formula not in CFG_FORMULAS:
            errs.append(f"cfg_formula must be one of {CFG_FORMULAS}")
        return errs

    def to_dict(self) -> dict:
        return asdict(self)


def cfg_combine(v_cond, v_uncond, omega: float, formula: str = "standard"):
    """Guided velocity.

    ``standard``: ``v_uncond + omega * (v_cond - v_uncond)``.
    ``paper-literal``: ``omega * v_uncond + (1 - omega) * v_cond``; at omega > 1
    this pushes away from the condition, so it is opt-in.
    """
    if tuple(v_cond.shape) != tuple(v_uncond.shape):
        raise ValueError(f"shape mismatch: {tuple(v_cond.shape)} vs {tuple(v_uncond.shape)}")
    if formula == "standard":
        # expanded form so omega=0 and omega=1 return an input exactly
        return (1 - omega) * v_uncond + omega * v_cond
    if formula == "paper-literal":
        return omega * v_uncond + (1 - omega) * v_cond
    raise ValueError(f"unknown cfg formula {formula!r}")


def initial_noise(shape, seed: int, dtype=torch.float32) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.standard_normal(shape)).to(dtype)


@torch.no_grad()
def sample(model, sampler: SamplerConfig, cond: ConditionBatch, schedule: NoiseSchedule,
           latent_shape=None, dtype=torch.float32, z_T=None) -> torch.Tensor:
    """Run guided DDIM from seeded Gaussian noise down to t=0.

    ``model`` is any callable ``(z_t, t, cond) -> v``. Each step makes one
    conditional and one unconditional call.
    """
    errs = sampler.validate()
    if errs:
        raise ValueError("; ".join(errs))
    B = len(cond)
    if z_T is None:
        if latent_shape is None:
            latent_shape = model.config.latent_shape
        z_T = initial_noise((B, *latent_shape), sampler.seed, dtype)
    uncond = cond.nulled()
    z = z_T
    ts = timestep_subsequence(schedule.num_steps, sampler.num_sampling_steps)
    for t, t_prev in zip(ts[:-1], ts[1:]):
        tt = torch.full((B,), t, dtype=torch.long)
        v_c = model(z, tt, cond)
        v_u = model(z, tt, uncond)
        v = cfg_combine(v_c, v_u, sampler.guidance_scale, sampler.cfg_formula)
        z = ddim_step(z, v, t, t_prev, schedule)
        if not torch.all(torch.isfinite(z)):
            raise FloatingPointError(f"non-finite latent at t={t_prev}")
    return z
