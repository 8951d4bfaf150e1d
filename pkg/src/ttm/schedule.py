"""Diffusion schedule math: cosine VP schedule, forward noising, v-parameterization
and the deterministic DDIM update.

All helpers accept either torch tensors or numpy arrays. ``t`` may be a python int
or an integer tensor/array of shape ``(batch,)`` which is broadcast over the
trailing dimensions of the latent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

COSINE_OFFSET = 0.008


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep signal/noise coefficients, index 0 is the clean end."""

    num_steps: int
    alpha: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if self.alpha.shape != (self.num_steps + 1,) or self.sigma.shape != (self.num_steps + 1,):
            raise ValueError("alpha and sigma must have num_steps + 1 entries")
        self.alpha.setflags(write=False)
        self.sigma.setflags(write=False)

    @property
    def T(self) -> int:
        return self.num_steps

    def snr(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.alpha**2 / self.sigma**2

    def to_dict(self) -> dict:
        return {"family": "cosine", "num_steps": self.num_steps, "offset": COSINE_OFFSET}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        if d.get("family", "cosine") != "cosine":
            raise ValueError(f"unknown schedule family {d.get('family')!r}")
        return make_cosine_schedule(int(d["num_steps"]))


def make_cosine_schedule(T: int) -> NoiseSchedule:
    """Cosine variance-preserving schedule with ``alpha[0] == 1`` and ``alpha[T] == 0``."""
    if not isinstance(T, (int, np.integer)) or isinstance(T, bool) or T < 1:
        raise ValueError(f"schedule needs T >= 1, got {T!r}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos((t / T + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2)
    alpha = np.clip(f / f[0], 0.0, 1.0)
    alpha[-1] = 0.0  # cos(pi/2) leaves ~6e-17 behind
    sigma = np.sqrt(1.0 - alpha**2)
    return NoiseSchedule(int(T), alpha, sigma)


def _check_pair(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _coefs(s: NoiseSchedule, t, like):
    """Return (alpha_t, sigma_t) shaped to broadcast against ``like``."""
    if isinstance(t, torch.Tensor):
        idx = t.detach().cpu().numpy()
    else:
        idx = np.asarray(t)
    if idx.dtype.kind not in "iu":
        raise TypeError("timesteps must be integers")
    if idx.size and (idx.min() < 0 or idx.max() > s.num_steps):
        raise ValueError(f"timestep out of range [0, {s.num_steps}]: {t}")
    a, sg = s.alpha[idx], s.sigma[idx]
    if idx.ndim == 1:
        shape = (-1,) + (1,) * (like.ndim - 1)
        a, sg = a.reshape(shape), sg.reshape(shape)
    if isinstance(like, torch.Tensor):
        return (torch.as_tensor(a, dtype=like.dtype, device=like.device),
                torch.as_tensor(sg, dtype=like.dtype, device=like.device))
    return a, sg


def q_sample(z0, eps, t, s: NoiseSchedule):
    """Forward noising ``alpha_t * z0 + sigma_t * eps``."""
    _check_pair(z0, eps)
    a, sg = _coefs(s, t, z0)
    return a * z0 + sg * eps


def v_target(z0, eps, t, s: NoiseSchedule):
    """Velocity target ``alpha_t * eps - sigma_t * z0``."""
    _check_pair(z0, eps)
    a, sg = _coefs(s, t, z0)
    return a * eps - sg * z0


def z0_from_v(z_t, v, t, s: NoiseSchedule):
    _check_pair(z_t, v)
    a, sg = _coefs(s, t, z_t)
    return a * z_t - sg * v


def eps_from_v(z_t, v, t, s: NoiseSchedule):
    _check_pair(z_t, v)
    a, sg = _coefs(s, t, z_t)
    return sg * z_t + a * v


def ddim_step(z_t, v_hat, t: int, t_prev: int, s: NoiseSchedule):
    """One eta=0 DDIM update from ``t`` to ``t_prev`` given a velocity prediction."""
    if not t_prev < t:
        raise ValueError(f"ddim_step needs t_prev < t, got t={t}, t_prev={t_prev}")
    z0_hat = z0_from_v(z_t, v_hat, t, s)
    eps_hat = eps_from_v(z_t, v_hat, t, s)
    a, sg = _coefs(s, t_prev, z_t)
    return a * z0_hat + sg * eps_hat


def timestep_subsequence(T: int, num_steps: int) -> list[int]:
    """Evenly spaced descending timesteps from T down to 0 (inclusive), ``num_steps`` jumps."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if num_steps > T:
        raise ValueError(f"cannot take {num_steps} steps over a {T}-step schedule")
    ts = np.round(np.linspace(T, 0, num_steps + 1)).astype(int)
    return [int(x) for x in ts]
