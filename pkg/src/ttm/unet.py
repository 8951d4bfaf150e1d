"""Small conditional UNet denoiser predicting the velocity ``v``.

ResNet blocks are FiLM-modulated by the concatenation of a time embedding and a
projected global text embedding. Spatial-transformer blocks cross-attend from the
flattened feature map to the local token embeddings.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ttm.conditioning import POOLING_MODES, ConditionBatch, mean_pool, sap_weights

INIT_STD = 0.02


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 4
    out_channels: int = 4
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2)
    attention_levels: tuple[int, ...] = (1,)
    num_heads: int = 2
    head_dim: int = 16
    d_F: int = 32
    d_G: int = 32
    time_embed_dim: int = 64
    groupnorm_groups: int = 8
    ff_mult: int = 2
    pooling: str = "none"
    latent_size: tuple[int, int] = (16, 16)

    def __post_init__(self):
        object.__setattr__(self, "channel_multipliers", tuple(self.channel_multipliers))
        object.__setattr__(self, "attention_levels", tuple(self.attention_levels))
        object.__setattr__(self, "latent_size", tuple(self.latent_size))
        errors = self.validate()
        if errors:
            raise ValueError("invalid UNetConfig: " + "; ".join(errors))

    def validate(self) -> list[str]:
        errs = []
        for name in ("in_channels", "out_channels", "base_channels", "num_heads", "head_dim",
                     "d_F", "time_embed_dim", "groupnorm_groups", "ff_mult"):
            if getattr(self, name) <= 0:
                errs.append(f"{name} must be positive")
        if not self.channel_multipliers or any(m <= 0 for m in self.channel_multipliers):
            errs.append("channel_multipliers must be non-empty and positive")
        if self.pooling not in POOLING_MODES:
            errs.append(f"pooling must be one of {POOLING_MODES}")
        if self.pooling in ("mean", "sap") and self.d_G != self.d_F:
            errs.append("pooled global embeddings need d_G == d_F")
        if self.pooling != "none" and self.d_G <= 0:
            errs.append("d_G must be positive when a global embedding is used")
        if self.time_embed_dim % 2:
            errs.append("time_embed_dim must be even")
        inner = self.num_heads * self.head_dim
        for lvl in self.attention_levels:
            if not 0 <= lvl < len(self.channel_multipliers):
                errs.append(f"attention level {lvl} out of range")
                continue
            if self.level_channels(lvl) % inner:
                errs.append(f"heads*head_dim={inner} does not divide width {self.level_channels(lvl)} at level {lvl}")
        for lvl in range(len(self.channel_multipliers)):
            if self.level_channels(lvl) % self.groupnorm_groups:
                errs.append(f"groupnorm_groups does not divide width at level {lvl}")
        if self.base_channels % self.groupnorm_groups:
            errs.append("groupnorm_groups does not divide base_channels")
        down = 2 ** (len(self.channel_multipliers) - 1)
        if any(s % down for s in self.latent_size):
            errs.append(f"latent_size must be divisible by {down}")
        return errs

    def level_channels(self, level: int) -> int:
        return self.base_channels * self.channel_multipliers[level]

    @property
    def uses_global(self) -> bool:
        return self.pooling != "none"

    @property
    def cond_dim(self) -> int:
        return self.time_embed_dim * (2 if self.uses_global else 1)

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.in_channels, *self.latent_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("channel_multipliers", "attention_levels", "latent_size"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown UNetConfig keys: {sorted(unknown)}")
        return cls(**d)


def time_embedding(t, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal features: first half ``sin(t * f_k)``, second half ``cos(t * f_k)``."""
    t = torch.as_tensor(t, dtype=torch.float64)
    if torch.any(t < 0):
        raise ValueError("timesteps must be non-negative")
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.reshape(-1, 1) * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb if t.ndim else emb[0]


class ResBlock(nn.Module):
    """GroupNorm/SiLU/conv twice; the second norm output is FiLM-modulated."""

    def __init__(self, in_ch: int, out_ch: int, cond_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        # emits (gamma - 1, beta)
        self.film = nn.Linear(cond_dim, 2 * out_ch)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def film_params(self, cond: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        delta, beta = self.film(cond).chunk(2, dim=-1)
        return 1.0 + delta, beta

    def forward(self, x, cond):
        h = self.conv1(F.silu(self.norm1(x)))
        gamma, beta = self.film_params(cond)
        h = self.norm2(h) * gamma[:, :, None, None] + beta[:, :, None, None]
        h = self.conv2(F.silu(h))
        return self.skip(x) + h


class CrossAttention(nn.Module):
    def __init__(self, query_dim: int, context_dim: int, num_heads: int, head_dim: int):
        super().__init__()
        inner = num_heads * head_dim
        self.num_heads = num_heads
        self.head_dim = head_dim
        self.to_q = nn.Linear(query_dim, inner, bias=False)
        self.to_k = nn.Linear(context_dim, inner, bias=False)
        self.to_v = nn.Linear(context_dim, inner, bias=False)
        self.to_out = nn.Linear(inner, query_dim)

    def forward(self, x, context, mask, return_weights: bool = False):
        """x: (B, N, C) queries, context: (B, M, d_F), mask: (B, M) bool."""
        if torch.any(mask.sum(-1) == 0):
            raise ValueError("cross-attention needs at least one valid token per example")
        B, N, _ = x.shape
        M = context.shape[1]
        q = self.to_q(x).view(B, N, self.num_heads, self.head_dim).transpose(1, 2)
        k = self.to_k(context).view(B, M, self.num_heads, self.head_dim).transpose(1, 2)
        v = self.to_v(context).view(B, M, self.num_heads, self.head_dim).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        logits = logits.masked_fill(~mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(B, N, -1)
        out = self.to_out(out)
        return (out, weights) if return_weights else out


class SpatialTransformer(nn.Module):
    """Pre-norm cross-attention and feed-forward over flattened spatial positions."""

    def __init__(self, channels: int, d_F: int, num_heads: int, head_dim: int, ff_mult: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(channels)
        self.attn = CrossAttention(channels, d_F, num_heads, head_dim)
        self.norm2 = nn.LayerNorm(channels)
        self.ff = nn.Sequential(
            nn.Linear(channels, ff_mult * channels), nn.GELU(), nn.Linear(ff_mult * channels, channels)
        )

    def forward(self, h, context, mask):
        B, C, H, W = h.shape
        x = h.flatten(2).transpose(1, 2)
        x = cross_attention(x, context, mask, self)
        x = x + self.ff(self.norm2(x))
        return x.transpose(1, 2).reshape(B, C, H, W)


def cross_attention(x, context, mask, block: SpatialTransformer, return_weights: bool = False):
    """Residual cross-attention of (B, N, C) queries onto local embeddings.

    Accepts a (B, C, H, W) feature map too, in which case the result has that shape.
    """
    spatial = x.ndim == 4
    if spatial:
        B, C, H, W = x.shape
        x = x.flatten(2).transpose(1, 2)
    if context.shape[-1] != block.attn.to_k.in_features:
        raise ValueError(f"local embedding dim {context.shape[-1]} != {block.attn.to_k.in_features}")
    out, weights = block.attn(block.norm1(x), context, mask, return_weights=True)
    y = x + out
    if spatial:
        y = y.transpose(1, 2).reshape(B, C, H, W)
    return (y, weights) if return_weights else y


class UNet(nn.Module):
    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        c = config
        ted = c.time_embed_dim
        self.time_mlp = nn.Sequential(nn.Linear(ted, ted), nn.SiLU(), nn.Linear(ted, ted))
        if c.uses_global:
            self.global_proj = nn.Linear(c.d_G, ted)
            self.null_global = nn.Parameter(torch.zeros(c.d_G))
        self.null_local = nn.Parameter(torch.zeros(1, c.d_F))
        if c.pooling == "sap":
            self.sap_weight = nn.Parameter(torch.zeros(c.d_F))

        self.in_conv = nn.Conv2d(c.in_channels, c.base_channels, 3, padding=1)
        n_levels = len(c.channel_multipliers)
        self.down_res = nn.ModuleList()
        self.down_attn = nn.ModuleDict()
        self.downsample = nn.ModuleList()
        ch = c.base_channels
        skip_ch = []
        for lvl in range(n_levels):
            out = c.level_channels(lvl)
            self.down_res.append(ResBlock(ch, out, c.cond_dim, c.groupnorm_groups))
            if lvl in c.attention_levels:
                self.down_attn[str(lvl)] = SpatialTransformer(out, c.d_F, c.num_heads, c.head_dim, c.ff_mult)
            skip_ch.append(out)
            ch = out
            if lvl < n_levels - 1:
                self.downsample.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))

        self.mid_res1 = ResBlock(ch, ch, c.cond_dim, c.groupnorm_groups)
        self.mid_attn = (SpatialTransformer(ch, c.d_F, c.num_heads, c.head_dim, c.ff_mult)
                         if c.attention_levels else None)
        self.mid_res2 = ResBlock(ch, ch, c.cond_dim, c.groupnorm_groups)

        self.up_res = nn.ModuleList()
        self.up_attn = nn.ModuleDict()
        self.upsample = nn.ModuleList()
        for i, lvl in enumerate(reversed(range(n_levels))):
            out = c.level_channels(lvl)
            self.up_res.append(ResBlock(ch + skip_ch[lvl], out, c.cond_dim, c.groupnorm_groups))
            if lvl in c.attention_levels:
                self.up_attn[str(lvl)] = SpatialTransformer(out, c.d_F, c.num_heads, c.head_dim, c.ff_mult)
            ch = out
            if lvl > 0:
                self.upsample.append(nn.Conv2d(ch, ch, 3, padding=1))

        self.out_norm = nn.GroupNorm(c.groupnorm_groups, ch)
        self.out_conv = nn.Conv2d(ch, c.out_channels, 3, padding=1)
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        """normal(0, 0.02) projections, zero biases, zero FiLM maps, zero output conv."""
        for name, p in self.named_parameters():
            if name.endswith(".film.weight") or name.endswith(".film.bias") or name.startswith("out_conv"):
                nn.init.zeros_(p)
            elif name.startswith("null_") or name == "sap_weight":
                nn.init.zeros_(p)
            elif "norm" in name.rsplit(".", 1)[0].rsplit(".", 1)[-1]:
                nn.init.ones_(p) if name.endswith("weight") else nn.init.zeros_(p)
            elif name.endswith("bias"):
                nn.init.zeros_(p)
            else:
                with torch.no_grad():
                    p.normal_(0.0, INIT_STD, generator=generator)

    def block_names(self) -> list[str]:
        return [n for n, m in self.named_modules() if isinstance(m, ResBlock)]

    # -- conditioning -------------------------------------------------------

    def resolve_condition(self, cond: ConditionBatch):
        """Apply null substitution and pooling. Returns (local, mask, global or None)."""
        c = self.config
        dtype = self.null_local.dtype
        local = cond.local.to(dtype)
        mask = cond.mask
        if local.shape[-1] != c.d_F:
            raise ValueError(f"local embedding dim {local.shape[-1]} != d_F {c.d_F}")
        dl = cond.drop_local
        if dl.any():
            null_rows = torch.zeros_like(local)
            null_rows[:, 0] = self.null_local[0]
            null_mask = torch.zeros_like(mask)
            null_mask[:, 0] = True
            local = torch.where(dl[:, None, None], null_rows, local)
            mask = torch.where(dl[:, None], null_mask, mask)
        if not c.uses_global:
            return local, mask, None
        if c.pooling == "mean":
            G = mean_pool(local, mask)
        elif c.pooling == "sap":
            w = sap_weights(local, self.sap_weight, mask)
            G = (w.unsqueeze(-1) * local).sum(-2)
        else:
            if cond.global_ is None:
                raise ValueError("provider pooling needs global embeddings in the condition batch")
            G = cond.global_.to(dtype)
            if G.shape[-1] != c.d_G:
                raise ValueError(f"global embedding dim {G.shape[-1]} != d_G {c.d_G}")
        G = torch.where(cond.drop_global[:, None], self.null_global.expand_as(G), G)
        return local, mask, G

    def conditioning_vector(self, t, G) -> torch.Tensor:
        dtype = self.null_local.dtype
        t_emb = self.time_mlp(time_embedding(t, self.config.time_embed_dim).to(dtype))
        if G is None:
            return t_emb
        return torch.cat([t_emb, self.global_proj(G)], dim=-1)

    def film_params(self, t, cond: ConditionBatch) -> dict[str, tuple[torch.Tensor, torch.Tensor]]:
        """(gamma, beta) for every ResNet block, keyed by block name."""
        _, _, G = self.resolve_condition(cond)
        vec = F.silu(self.conditioning_vector(t, G))
        return {name: self.get_submodule(name).film_params(vec) for name in self.block_names()}

    # -- forward -----------------------------------------------------------

    def forward(self, z_t, t, cond: ConditionBatch):
        c = self.config
        if tuple(z_t.shape[1:]) != c.latent_shape:
            raise ValueError(f"latent shape {tuple(z_t.shape[1:])} != configured {c.latent_shape}")
        B = z_t.shape[0]
        t = torch.as_tensor(t)
        if t.ndim == 0:
            t = t.expand(B)
        if len(cond) != B:
            raise ValueError("condition batch size does not match latent batch")
        local, mask, G = self.resolve_condition(cond)
        vec = F.silu(self.conditioning_vector(t, G))

        h = self.in_conv(z_t)
        skips = []
        n_levels = len(c.channel_multipliers)
        for lvl in range(n_levels):
            h = self.down_res[lvl](h, vec)
            if str(lvl) in self.down_attn:
                h = self.down_attn[str(lvl)](h, local, mask)
            skips.append(h)
            if lvl < n_levels - 1:
                h = self.downsample[lvl](h)

        h = self.mid_res1(h, vec)
        if self.mid_attn is not None:
            h = self.mid_attn(h, local, mask)
        h = self.mid_res2(h, vec)

        for i, lvl in enumerate(reversed(range(n_levels))):
            h = torch.cat([h, skips[lvl]], dim=1)
            h = self.up_res[i](h, vec)
            if str(lvl) in self.up_attn:
                h = self.up_attn[str(lvl)](h, local, mask)
            if lvl > 0:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsample[i](h)
        return self.out_conv(F.silu(self.out_norm(h)))


def unet_forward(z_t, t, cond: ConditionBatch, model: UNet) -> torch.Tensor:
    return model(z_t, t, cond)


# ---------------------------------------------------------------------------
# parameter accounting


def _linear(i, o, bias=True):
    return i * o + (o if bias else 0)


def _conv(i, o, k):
    return i * o * k * k + o


def _resblock(i, o, cond_dim):
    n = 2 * i + _conv(i, o, 3) + 2 * o + _conv(o, o, 3) + _linear(cond_dim, 2 * o)
    return n + (_conv(i, o, 1) if i != o else 0)


def _transformer(ch, d_F, inner, ff_mult):
    attn = _linear(ch, inner, False) + 2 * _linear(d_F, inner, False) + _linear(inner, ch)
    ff = _linear(ch, ff_mult * ch) + _linear(ff_mult * ch, ch)
    return 4 * ch + attn + ff


def count_parameters(config: UNetConfig) -> int:
    """Closed-form parameter count, kept independent of the module tree."""
    c = config
    ted = c.time_embed_dim
    inner = c.num_heads * c.head_dim
    n = 2 * _linear(ted, ted) + c.d_F
    if c.uses_global:
        n += _linear(c.d_G, ted) + c.d_G
    if c.pooling == "sap":
        n += c.d_F
    n += _conv(c.in_channels, c.base_channels, 3)
    levels = len(c.channel_multipliers)
    ch = c.base_channels
    skips = []
    for lvl in range(levels):
        out = c.level_channels(lvl)
        n += _resblock(ch, out, c.cond_dim)
        if lvl in c.attention_levels:
            n += _transformer(out, c.d_F, inner, c.ff_mult)
        skips.append(out)
        ch = out
        if lvl < levels - 1:
            n += _conv(ch, ch, 3)
    n += 2 * _resblock(ch, ch, c.cond_dim)
    if c.attention_levels:
        n += _transformer(ch, c.d_F, inner, c.ff_mult)
    for lvl in reversed(range(levels)):
        out = c.level_channels(lvl)
        n += _resblock(ch + skips[lvl], out, c.cond_dim)
        if lvl in c.attention_levels:
            n += _transformer(out, c.d_F, inner, c.ff_mult)
        ch = out
        if lvl > 0:
            n += _conv(ch, ch, 3)
    n += 2 * ch + _conv(ch, c.out_channels, 3)
    return n


def parameter_schema(config: UNetConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every parameter a model with this config owns."""
    with torch.device("meta"):
        model = UNet(config)
    return {name: tuple(p.shape) for name, p in model.named_parameters()}


def weights_to_numpy(model: UNet) -> dict[str, np.ndarray]:
    return {n: p.detach().cpu().numpy() for n, p in model.named_parameters()}


def load_weights(model: UNet, weights: dict[str, np.ndarray]) -> None:
    """Copy a flat weight map into ``model``, checking names and shapes exactly."""
    schema = {n: tuple(p.shape) for n, p in model.named_parameters()}
    missing = sorted(set(schema) - set(weights))
    extra = sorted(set(weights) - set(schema))
    if missing or extra:
        raise ValueError(f"weight map does not match config schema: missing={missing} unexpected={extra}")
    for name, p in model.named_parameters():
        arr = np.asarray(weights[name])
        if tuple(arr.shape) != schema[name]:
            raise ValueError(f"{name}: shape {arr.shape} != expected {schema[name]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name}: non-finite values")
        with torch.no_grad():
            p.copy_(torch.from_numpy(np.array(arr)).to(p.dtype))
