import numpy as np
import pytest
import torch

from ttm.conditioning import HashProvider, collate
from ttm.unet import UNet, UNetConfig

torch.set_num_threads(1)

TINY = dict(in_channels=2, out_channels=2, base_channels=8, channel_multipliers=(1, 2),
            attention_levels=(0, 1), num_heads=1, head_dim=8, d_F=8, d_G=8, time_embed_dim=8,
            groupnorm_groups=4, ff_mult=1, latent_size=(8, 8))


def tiny_config(**kw) -> UNetConfig:
    return UNetConfig(**{**TINY, **kw})


def randomize(model: UNet, seed: int = 0, std: float = 0.3) -> UNet:
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64).to(p.dtype) * std)
    return model


def tiny_batch(config: UNetConfig, prompts=("a calm piano", "a dark very fast drums track"),
               dtype=torch.float64, seed=0):
    provider = HashProvider(config.d_F, config.d_G, seed=seed)
    pooling = config.pooling
    conds = [provider.condition(p, pooling) for p in prompts]
    return collate(conds, config.d_F, config.d_G if pooling == "provider" else 0, dtype)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
