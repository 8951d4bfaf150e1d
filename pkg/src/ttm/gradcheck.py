"""Central finite-difference check of reverse-mode gradients, per parameter tensor."""

from __future__ import annotations

from typing import Callable

import torch


def finite_difference_check(model: torch.nn.Module, loss_fn: Callable[[], torch.Tensor],
                            step: float = 1e-4, max_elements: int | None = None,
                            seed: int = 0) -> dict[str, float]:
    """Relative error ``|g_ad - g_fd| / max(|g_ad|, |g_fd|)`` for every named parameter.

    With ``max_elements`` set, each tensor is probed at that many randomly chosen
    coordinates (all of them if the tensor is smaller). Run in float64.
    """
    gen = torch.Generator().manual_seed(seed)
    model.zero_grad(set_to_none=True)
    loss = loss_fn()
    loss.backward()
    analytic = {n: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
                for n, p in model.named_parameters()}
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            n = flat.numel()
            if max_elements is None or n <= max_elements:
                idx = torch.arange(n)
            else:
                idx = torch.randperm(n, generator=gen)[:max_elements]
            fd = torch.empty(len(idx), dtype=flat.dtype)
            for j, i in enumerate(idx.tolist()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                fd[j] = (up - down) / (2 * step)
            a = analytic[name].view(-1)[idx]
            scale = max(a.norm().item(), fd.norm().item())
            errors[name] = 0.0 if scale == 0.0 else (a - fd).norm().item() / scale
    return errors
