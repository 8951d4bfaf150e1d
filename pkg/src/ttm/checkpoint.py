"""Save and load denoiser checkpoints (weights, config, schedule, optional optimizer state)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from ttm import formats
from ttm.schedule import NoiseSchedule
from ttm.unet import UNet, UNetConfig, load_weights, parameter_schema, weights_to_numpy

_OPT_M = "optim.exp_avg."
_OPT_V = "optim.exp_avg_sq."


def save_checkpoint(path, model: UNet, schedule: NoiseSchedule, opt_state=None, meta: dict | None = None):
    tensors = weights_to_numpy(model)
    header = {
        "unet_config": model.config.to_dict(),
        "schedule": schedule.to_dict(),
        **(meta or {}),
    }
    if opt_state is not None:
        for name, m in opt_state.exp_avg.items():
            tensors[_OPT_M + name] = m.detach().cpu().numpy()
        for name, v in opt_state.exp_avg_sq.items():
            tensors[_OPT_V + name] = v.detach().cpu().numpy()
        header["optimizer"] = {"step": opt_state.step, "weight_decay": opt_state.weight_decay}
    formats.write_checkpoint(Path(path), tensors, header)


def load_checkpoint(path, dtype=torch.float32):
    """Returns ``(model, schedule, meta, opt_state_or_None)``; validates names and shapes."""
    from ttm.training import OptimizerState

    tensors, meta = formats.read_checkpoint(Path(path))
    config = UNetConfig.from_dict(meta["unet_config"])
    schedule = NoiseSchedule.from_dict(meta["schedule"])
    schema = parameter_schema(config)
    weights = {k: v for k, v in tensors.items() if not k.startswith("optim.")}
    model = UNet(config).to(dtype)
    load_weights(model, weights)
    opt_state = None
    if "optimizer" in meta:
        m = {k[len(_OPT_M):]: torch.from_numpy(v).to(dtype) for k, v in tensors.items() if k.startswith(_OPT_M)}
        v = {k[len(_OPT_V):]: torch.from_numpy(a).to(dtype) for k, a in tensors.items() if k.startswith(_OPT_V)}
        if set(m) != set(schema) or set(v) != set(schema):
            raise formats.FormatError(f"{path}: optimizer moments do not match the parameter schema")
        for name, shape in schema.items():
            if tuple(m[name].shape) != shape or tuple(v[name].shape) != shape:
                raise formats.FormatError(f"{path}: optimizer moment shape mismatch for {name}")
        opt_state = OptimizerState(m, v, int(meta["optimizer"]["step"]), float(meta["optimizer"]["weight_decay"]))
    return model, schedule, meta, opt_state


def checkpoint_weights(path) -> dict[str, np.ndarray]:
    tensors, _ = formats.read_checkpoint(Path(path))
    return {k: v for k, v in tensors.items() if not k.startswith("optim.")}
