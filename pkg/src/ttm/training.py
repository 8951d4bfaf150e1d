"""v-objective training loop with CFG dropout, AdamW and linear warmup."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ttm import evaluation
from ttm.checkpoint import load_checkpoint, save_checkpoint
from ttm.conditioning import ConditionBatch, EmbeddingProvider, collate, dropout_flags
from ttm.sampling import SamplerConfig, sample
from ttm.schedule import NoiseSchedule, make_cosine_schedule, q_sample, v_target
from ttm.synthdata import SynthDataset
from ttm.unet import UNet

log = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    warmup_steps: int = 2000
    batch_size: int = 16
    total_steps: int = 5000
    cfg_dropout_p: float = 0.1
    independent_dropout: bool = False
    validate_every: int = 500
    val_sampler_steps: int = 25
    val_guidance_scale: float = 9.0
    seed: int = 0
    precision: str = "float32"
    num_timesteps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float = 1.0

    def validate(self) -> list[str]:
        errs = []
        if not self.learning_rate > 0:
            errs.append("learning_rate must be positive")
        if self.warmup_steps < 0:
            errs.append("warmup_steps must be >= 0")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if self.total_steps < 0:
            errs.append("total_steps must be >= 0")
        if not 0.0 <= self.cfg_dropout_p <= 1.0:
            errs.append("cfg_dropout_p must be in [0, 1]")
        if self.validate_every < 0:
            errs.append("validate_every must be >= 0 (0 disables validation)")
        if self.val_sampler_steps < 1 or self.val_sampler_steps > self.num_timesteps:
            errs.append("val_sampler_steps must be in [1, num_timesteps]")
        if self.val_guidance_scale < 0:
            errs.append("val_guidance_scale must be >= 0")
        if self.precision not in _DTYPES:
            errs.append(f"precision must be one of {sorted(_DTYPES)}")
        if self.num_timesteps < 1:
            errs.append("num_timesteps must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            errs.append("Adam betas must be in [0, 1)")
        if not self.adam_eps > 0:
            errs.append("adam_eps must be positive")
        if self.weight_decay < 0:
            errs.append("weight_decay must be >= 0")
        if self.grad_clip < 0:
            errs.append("grad_clip must be >= 0 (0 disables clipping)")
        return errs

    @property
    def dtype(self):
        return _DTYPES[self.precision]

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, last_good: str | None):
        super().__init__(f"non-finite loss at step {step}; last good checkpoint: {last_good}")
        self.step = step
        self.last_good = last_good


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    exp_avg: dict[str, torch.Tensor]
    exp_avg_sq: dict[str, torch.Tensor]
    step: int = 0
    weight_decay: float = 0.01

    @classmethod
    def zeros_like(cls, params: dict[str, torch.Tensor], weight_decay: float = 0.01) -> "OptimizerState":
        return cls({k: torch.zeros_like(p) for k, p in params.items()},
                   {k: torch.zeros_like(p) for k, p in params.items()}, 0, weight_decay)


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear ramp 0 -> learning_rate over warmup_steps, constant afterwards."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if config.warmup_steps == 0:
        return config.learning_rate
    return config.learning_rate * min(1.0, step / config.warmup_steps)


@torch.no_grad()
def adamw_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: OptimizerState,
               lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """In-place AdamW update with decoupled weight decay."""
    if set(params) != set(grads) or set(params) != set(state.exp_avg):
        raise ValueError("params, grads and optimizer state must share the same names")
    b1, b2 = betas
    state.step += 1
    bc1 = 1 - b1**state.step
    bc2 = 1 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m, v = state.exp_avg[name], state.exp_avg_sq[name]
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: param {tuple(p.shape)}, grad {tuple(g.shape)}")
        p.mul_(1 - lr * state.weight_decay)
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        denom = (v / bc2).sqrt_().add_(eps)
        p.addcdiv_(m, denom, value=-lr / bc1)


# ---------------------------------------------------------------------------
# loss


def v_loss(model, z0, cond: ConditionBatch, t, eps, schedule: NoiseSchedule) -> torch.Tensor:
    """Mean squared error between the v target and the model prediction."""
    z_t = q_sample(z0, eps, t, schedule)
    target = v_target(z0, eps, t, schedule)
    pred = model(z_t, t, cond)
    return torch.mean((pred - target) ** 2)


def draw_noise(rng: np.random.Generator, batch: int, shape, T: int, dtype=torch.float32):
    """Uniform integer timesteps in [1, T] and standard normal noise."""
    t = torch.from_numpy(rng.integers(1, T + 1, size=batch))
    eps = torch.from_numpy(rng.standard_normal((batch, *shape))).to(dtype)
    return t, eps


def ldm_loss(model: UNet, z0, cond: ConditionBatch, schedule: NoiseSchedule, rng: np.random.Generator):
    """Loss with freshly drawn (t, eps) and its gradients w.r.t. every named parameter."""
    if z0.shape[0] == 0:
        raise ValueError("empty batch")
    t, eps = draw_noise(rng, z0.shape[0], z0.shape[1:], schedule.num_steps, z0.dtype)
    model.zero_grad(set_to_none=True)
    loss = v_loss(model, z0, cond, t, eps, schedule)
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    loss.backward()
    grads = {n: (p.grad if p.grad is not None else torch.zeros_like(p)) for n, p in model.named_parameters()}
    return loss.detach(), grads


# ---------------------------------------------------------------------------
# data


@dataclass
class SplitTensors:
    latents: torch.Tensor
    cond: ConditionBatch
    captions: list[str]
    attributes: list[tuple[int, ...]]

    def __len__(self):
        return self.latents.shape[0]

    def batch(self, idx) -> tuple[torch.Tensor, ConditionBatch]:
        idx = torch.as_tensor(idx)
        c = self.cond
        return self.latents[idx], ConditionBatch(
            c.local[idx], c.mask[idx], None if c.global_ is None else c.global_[idx],
            c.drop_local[idx], c.drop_global[idx])


def prepare_split(dataset: SynthDataset, split: str, provider: EmbeddingProvider, pooling: str,
                  dtype=torch.float32) -> SplitTensors:
    examples = dataset.split(split)
    if not examples:
        raise ValueError(f"dataset has no {split!r} examples")
    conds = [provider.condition(e.caption, pooling) for e in examples]
    cond = collate(conds, provider.d_F, provider.d_G, dtype)
    lat = torch.from_numpy(np.stack([e.latent for e in examples])).to(dtype)
    return SplitTensors(lat, cond, [e.caption for e in examples], [e.attributes for e in examples])


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    model: UNet
    step: int
    metric_log: list[dict] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)
    best: dict | None = None
    null_fraction: float = float("nan")
    best_weights: dict | None = None

    def smoothed_loss(self, which: str = "final", window: int = 100) -> float:
        h = self.loss_history
        if not h:
            return float("nan")
        part = h[:window] if which == "initial" else h[-window:]
        return float(np.mean(part))


def select_best(metric_log: list[dict]) -> dict | None:
    """Lowest FAD, KL as tie-break, earliest step after that."""
    scored = [r for r in metric_log if r.get("fad") is not None]
    if not scored:
        return None
    return min(scored, key=lambda r: (r["fad"], r["kl"] if r["kl"] is not None else math.inf, r["step"]))


def validate(model: UNet, val: SplitTensors, schedule: NoiseSchedule, sampler: SamplerConfig,
             grammar: str | None) -> tuple[float, float | None]:
    model.eval()
    dtype = next(model.parameters()).dtype
    gen = sample(model, sampler, val.cond.to(dtype), schedule, dtype=dtype)
    report = evaluation.evaluate(gen.double().numpy(), val.latents.double().numpy(), grammar)
    return report["fad"], report["kl"]


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _append_jsonl(path: Path, record: dict) -> None:
    with open(path, "a") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def train(config: TrainConfig, train_data: SplitTensors, model: UNet, *,
          val_data: SplitTensors | None = None, grammar: str | None = None,
          out_dir=None, resume_from=None, schedule: NoiseSchedule | None = None,
          meta: dict | None = None) -> TrainResult:
    """Run the training loop.

    With ``out_dir`` every validation writes ``checkpoints/<id>.ckpt`` and appends a
    line to ``metrics.jsonl``; the best checkpoint id goes to ``best.json``.
    ``meta`` is copied into every checkpoint header. Determinism is guaranteed
    single-threaded only.
    """
    errs = config.validate()
    if errs:
        raise ValueError("invalid TrainConfig: " + "; ".join(errs))
    if len(train_data) == 0:
        raise ValueError("empty training set")
    schedule = schedule or make_cosine_schedule(config.num_timesteps)
    model = model.to(config.dtype)
    params = dict(model.named_parameters())
    rng = np.random.default_rng(config.seed)
    opt = OptimizerState.zeros_like(params, config.weight_decay)
    step = 0
    result = TrainResult(model, 0)
    n_seen = n_null = 0

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        loaded, schedule, meta, opt_loaded = load_checkpoint(resume_from, config.dtype)
        if loaded.config != model.config:
            raise ValueError("checkpoint config differs from the model being trained")
        model.load_state_dict(loaded.state_dict())
        if opt_loaded is None:
            raise ValueError(f"{resume_from} has no optimizer state to resume from")
        opt = opt_loaded
        step = int(meta["train_step"])
        rng.bit_generator.state = meta["rng_state"]
        n_seen, n_null = meta.get("examples_seen", 0), meta.get("examples_null", 0)
        result.loss_history = list(meta.get("loss_history", []))
        if out is not None and (out / "metrics.jsonl").exists():
            with open(out / "metrics.jsonl") as f:
                result.metric_log = [json.loads(line) for line in f if line.strip()]
        log.info("resumed from %s at step %d", resume_from, step)

    sampler = SamplerConfig(config.val_sampler_steps, config.val_guidance_scale, "standard", config.seed)
    last_good = None
    since_val: list[float] = []

    def checkpoint(tag: str) -> str:
        ckpt_id = f"step{step:07d}" if tag == "" else tag
        if out is not None:
            save_checkpoint(out / "checkpoints" / f"{ckpt_id}.ckpt", model, schedule, opt, {
                **(meta or {}), "train_step": step, "rng_state": _rng_state(rng), "examples_seen": n_seen,
                "examples_null": n_null, "loss_history": result.loss_history,
                "train_config": config.to_dict(),
            })
        return ckpt_id

    while step < config.total_steps:
        model.train()
        idx = rng.integers(0, len(train_data), size=config.batch_size)
        z0, cond = train_data.batch(idx)
        z0, cond = z0.to(config.dtype), cond.to(config.dtype)
        drop_l, drop_g = dropout_flags(config.batch_size, config.cfg_dropout_p, rng, config.independent_dropout)
        cond = cond.with_drops(drop_l, drop_g)
        n_seen += config.batch_size
        n_null += int(np.sum(drop_l & drop_g))
        try:
            loss, grads = ldm_loss(model, z0, cond, schedule, rng)
        except FloatingPointError:
            last_good = checkpoint("last_good")
            _write_best(out, result)
            raise TrainingDiverged(step, last_good) from None
        if config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(list(grads.values()), config.grad_clip)
        adamw_step(params, grads, opt, lr_at(step, config), (config.beta1, config.beta2), config.adam_eps)
        step += 1
        result.step = step
        lv = float(loss)
        result.loss_history.append(lv)
        since_val.append(lv)

        if config.validate_every and (step % config.validate_every == 0 or step == config.total_steps):
            fad = kl = None
            if val_data is not None:
                fad, kl = validate(model, val_data, schedule, sampler, grammar)
            ckpt_id = checkpoint("")
            last_good = ckpt_id
            record = {"step": step, "loss": float(np.mean(since_val)), "fad": fad, "kl": kl,
                      "checkpoint": ckpt_id, "null_fraction": n_null / n_seen, "lr": lr_at(step, config)}
            since_val = []
            result.metric_log.append(record)
            if out is not None:
                _append_jsonl(out / "metrics.jsonl", record)
            best = select_best(result.metric_log)
            if best is record:
                result.best_weights = {k: v.detach().clone() for k, v in model.state_dict().items()}
            log.info("step %d loss %.4f fad %s kl %s", step, record["loss"], fad, kl)

    result.null_fraction = n_null / n_seen if n_seen else float("nan")
    result.best = select_best(result.metric_log)
    _write_best(out, result)
    return result


def _write_best(out: Path | None, result: TrainResult) -> None:
    if out is None:
        return
    best = select_best(result.metric_log)
    with open(out / "best.json", "w") as f:
        json.dump({"best": best, "final_step": result.step}, f, indent=1, sort_keys=True)
        f.write("\n")
