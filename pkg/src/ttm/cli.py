"""Command line: ``ttm gen-data | train | sample | eval | ablate``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
``TTM_OUTPUT_ROOT`` sets the directory that relative ``--out`` paths resolve against.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from ttm import evaluation, formats
from ttm.checkpoint import load_checkpoint, save_checkpoint
from ttm.conditioning import collate, make_provider
from ttm.sampling import CFG_FORMULAS, SamplerConfig, sample
from ttm.schedule import make_cosine_schedule
from ttm.synthdata import GRAMMARS, directory_hash, generate_dataset, load_dataset, save_dataset
from ttm.training import TrainConfig, TrainingDiverged, prepare_split, train
from ttm.unet import UNet, UNetConfig, count_parameters

log = logging.getLogger("ttm")

RUN_CONFIG_VERSION = 1
OUTPUT_ROOT_ENV = "TTM_OUTPUT_ROOT"

PROVIDER_NOTE = ("embeddings come from a deterministic hash provider standing in for "
                 "pretrained text encoders; values are toy-scale and only the ordering is meaningful")

# (label, pooling mode) in table order
ABLATION_VARIANTS = (
    ("local-only", "none"),
    ("provider+local", "provider"),
    ("mean+local", "mean"),
    ("sap+local", "sap"),
)


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    unet: UNetConfig = field(default_factory=UNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    provider: dict = field(default_factory=lambda: {"name": "hash", "seed": 0})
    grammar: str = "default"
    output_dir: str | None = None
    version: int = RUN_CONFIG_VERSION

    @property
    def pooling(self) -> str:
        return self.unet.pooling

    def provider_spec(self) -> dict:
        d_G = self.unet.d_G if self.unet.pooling == "provider" else 0
        return {**self.provider, "d_F": self.unet.d_F, "d_G": d_G}

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "dataset": self.dataset,
            "grammar": self.grammar,
            "output_dir": self.output_dir,
            "provider": dict(self.provider),
            "unet": self.unet.to_dict(),
            "train": self.train.to_dict(),
            "sampler": self.sampler.to_dict(),
        }


_TOP_KEYS = {"version", "dataset", "grammar", "output_dir", "provider", "unet", "train", "sampler"}
_PROVIDER_KEYS = {"name", "seed", "root"}


def _section(cls, raw, name: str, errors: list[str]):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errors.append(f"{name}: expected an object")
        return None
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        errors.append(f"{name}: unknown keys {unknown}")
        raw = {k: v for k, v in raw.items() if k in known}
    try:
        obj = cls(**raw) if cls is not UNetConfig else UNetConfig.from_dict(raw)
    except (TypeError, ValueError) as e:
        errors.append(f"{name}: {e}")
        return None
    if cls is not UNetConfig:
        try:
            errors.extend(f"{name}: {m}" for m in obj.validate())
        except TypeError as e:
            errors.append(f"{name}: wrong value type ({e})")
            return None
    return obj


def parse_run_config(raw: dict) -> RunConfig:
    """Build a RunConfig, collecting every problem before raising ``UsageError``."""
    errors = []
    if not isinstance(raw, dict):
        raise UsageError("run config must be a JSON object")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        errors.append(f"unknown top-level keys {unknown}")
    if raw.get("version") != RUN_CONFIG_VERSION:
        errors.append(f"version must be {RUN_CONFIG_VERSION}, got {raw.get('version')!r}")
    if not isinstance(raw.get("dataset"), str):
        errors.append("dataset: a path string is required")
    grammar = raw.get("grammar", "default")
    if grammar not in GRAMMARS:
        errors.append(f"grammar: unknown {grammar!r}; choose from {sorted(GRAMMARS)}")
    provider = raw.get("provider", {"name": "hash", "seed": 0})
    if not isinstance(provider, dict):
        errors.append("provider: expected an object")
        provider = {}
    else:
        bad = sorted(set(provider) - _PROVIDER_KEYS)
        if bad:
            errors.append(f"provider: unknown keys {bad}")
        if provider.get("name", "hash") not in ("hash", "file"):
            errors.append(f"provider: unknown name {provider.get('name')!r}")
        if provider.get("name") == "file" and "root" not in provider:
            errors.append("provider: file provider needs 'root'")
    unet = _section(UNetConfig, raw.get("unet"), "unet", errors)
    tc = _section(TrainConfig, raw.get("train"), "train", errors)
    sc = _section(SamplerConfig, raw.get("sampler"), "sampler", errors)
    if errors:
        raise UsageError("invalid run config:\n  " + "\n  ".join(errors))
    return RunConfig(dataset=raw["dataset"], unet=unet, train=tc, sampler=sc, provider=provider,
                     grammar=grammar, output_dir=raw.get("output_dir"))


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise UsageError(f"config not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: not valid JSON ({e})") from None
    cfg = parse_run_config(raw)
    # dataset paths in a config file are relative to the file
    ds = Path(cfg.dataset)
    if not ds.is_absolute():
        cfg = replace(cfg, dataset=str((path.parent / ds).resolve()))
    return cfg


def resolve_output(path) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args) -> int:
    out = resolve_output(args.out)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise UsageError(f"{out} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(out)
    ds = generate_dataset(args.seed, args.n_train, args.n_val, args.n_test, args.grammar)
    save_dataset(ds, out)
    print(f"wrote {len(ds.examples)} examples to {out}")
    print(f"hash {directory_hash(out)}")
    return 0


# ---------------------------------------------------------------------------
# train


def _seeded_model(config: UNetConfig, seed: int, dtype) -> UNet:
    model = UNet(config)
    model.reset_parameters(torch.Generator().manual_seed(seed))
    return model.to(dtype)


def train_run(cfg: RunConfig, out: Path, resume_from=None, plot: bool = True):
    """Train one RunConfig into ``out``; returns the TrainResult."""
    dataset = load_dataset(cfg.dataset)
    if dataset.grammar.name != cfg.grammar:
        raise UsageError(f"config grammar {cfg.grammar!r} != dataset grammar {dataset.grammar.name!r}")
    if tuple(dataset.latent_shape) != cfg.unet.latent_shape:
        raise UsageError(f"dataset latent shape {dataset.latent_shape} != model {cfg.unet.latent_shape}")
    provider = make_provider(cfg.provider_spec())
    dtype = cfg.train.dtype
    tr = prepare_split(dataset, "train", provider, cfg.pooling, dtype)
    va = prepare_split(dataset, "val", provider, cfg.pooling, dtype) if dataset.split("val") else None
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "run_config.json", cfg.to_dict())
    model = _seeded_model(cfg.unet, cfg.train.seed, dtype)
    meta = {"run": {"provider": cfg.provider_spec(), "grammar": cfg.grammar}}
    result = train(cfg.train, tr, model, val_data=va, grammar=cfg.grammar, out_dir=out,
                   resume_from=resume_from, meta=meta)
    schedule = make_cosine_schedule(cfg.train.num_timesteps)
    save_checkpoint(out / "final.ckpt", result.model, schedule,
                    meta={**meta, "train_step": result.step})
    with open(out / "loss.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss"])
        for i, v in enumerate(result.loss_history, 1):
            w.writerow([i, repr(v)])
    if plot and result.loss_history:
        from ttm.plotting import loss_curve
        loss_curve(out / "loss.png", result.loss_history, title=f"pooling={cfg.pooling}")
    return result


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.steps is not None:
        cfg = replace(cfg, train=replace(cfg.train, total_steps=args.steps))
    if args.dry_run:
        n = count_parameters(cfg.unet)
        print(f"config ok: pooling={cfg.pooling} parameters={n}")
        return 0
    out = resolve_output(args.out or cfg.output_dir or "runs/train")
    t0 = time.time()
    result = train_run(cfg, out, resume_from=args.resume)
    best = result.best["checkpoint"] if result.best else None
    print(f"trained to step {result.step} in {time.time() - t0:.1f}s; "
          f"loss {result.smoothed_loss('initial'):.4f} -> {result.smoothed_loss('final'):.4f}; best {best}")
    print(f"outputs in {out}")
    return 0


# ---------------------------------------------------------------------------
# sample


def _read_manifest(root: Path) -> dict | None:
    p = root / "manifest.json"
    if not p.exists():
        return None
    with open(p) as f:
        return json.load(f)


def sample_prompts(checkpoint, prompts: list[str], out: Path, sampler: SamplerConfig,
                   reference_ids: list[str] | None = None) -> dict:
    model, schedule, meta, _ = load_checkpoint(checkpoint)
    run = meta.get("run")
    if run is None:
        raise ValueError(f"{checkpoint}: no provider recorded; was it written by `ttm train`?")
    provider = make_provider(run["provider"])
    pooling = model.config.pooling
    try:
        conds = [provider.condition(p, pooling) for p in prompts]
    except (KeyError, ValueError) as e:
        raise ValueError(f"prompt not usable with provider {provider.describe()}: {e}") from None
    batch = collate(conds, provider.d_F, provider.d_G)
    model.eval()
    z = sample(model, sampler, batch, schedule).numpy()
    out.mkdir(parents=True, exist_ok=True)
    (out / "latents").mkdir(exist_ok=True)
    entries = []
    for i, (prompt, lat) in enumerate(zip(prompts, z)):
        name = f"latents/sample-{i:05d}.lat"
        formats.write_latent(out / name, lat)
        e = {"id": f"sample-{i:05d}", "file": name, "prompt": prompt, "index": i}
        if reference_ids is not None:
            e["reference_id"] = reference_ids[i]
        entries.append(e)
    manifest = {"format": "ttm-samples", "version": 1, "checkpoint": str(checkpoint),
                "grammar": run.get("grammar"), "sampler": sampler.to_dict(), "samples": entries}
    _write_json(out / "manifest.json", manifest)
    return manifest


def cmd_sample(args) -> int:
    sampler = SamplerConfig(args.steps, args.omega, args.formula, args.seed)
    errs = sampler.validate()
    if errs:
        raise UsageError("; ".join(errs))
    refs = None
    if args.from_dataset:
        ds = load_dataset(args.from_dataset)
        examples = ds.split(args.split)
        if not examples:
            raise UsageError(f"dataset split {args.split!r} is empty")
        prompts = [e.caption for e in examples]
        refs = [e.id for e in examples]
    else:
        prompts = list(args.prompt or [])
        if args.prompts_file:
            prompts += [ln.strip() for ln in Path(args.prompts_file).read_text().splitlines() if ln.strip()]
    if not prompts:
        raise UsageError("give --prompt, --prompts-file, or --from-dataset")
    prompts = [p for p in prompts for _ in range(args.per_prompt)]
    if refs is not None:
        refs = [r for r in refs for _ in range(args.per_prompt)]
    out = resolve_output(args.out)
    sample_prompts(args.checkpoint, prompts, out, sampler, refs)
    print(f"wrote {len(prompts)} latents to {out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def read_latent_set(root, split: str | None = None) -> tuple[np.ndarray, list[dict], str | None]:
    """Latents plus manifest entries from a sample dir, a dataset dir, or a bare LAT1 dir."""
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"{root}: not a directory")
    man = _read_manifest(root)
    if man is None:
        files = sorted(root.rglob("*.lat"))
        entries = [{"id": p.stem, "file": str(p.relative_to(root))} for p in files]
        grammar = None
    elif man.get("format") == "ttm-synthdata":
        entries = [e for e in man["examples"] if split is None or e["split"] == split]
        grammar = man["grammar"]
    elif man.get("format") == "ttm-samples":
        entries = man["samples"]
        grammar = man.get("grammar")
    else:
        raise ValueError(f"{root}: unrecognized manifest format {man.get('format')!r}")
    if not entries:
        raise ValueError(f"{root}: no latents found")
    lat = np.stack([formats.read_latent(root / e["file"]) for e in entries]).astype(np.float64)
    return lat, entries, grammar


def resolve_pairing(gen_entries: list[dict], ref_entries: list[dict]) -> list[tuple[int, int]] | None:
    index = {e["id"]: j for j, e in enumerate(ref_entries)}
    pairs = []
    for i, e in enumerate(gen_entries):
        rid = e.get("reference_id")
        if rid is None or rid not in index:
            return None
        pairs.append((i, index[rid]))
    return pairs


def evaluate_dirs(gen_dir, ref_dir, grammar: str | None = None, require_kl: bool = False,
                  gen_split: str | None = None, ref_split: str | None = None) -> dict:
    gen, gen_entries, g1 = read_latent_set(gen_dir, gen_split)
    ref, ref_entries, g2 = read_latent_set(ref_dir, ref_split)
    grammar = grammar or g2 or g1
    pairing = None
    if Path(gen_dir).resolve() == Path(ref_dir).resolve() and gen_split == ref_split:
        pairing = [(i, i) for i in range(len(gen))]
    else:
        pairing = resolve_pairing(gen_entries, ref_entries)
    if require_kl and (pairing is None or grammar is None):
        why = "no grammar known" if pairing is not None else "generated samples lack resolvable reference_id"
        raise ValueError(f"KL requested but samples cannot be paired: {why}")
    report = evaluation.evaluate(gen, ref, grammar if pairing is not None else None, pairing)
    report["generated_dir"] = str(gen_dir)
    report["reference_dir"] = str(ref_dir)
    return report


def cmd_eval(args) -> int:
    report = evaluate_dirs(args.generated, args.reference, args.grammar, args.kl,
                           args.generated_split, args.reference_split)
    if args.out:
        _write_json(resolve_output(args.out), report)
    kl = "n/a" if report["kl"] is None else f"{report['kl']:.6f}"
    print(f"fad\t{report['fad']:.6f}\nkl\t{kl}\nn_generated\t{report['n_generated']}"
          f"\nn_reference\t{report['n_reference']}")
    return 0


# ---------------------------------------------------------------------------
# ablate


def _variant_config(base: RunConfig, pooling: str, seed: int, baseline: bool = False) -> RunConfig:
    u = base.unet
    d_G = u.d_F if pooling in ("mean", "sap") else u.d_G
    unet = replace(u, pooling=pooling, d_G=d_G)
    tc = replace(base.train, seed=seed, validate_every=0)
    if baseline:
        tc = replace(tc, cfg_dropout_p=1.0)
    return replace(base, unet=unet, train=tc, sampler=replace(base.sampler, seed=seed + 1000))


def _run_variant(cfg: RunConfig, out: Path, split: str) -> dict:
    result = train_run(cfg, out, plot=False)
    ds = load_dataset(cfg.dataset)
    examples = ds.split(split)
    manifest = sample_prompts(out / "final.ckpt", [e.caption for e in examples], out / "samples",
                              cfg.sampler, [e.id for e in examples])
    del manifest
    report = evaluate_dirs(out / "samples", cfg.dataset, cfg.grammar, True, None, split)
    return {"fad": report["fad"], "kl": report["kl"],
            "loss_initial": result.smoothed_loss("initial"), "loss_final": result.smoothed_loss("final")}


def run_ablation(base: RunConfig, out: Path, seeds=(0, 1, 2), baseline: bool = True,
                 split: str = "test") -> dict:
    """Train and score the four conditioning variants (plus the unconditional baseline)."""
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "base_config.json", base.to_dict())
    plan = [(label, pooling, False) for label, pooling in ABLATION_VARIANTS]
    if baseline:
        plan.append(("unconditional", "none", True))
    per_seed = []
    summary = {}
    for label, pooling, is_base in plan:
        runs = []
        for seed in seeds:
            cfg = _variant_config(base, pooling, seed, is_base)
            t0 = time.time()
            r = _run_variant(cfg, out / label / f"seed{seed}", split)
            r.update(variant=label, seed=seed, seconds=round(time.time() - t0, 1))
            log.info("%s seed %d: fad %.4f kl %.4f (%.0fs)", label, seed, r["fad"], r["kl"], r["seconds"])
            runs.append(r)
            per_seed.append(r)
        cfg0 = _variant_config(base, pooling, seeds[0], is_base)
        fads = np.array([r["fad"] for r in runs])
        kls = np.array([r["kl"] for r in runs])
        summary[label] = {
            "variant": label, "pooling": pooling, "params": count_parameters(cfg0.unet),
            "fad": float(fads.mean()), "kl": float(kls.mean()),
            "fad_std": float(fads.std()), "kl_std": float(kls.std()),
            "loss_initial": float(np.mean([r["loss_initial"] for r in runs])),
            "loss_final": float(np.mean([r["loss_final"] for r in runs])),
        }
    rows = [summary[label] for label, _ in ABLATION_VARIANTS]
    base_row = summary.get("unconditional")
    _write_table(out / "table.csv", rows, base, seeds, split)
    if base_row is not None:
        _write_table(out / "baseline.csv", [base_row], base, seeds, split)
    _write_json(out / "results.json", {"rows": rows, "baseline": base_row, "runs": per_seed,
                                       "seeds": list(seeds), "split": split})
    from ttm.plotting import ablation_bars
    ablation_bars(out / "ablation.png", rows, base_row,
                  title=f"toy ablation, {len(seeds)} seeds, hash-provider embeddings")
    return {"rows": rows, "baseline": base_row, "runs": per_seed}


TABLE_COLUMNS = ("variant", "params", "fad", "kl", "fad_std", "kl_std", "loss_initial", "loss_final")


def _write_table(path: Path, rows: list[dict], base: RunConfig, seeds, split: str) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# {PROVIDER_NOTE}\n")
        f.write(f"# mean over seeds {list(seeds)}; {base.train.total_steps} steps; "
                f"guidance {base.sampler.guidance_scale} ({base.sampler.cfg_formula}); "
                f"{base.sampler.num_sampling_steps} DDIM steps; scored on the {split} split\n")
        w = csv.writer(f)
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow([r["variant"], r["params"]] + [f"{r[k]:.6f}" for k in TABLE_COLUMNS[2:]])


def read_table(path) -> list[dict]:
    with open(path) as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def cmd_ablate(args) -> int:
    base = load_run_config(args.config)
    if args.steps is not None:
        base = replace(base, train=replace(base.train, total_steps=args.steps))
    out = resolve_output(args.out)
    t0 = time.time()
    res = run_ablation(base, out, tuple(args.seeds), baseline=not args.no_baseline, split=args.split)
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(TABLE_COLUMNS[:4])
    for r in res["rows"] + ([res["baseline"]] if res["baseline"] else []):
        w.writerow([r["variant"], r["params"], f"{r['fad']:.4f}", f"{r['kl']:.4f}"])
    print(f"# {PROVIDER_NOTE}")
    print(f"# {time.time() - t0:.0f}s; table, figure and per-seed results in {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttm", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write the synthetic caption/latent dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--grammar", choices=sorted(GRAMMARS), default="default")
    g.add_argument("--n-train", type=int, default=512)
    g.add_argument("--n-val", type=int, default=64)
    g.add_argument("--n-test", type=int, default=64)
    g.add_argument("--force", action="store_true", help="replace a non-empty output directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a denoiser from a run config (JSON)")
    t.add_argument("config", help="run config path; see configs/toy.json")
    t.add_argument("--out", help="run directory (default: output_dir from the config)")
    t.add_argument("--resume", metavar="CKPT", help="continue from a training checkpoint")
    t.add_argument("--steps", type=int, help="override train.total_steps")
    t.add_argument("--dry-run", action="store_true", help="validate and print the parameter count")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate latents with guided DDIM")
    s.add_argument("checkpoint")
    s.add_argument("--prompt", action="append", help="caption; repeatable")
    s.add_argument("--prompts-file", help="one caption per line")
    s.add_argument("--from-dataset", metavar="DIR", help="use captions of a dataset split (enables KL pairing)")
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--per-prompt", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=200, help="DDIM steps (default 200)")
    s.add_argument("--omega", type=float, default=9.0, help="guidance scale (default 9.0)")
    s.add_argument("--formula", choices=CFG_FORMULAS, default="standard")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="toy-FAD and toy-KL between two latent directories")
    e.add_argument("generated")
    e.add_argument("reference")
    e.add_argument("--generated-split", choices=("train", "val", "test"))
    e.add_argument("--reference-split", choices=("train", "val", "test"))
    e.add_argument("--grammar", choices=sorted(GRAMMARS))
    e.add_argument("--kl", action="store_true", help="fail unless KL can be computed")
    e.add_argument("--out", help="report JSON path")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and score the four conditioning variants")
    a.add_argument("config", help="base run config; pooling is overridden per variant")
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    a.add_argument("--steps", type=int, help="override train.total_steps")
    a.add_argument("--split", default="test", choices=("val", "test"))
    a.add_argument("--no-baseline", action="store_true", help="skip the unconditional baseline")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    # bit-exact reruns are only promised single-threaded
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"ttm: error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"ttm: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, FloatingPointError, formats.FormatError) as e:
        print(f"ttm: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
