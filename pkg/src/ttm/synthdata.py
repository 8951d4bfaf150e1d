"""Procedural caption -> latent dataset.

Each caption fills a fixed template from a small closed vocabulary per attribute
slot. The clean latent for an attribute tuple is a sum of orthogonal, attribute
keyed sinusoidal patterns normalized to unit RMS; every example adds seeded
Gaussian perturbation of fixed amplitude on top.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ttm import formats

NOISE_AMPLITUDE = 0.1
PATTERN_SEED = 20240611
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class CaptionGrammar:
    name: str
    slots: tuple[tuple[str, tuple[str, ...]], ...]
    template: str
    num_held_out: int = 0

    @property
    def slot_names(self) -> list[str]:
        return [s for s, _ in self.slots]

    @property
    def num_classes(self) -> int:
        return sum(len(v) for _, v in self.slots)

    def all_tuples(self) -> list[tuple[int, ...]]:
        return list(itertools.product(*(range(len(v)) for _, v in self.slots)))

    def caption(self, attrs: tuple[int, ...]) -> str:
        fill = {name: values[i] for (name, values), i in zip(self.slots, attrs)}
        return self.template.format(**fill)

    def _regex(self) -> re.Pattern:
        pattern = re.escape(self.template)
        for name, values in self.slots:
            alts = "|".join(re.escape(v) for v in sorted(values, key=len, reverse=True))
            pattern = pattern.replace(re.escape("{" + name + "}"), f"(?P<{name}>{alts})")
        return re.compile(f"^{pattern}$")


GRAMMARS = {
    "default": CaptionGrammar(
        name="default",
        slots=(
            ("mood", ("calm", "happy", "dark", "epic")),
            ("instrument", ("piano", "acoustic guitar", "string ensemble", "drums")),
            ("tempo", ("slow", "moderate", "fast", "very fast")),
        ),
        template="a {mood} {instrument} track with a {tempo} tempo",
        num_held_out=8,
    ),
    "tiny": CaptionGrammar(
        name="tiny",
        slots=(("mood", ("calm", "dark")), ("instrument", ("piano", "drums"))),
        template="a {mood} {instrument} track",
    ),
}


def get_grammar(name: str) -> CaptionGrammar:
    try:
        return GRAMMARS[name]
    except KeyError:
        raise ValueError(f"unknown grammar {name!r}; choose from {sorted(GRAMMARS)}") from None


def caption_to_attributes(caption, grammar: CaptionGrammar) -> tuple[int, ...]:
    if not isinstance(caption, str):
        caption = " ".join(caption)
    m = grammar._regex().match(" ".join(caption.lower().split()))
    if m is None:
        raise ValueError(f"caption not generated by grammar {grammar.name!r}: {caption!r}")
    return tuple(values.index(m.group(name)) for name, values in grammar.slots)


def held_out_tuples(grammar: CaptionGrammar) -> list[tuple[int, ...]]:
    """Tuples reserved for the test split.

    Built from cyclic diagonals so each vocabulary item is held out equally often,
    which keeps the train marginals exactly uniform.
    """
    n = grammar.num_held_out
    if n == 0:
        return []
    sizes = [len(v) for _, v in grammar.slots]
    k = sizes[0]
    if any(s != k for s in sizes) or n % k:
        raise ValueError("held-out diagonals need equal slot sizes and a multiple of that size")
    out = []
    for d in range(n // k):
        offsets = [0] + [(d + 1) * (j + 1) % k for j in range(len(sizes) - 1)]
        out.extend(tuple((i + o) % k for o in offsets) for i in range(k))
    if len(set(out)) != len(out):
        raise ValueError("held-out diagonals collide")
    return sorted(out)


# ---------------------------------------------------------------------------
# latents


def _frequencies(grammar: CaptionGrammar, latent_size: tuple[int, int]):
    """Distinct (fy, fx) per (slot, value), all inside the grid's Nyquist band."""
    H, W = latent_size
    freqs = []
    for s, (_, values) in enumerate(grammar.slots):
        row = []
        for k in range(len(values)):
            f = k + 1
            row.append([(0, f), (f, 0), (f, f), (f, -f)][s % 4] if s < 4 else (f, s))
        freqs.append(row)
    limit = min(H, W) // 2
    if any(abs(a) >= limit or abs(b) >= limit for row in freqs for a, b in row):
        raise ValueError("latent too small for the grammar's pattern frequencies")
    return freqs


def attribute_patterns(grammar: CaptionGrammar, shape=(4, 16, 16)) -> list[list[np.ndarray]]:
    """Unit-RMS basis pattern per (slot, value)."""
    C, H, W = shape
    rng = np.random.default_rng(PATTERN_SEED)
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    out = []
    for row in _frequencies(grammar, (H, W)):
        pats = []
        for fy, fx in row:
            chan = rng.standard_normal(C)
            chan /= np.linalg.norm(chan)
            phase = rng.uniform(0, 2 * math.pi)
            wave = np.cos(2 * math.pi * (fy * yy / H + fx * xx / W) + phase)
            p = chan[:, None, None] * wave[None]
            pats.append(p / np.sqrt(np.mean(p**2)))
        out.append(pats)
    return out


def clean_latent(attrs: tuple[int, ...], grammar: CaptionGrammar, shape=(4, 16, 16),
                 _patterns=None) -> np.ndarray:
    pats = _patterns or attribute_patterns(grammar, shape)
    z = sum(pats[s][k] for s, k in enumerate(attrs))
    return z / np.sqrt(np.mean(z**2))


@dataclass
class SynthExample:
    id: str
    caption: str
    attributes: tuple[int, ...]
    latent: np.ndarray
    split: str
    example_seed: int


@dataclass
class SynthDataset:
    grammar: CaptionGrammar
    seed: int
    latent_shape: tuple[int, int, int]
    examples: list[SynthExample] = field(default_factory=list)

    def split(self, name: str) -> list[SynthExample]:
        return [e for e in self.examples if e.split == name]

    def latents(self, split: str) -> np.ndarray:
        return np.stack([e.latent for e in self.split(split)])

    def captions(self, split: str) -> list[str]:
        return [e.caption for e in self.split(split)]

    def manifest(self) -> dict:
        return {
            "format": "ttm-synthdata",
            "version": 1,
            "grammar": self.grammar.name,
            "seed": self.seed,
            "latent_shape": list(self.latent_shape),
            "noise_amplitude": NOISE_AMPLITUDE,
            "held_out": [list(t) for t in held_out_tuples(self.grammar)],
            "examples": [
                {"id": e.id, "caption": e.caption, "attributes": list(e.attributes),
                 "split": e.split, "example_seed": e.example_seed,
                 "file": f"latents/{e.id}.lat"}
                for e in self.examples
            ],
        }


def generate_dataset(seed: int = 0, n_train: int = 512, n_val: int = 64, n_test: int = 64,
                     grammar: CaptionGrammar | str = "default",
                     latent_shape=(4, 16, 16)) -> SynthDataset:
    if isinstance(grammar, str):
        grammar = get_grammar(grammar)
    counts = {"train": n_train, "val": n_val, "test": n_test}
    if any(n < 0 for n in counts.values()):
        raise ValueError("split sizes must be non-negative")
    latent_shape = tuple(latent_shape)
    patterns = attribute_patterns(grammar, latent_shape)
    everything = grammar.all_tuples()
    held = set(held_out_tuples(grammar))
    seen = [t for t in everything if t not in held]
    pools = {"train": seen, "val": seen, "test": everything}
    rng = np.random.default_rng(seed)
    ds = SynthDataset(grammar, seed, latent_shape)
    index = 0
    for split in SPLITS:
        pool = pools[split]
        picks = rng.integers(0, len(pool), size=counts[split])
        for i, p in enumerate(picks):
            attrs = pool[int(p)]
            noise_rng = np.random.default_rng([seed, index])
            z = clean_latent(attrs, grammar, latent_shape, patterns)
            z = z + NOISE_AMPLITUDE * noise_rng.standard_normal(latent_shape)
            ds.examples.append(SynthExample(
                id=f"{split}-{i:05d}", caption=grammar.caption(attrs), attributes=attrs,
                latent=z.astype(np.float32), split=split, example_seed=index,
            ))
            index += 1
    return ds


def save_dataset(ds: SynthDataset, root) -> None:
    root = Path(root)
    (root / "latents").mkdir(parents=True, exist_ok=True)
    for e in ds.examples:
        formats.write_latent(root / "latents" / f"{e.id}.lat", e.latent)
    with open(root / "manifest.json", "w") as f:
        json.dump(ds.manifest(), f, indent=1, sort_keys=True)
        f.write("\n")


def load_dataset(root) -> SynthDataset:
    root = Path(root)
    with open(root / "manifest.json") as f:
        man = json.load(f)
    if man.get("format") != "ttm-synthdata":
        raise ValueError(f"{root}: not a synthetic dataset manifest")
    grammar = get_grammar(man["grammar"])
    ds = SynthDataset(grammar, man["seed"], tuple(man["latent_shape"]))
    for e in man["examples"]:
        ds.examples.append(SynthExample(
            id=e["id"], caption=e["caption"], attributes=tuple(e["attributes"]),
            latent=formats.read_latent(root / e["file"]), split=e["split"],
            example_seed=e["example_seed"],
        ))
    return ds


def directory_hash(root) -> str:
    """sha256 over every file's relative path and bytes, in sorted order."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()
