"""Text conditioning: embedding providers, global pooling from local token
embeddings, and classifier-free-guidance condition dropout."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ttm import formats

POOLING_MODES = ("none", "mean", "sap", "provider")


class _Null:
    """Marker for a dropped condition; the model swaps in its learned null embedding."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NULL"

    def __reduce__(self):
        return (_Null, ())


NULL = _Null()


@dataclass(frozen=True)
class LocalEmbeddings:
    F: np.ndarray  # (M, d_F)
    mask: np.ndarray  # (M,) bool, True = real token

    def __post_init__(self):
        if self.F.ndim != 2 or self.F.shape[0] < 1:
            raise ValueError(f"local embeddings must be M x d with M >= 1, got {self.F.shape}")
        if self.mask.shape != (self.F.shape[0],):
            raise ValueError("mask length must equal the number of rows")
        if not np.all(np.isfinite(self.F)):
            raise ValueError("local embeddings contain non-finite values")

    @classmethod
    def unmasked(cls, F) -> "LocalEmbeddings":
        F = np.asarray(F)
        return cls(F, np.ones(F.shape[0], dtype=bool))

    @property
    def num_tokens(self) -> int:
        return self.F.shape[0]

    @property
    def dim(self) -> int:
        return self.F.shape[1]


@dataclass(frozen=True)
class GlobalEmbedding:
    G: np.ndarray  # (d_G,)

    def __post_init__(self):
        if self.G.ndim != 1:
            raise ValueError("global embedding must be a vector")
        if not np.all(np.isfinite(self.G)):
            raise ValueError("global embedding contains non-finite values")

    @property
    def dim(self) -> int:
        return self.G.shape[0]


@dataclass(frozen=True)
class Condition:
    """One prompt's conditioning.

    ``local`` is LocalEmbeddings or NULL. ``global_`` is a GlobalEmbedding, NULL, or
    None when the model derives it (pooling) or does not use one.
    """

    local: LocalEmbeddings | _Null
    global_: GlobalEmbedding | _Null | None = None

    @classmethod
    def null(cls) -> "Condition":
        return cls(NULL, NULL)

    @property
    def is_null(self) -> bool:
        return self.local is NULL and self.global_ in (NULL, None)


# ---------------------------------------------------------------------------
# pooling


def _as_batch(F, mask):
    if isinstance(F, LocalEmbeddings):
        return torch.from_numpy(np.asarray(F.F, dtype=np.float64)), torch.from_numpy(F.mask), True
    F = torch.as_tensor(F)
    if mask is None:
        mask = torch.ones(F.shape[:-1], dtype=torch.bool)
    return F, torch.as_tensor(mask, dtype=torch.bool), False


def _wrap(G, wrap: bool):
    if wrap:
        return GlobalEmbedding(G.detach().numpy())
    return G


def mean_pool(F, mask=None):
    """Average of the valid rows of ``F`` (``(..., M, d)``), dividing by the valid count."""
    F, mask, wrap = _as_batch(F, mask)
    counts = mask.sum(-1, keepdim=True)
    if torch.any(counts == 0):
        raise ValueError("mean_pool needs at least one valid token")
    G = (F * mask.unsqueeze(-1).to(F.dtype)).sum(-2) / counts.to(F.dtype)
    return _wrap(G, wrap)


def sap_weights(F, w, mask=None) -> torch.Tensor:
    """Softmax attention weights over rows, padded rows get exactly zero."""
    F, mask, _ = _as_batch(F, mask)
    if torch.any(mask.sum(-1) == 0):
        raise ValueError("self_attention_pool needs at least one valid token")
    w = torch.as_tensor(w, dtype=F.dtype)
    scores = F @ w
    scores = scores.masked_fill(~mask, float("-inf"))
    return torch.softmax(scores, dim=-1)


def self_attention_pool(F, w, mask=None):
    """Self-attention pooling: ``softmax(F w)^T F`` over valid rows."""
    Ft, _, wrap = _as_batch(F, mask)
    weights = sap_weights(F, w, mask)
    G = (weights.unsqueeze(-1) * Ft).sum(-2)
    return _wrap(G, wrap)


# ---------------------------------------------------------------------------
# CFG dropout


def cfg_dropout(c: Condition, p: float, rng: np.random.Generator, independent: bool = False) -> Condition:
    """Drop the condition to NULL with probability ``p``.

    One shared draw nulls local and global together. With ``independent`` each
    part gets its own draw.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability must be in [0, 1], got {p}")
    if independent:
        local = NULL if rng.random() < p else c.local
        glob = NULL if rng.random() < p else c.global_
        return Condition(local, glob)
    if rng.random() < p:
        return Condition.null()
    return c


def dropout_flags(batch_size: int, p: float, rng: np.random.Generator,
                  independent: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized form of :func:`cfg_dropout`: returns (drop_local, drop_global) flags."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability must be in [0, 1], got {p}")
    drop_local = rng.random(batch_size) < p
    drop_global = rng.random(batch_size) < p if independent else drop_local.copy()
    return drop_local, drop_global


# ---------------------------------------------------------------------------
# providers


def tokenize(prompt: str | Sequence[str]) -> list[str]:
    if isinstance(prompt, str):
        return prompt.lower().split()
    return list(prompt)


def _hash_vector(key: str, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    v = rng.standard_normal(dim)
    v = (v / np.linalg.norm(v)).astype(np.float32)
    return v / np.linalg.norm(v)


def hash_embed(prompt, d_F: int, seed: int = 0) -> LocalEmbeddings:
    """Deterministic per-token unit vectors keyed by (token, seed)."""
    tokens = tokenize(prompt)
    if not tokens:
        raise ValueError("cannot embed an empty prompt")
    rows = np.stack([_hash_vector(f"tok|{seed}|{tok}", d_F) for tok in tokens])
    return LocalEmbeddings.unmasked(rows)


def hash_sentence_embed(prompt, d_G: int, seed: int = 0) -> GlobalEmbedding:
    """Whole-prompt unit vector: a sentence-level stand-in with no token structure."""
    tokens = tokenize(prompt)
    if not tokens:
        raise ValueError("cannot embed an empty prompt")
    return GlobalEmbedding(_hash_vector(f"sent|{seed}|{' '.join(tokens)}", d_G))


class EmbeddingProvider:
    """Maps a prompt to local (and optionally global) embeddings."""

    name = "base"
    deterministic = True

    def __init__(self, d_F: int, d_G: int = 0):
        self.d_F = d_F
        self.d_G = d_G

    def local(self, prompt) -> LocalEmbeddings:
        raise NotImplementedError

    def global_(self, prompt) -> GlobalEmbedding:
        raise NotImplementedError

    def condition(self, prompt, pooling: str) -> Condition:
        if pooling not in POOLING_MODES:
            raise ValueError(f"unknown pooling mode {pooling!r}")
        local = self.local(prompt)
        return Condition(local, self.global_(prompt) if pooling == "provider" else None)

    def describe(self) -> dict:
        return {"name": self.name, "d_F": self.d_F, "d_G": self.d_G}


class HashProvider(EmbeddingProvider):
    name = "hash"

    def __init__(self, d_F: int, d_G: int = 0, seed: int = 0):
        super().__init__(d_F, d_G)
        self.seed = seed

    def local(self, prompt) -> LocalEmbeddings:
        return hash_embed(prompt, self.d_F, self.seed)

    def global_(self, prompt) -> GlobalEmbedding:
        if self.d_G <= 0:
            raise ValueError("hash provider configured without a global dimension")
        return hash_sentence_embed(prompt, self.d_G, self.seed)

    def describe(self) -> dict:
        return {**super().describe(), "seed": self.seed}


class FileProvider(EmbeddingProvider):
    """Embeddings computed elsewhere, stored as EMB1 files.

    The directory holds ``index.json`` mapping each prompt (tokens joined by a
    single space, lowercased) to ``{"local": <file>, "global": <file>}``.
    """

    name = "file"

    def __init__(self, root, d_F: int, d_G: int = 0):
        super().__init__(d_F, d_G)
        self.root = Path(root)
        with open(self.root / "index.json") as f:
            self.index = json.load(f)

    def _entry(self, prompt) -> dict:
        key = " ".join(tokenize(prompt))
        if key not in self.index:
            raise KeyError(f"no embeddings for prompt {key!r} in {self.root}")
        return self.index[key]

    def local(self, prompt) -> LocalEmbeddings:
        emb = load_embeddings(self.root / self._entry(prompt)["local"], expected_dim=self.d_F)
        if not isinstance(emb, LocalEmbeddings):
            raise ValueError("expected a local embedding file")
        return emb

    def global_(self, prompt) -> GlobalEmbedding:
        emb = load_embeddings(self.root / self._entry(prompt)["global"], expected_dim=self.d_G)
        if not isinstance(emb, GlobalEmbedding):
            raise ValueError("expected a global embedding file")
        return emb

    def describe(self) -> dict:
        return {**super().describe(), "root": str(self.root)}


def make_provider(spec: dict) -> EmbeddingProvider:
    kind = spec.get("name", "hash")
    if kind == "hash":
        return HashProvider(spec["d_F"], spec.get("d_G", 0), spec.get("seed", 0))
    if kind == "file":
        return FileProvider(spec["root"], spec["d_F"], spec.get("d_G", 0))
    raise ValueError(f"unknown embedding provider {kind!r}")


# ---------------------------------------------------------------------------
# interchange files


def save_embeddings(path, emb: LocalEmbeddings | GlobalEmbedding) -> None:
    if isinstance(emb, GlobalEmbedding):
        formats.write_emb(path, emb.G[None, :], is_global=True)
    else:
        formats.write_emb(path, emb.F, is_global=False)


def load_embeddings(path, expected_dim: int | None = None) -> LocalEmbeddings | GlobalEmbedding:
    """Read an EMB1 file. Padding is not stored, so every row loads as valid."""
    data, is_global = formats.read_emb(path)
    if expected_dim is not None and data.shape[1] != expected_dim:
        raise ValueError(f"{path}: embedding dim {data.shape[1]} != expected {expected_dim}")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite values")
    if is_global:
        return GlobalEmbedding(data[0])
    return LocalEmbeddings.unmasked(data)


# ---------------------------------------------------------------------------
# batching


@dataclass
class ConditionBatch:
    """Padded batch of conditions as the denoiser consumes them."""

    local: torch.Tensor  # (B, M, d_F)
    mask: torch.Tensor  # (B, M) bool
    global_: torch.Tensor | None  # (B, d_G) or None
    drop_local: torch.Tensor  # (B,) bool
    drop_global: torch.Tensor  # (B,) bool

    def __len__(self):
        return self.local.shape[0]

    def to(self, dtype) -> "ConditionBatch":
        return ConditionBatch(self.local.to(dtype), self.mask,
                              None if self.global_ is None else self.global_.to(dtype),
                              self.drop_local, self.drop_global)

    def nulled(self) -> "ConditionBatch":
        """Same shapes with every example dropped."""
        ones = torch.ones_like(self.drop_local)
        return ConditionBatch(self.local, self.mask, self.global_, ones, ones.clone())

    def with_drops(self, drop_local, drop_global) -> "ConditionBatch":
        return ConditionBatch(self.local, self.mask, self.global_,
                              torch.as_tensor(drop_local, dtype=torch.bool),
                              torch.as_tensor(drop_global, dtype=torch.bool))


def collate(conditions: Sequence[Condition], d_F: int, d_G: int = 0,
            dtype=torch.float32) -> ConditionBatch:
    """Pad a list of conditions into a :class:`ConditionBatch`.

    Dropped parts are filled with zeros and flagged; the model replaces them.
    """
    if not conditions:
        raise ValueError("empty condition batch")
    B = len(conditions)
    M = max((c.local.num_tokens for c in conditions if c.local is not NULL), default=1)
    local = torch.zeros(B, M, d_F, dtype=dtype)
    mask = torch.zeros(B, M, dtype=torch.bool)
    drop_local = torch.zeros(B, dtype=torch.bool)
    drop_global = torch.zeros(B, dtype=torch.bool)
    has_global = any(isinstance(c.global_, GlobalEmbedding) for c in conditions)
    glob = torch.zeros(B, d_G, dtype=dtype) if has_global else None
    for i, c in enumerate(conditions):
        if c.local is NULL:
            drop_local[i] = True
            mask[i, 0] = True
        else:
            if c.local.dim != d_F:
                raise ValueError(f"local embedding dim {c.local.dim} != model d_F {d_F}")
            m = c.local.num_tokens
            local[i, :m] = torch.from_numpy(np.asarray(c.local.F)).to(dtype)
            mask[i, :m] = torch.from_numpy(c.local.mask)
            if not mask[i].any():
                raise ValueError("non-null local condition has no valid tokens")
        if c.global_ is NULL:
            drop_global[i] = True
        elif isinstance(c.global_, GlobalEmbedding):
            if c.global_.dim != d_G:
                raise ValueError(f"global embedding dim {c.global_.dim} != model d_G {d_G}")
            glob[i] = torch.from_numpy(np.asarray(c.global_.G)).to(dtype)
        elif has_global:
            raise ValueError("batch mixes conditions with and without global embeddings")
    return ConditionBatch(local, mask, glob, drop_local, drop_global)
