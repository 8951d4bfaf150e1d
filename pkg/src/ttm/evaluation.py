"""FAD-style and KL-style evaluation on toy features.

The feature extractor is a fixed random projection with a tanh nonlinearity plus
per-channel statistics. Label distributions come from a frozen linear probe on
those features, one softmax per attribute slot, concatenated and rescaled to sum
to one. Both weight sets ship in ``ttm/data/evaluator.npz``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

PROB_FLOOR = 1e-10
PSD_TOL = 1e-8


@dataclass(frozen=True)
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if self.sigma.shape != (self.mu.shape[0], self.mu.shape[0]):
            raise ValueError("covariance must be D x D for a D-dim mean")


# ---------------------------------------------------------------------------
# extractor / probe


@dataclass(frozen=True)
class Evaluator:
    proj: np.ndarray  # (C*H*W, P)
    bias: np.ndarray  # (P,)
    latent_shape: tuple[int, int, int]
    probes: dict  # grammar name -> (W (D, classes), b (classes,), slot_sizes)

    @property
    def feature_dim(self) -> int:
        return self.proj.shape[1] + 2 * self.latent_shape[0]

    @property
    def extractor_version(self) -> str:
        return _digest(self.proj, self.bias)

    def classifier_version(self, grammar: str) -> str:
        W, b, sizes = self.probe(grammar)
        return _digest(W, b, np.asarray(sizes))

    def probe(self, grammar: str):
        if grammar not in self.probes:
            raise KeyError(f"no frozen probe for grammar {grammar!r}")
        return self.probes[grammar]


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


@lru_cache(maxsize=1)
def load_evaluator() -> Evaluator:
    with resources.files("ttm.data").joinpath("evaluator.npz").open("rb") as f:
        npz = np.load(f)
        data = {k: npz[k] for k in npz.files}
    probes = {}
    for key in data:
        if key.startswith("probe_W."):
            g = key.split(".", 1)[1]
            probes[g] = (data[key], data[f"probe_b.{g}"], tuple(int(s) for s in data[f"probe_sizes.{g}"]))
    return Evaluator(data["proj"], data["bias"], tuple(int(s) for s in data["latent_shape"]), probes)


def toy_features(latents, evaluator: Evaluator | None = None) -> np.ndarray:
    """Features for one latent ``(C, H, W)`` or a batch ``(N, C, H, W)``."""
    ev = evaluator or load_evaluator()
    x = np.asarray(latents, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if tuple(x.shape[1:]) != ev.latent_shape:
        raise ValueError(f"latent shape {tuple(x.shape[1:])} != extractor shape {ev.latent_shape}")
    flat = x.reshape(x.shape[0], -1)
    proj = np.tanh(flat @ ev.proj + ev.bias)
    chans = x.reshape(x.shape[0], x.shape[1], -1)
    feats = np.concatenate([proj, chans.mean(-1), chans.std(-1)], axis=1)
    return feats[0] if single else feats


def label_distributions(features, grammar: str, evaluator: Evaluator | None = None) -> np.ndarray:
    """Per-sample probability vectors over all (slot, value) classes."""
    ev = evaluator or load_evaluator()
    W, b, sizes = ev.probe(grammar)
    logits = np.atleast_2d(features) @ W + b
    parts, start = [], 0
    for n in sizes:
        z = logits[:, start:start + n]
        z = np.exp(z - z.max(axis=1, keepdims=True))
        parts.append(z / z.sum(axis=1, keepdims=True))
        start += n
    return np.concatenate(parts, axis=1) / len(sizes)


# ---------------------------------------------------------------------------
# Frechet distance


def gaussian_stats(features) -> GaussianStats:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two feature rows to estimate a covariance")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    mu = X.mean(axis=0)
    diff = X - mu
    sigma = diff.T @ diff / (X.shape[0] - 1)
    return GaussianStats(mu, (sigma + sigma.T) / 2)


def _psd_eigh(M: np.ndarray, what: str):
    M = (M + M.T) / 2
    w, V = np.linalg.eigh(M)
    tol = PSD_TOL * max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -tol:
        raise ValueError(f"{what} is not PSD (min eigenvalue {w.min():.3e})")
    return np.clip(w, 0.0, None), V


def sqrtm_psd(M: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues under the numerical-rank cutoff ``d * eps * max`` are zeroed, since
    sqrt would blow their round-off up to ~sqrt(eps) of the scale.
    """
    w, V = _psd_eigh(np.asarray(M, dtype=np.float64), "matrix")
    w[w < len(w) * np.finfo(np.float64).eps * w.max(initial=0.0)] = 0.0
    return (V * np.sqrt(w)) @ V.T


def symmetrized_product(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``A^1/2 B A^1/2``: symmetric PSD and similar to ``A B``."""
    rA = sqrtm_psd(A)
    P = rA @ B @ rA
    return (P + P.T) / 2


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    if a.mu.shape != b.mu.shape:
        raise ValueError(f"dimension mismatch: {a.mu.shape[0]} vs {b.mu.shape[0]}")
    _psd_eigh(a.sigma, "first covariance")
    _psd_eigh(b.sigma, "second covariance")
    covmean = sqrtm_psd(symmetrized_product(a.sigma, b.sigma))
    diff = a.mu - b.mu
    return float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.trace(covmean))


def fad(gen_latents, ref_latents, evaluator: Evaluator | None = None) -> float:
    return frechet_distance(gaussian_stats(toy_features(gen_latents, evaluator)),
                            gaussian_stats(toy_features(ref_latents, evaluator)))


# ---------------------------------------------------------------------------
# KL


def kl_score(gen, ref, pairing=None, direction: str = "ref||gen") -> float:
    """Mean per-pair KL divergence between label distributions.

    ``pairing`` is a sequence of (gen_index, ref_index); by default rows are paired
    by position and the sets must be the same size. Probabilities are floored at
    1e-10 before the log.
    """
    P = np.atleast_2d(np.asarray(gen, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(ref, dtype=np.float64))
    if P.shape[1] != Q.shape[1]:
        raise ValueError(f"class-count mismatch: {P.shape[1]} vs {Q.shape[1]}")
    if pairing is None:
        if P.shape[0] != Q.shape[0]:
            raise ValueError("unmatched pairing: generated and reference sets differ in size")
        gi = ri = np.arange(P.shape[0])
    else:
        pairs = np.asarray(list(pairing), dtype=int).reshape(-1, 2)
        if len(pairs) == 0:
            raise ValueError("empty pairing")
        gi, ri = pairs[:, 0], pairs[:, 1]
        if gi.max() >= P.shape[0] or ri.max() >= Q.shape[0] or min(gi.min(), ri.min()) < 0:
            raise ValueError("pairing index out of range")
    gen_p = np.maximum(P[gi], PROB_FLOOR)
    ref_p = np.maximum(Q[ri], PROB_FLOOR)
    if direction == "ref||gen":
        kl = np.sum(ref_p * (np.log(ref_p) - np.log(gen_p)), axis=1)
    elif direction == "gen||ref":
        kl = np.sum(gen_p * (np.log(gen_p) - np.log(ref_p)), axis=1)
    else:
        raise ValueError(f"unknown KL direction {direction!r}")
    return float(np.mean(kl))


def evaluate(gen_latents, ref_latents, grammar: str | None = None, pairing=None,
             evaluator: Evaluator | None = None, direction: str = "ref||gen") -> dict:
    """FAD plus (when ``grammar`` has a frozen probe) KL, as a report dict."""
    ev = evaluator or load_evaluator()
    gf = toy_features(gen_latents, ev)
    rf = toy_features(ref_latents, ev)
    report = {
        "n_generated": int(gf.shape[0]),
        "n_reference": int(rf.shape[0]),
        "fad": frechet_distance(gaussian_stats(gf), gaussian_stats(rf)),
        "kl": None,
        "kl_variant": f"per-pair KL({direction.replace('||', ' || ')}), floor {PROB_FLOOR:g}, slot softmax",
        "extractor_version": ev.extractor_version,
        "classifier_version": None,
    }
    if grammar is not None:
        report["kl"] = kl_score(label_distributions(gf, grammar, ev),
                                label_distributions(rf, grammar, ev), pairing, direction)
        report["classifier_version"] = ev.classifier_version(grammar)
    return report
