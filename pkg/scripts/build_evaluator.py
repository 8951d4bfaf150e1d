"""Regenerate src/ttm/data/evaluator.npz (toy feature extractor + frozen probes).

Run once; the output is committed so evaluation scores stay comparable.
"""

import numpy as np

from ttm.evaluation import Evaluator, toy_features
from ttm.synthdata import GRAMMARS, generate_dataset

OUT = "src/ttm/data/evaluator.npz"
LATENT_SHAPE = (4, 16, 16)
PROJ_DIM = 32


def fit_probe(feats, attrs, sizes, l2=1e-3, lr=0.5, iters=3000):
    mu, sd = feats.mean(0), feats.std(0) + 1e-6
    X = (feats - mu) / sd
    W = np.zeros((X.shape[1], sum(sizes)))
    b = np.zeros(sum(sizes))
    Y = np.zeros((X.shape[0], sum(sizes)))
    start = 0
    for s, n in enumerate(sizes):
        Y[np.arange(len(X)), start + attrs[:, s]] = 1
        start += n
    for _ in range(iters):
        logits = X @ W + b
        P = np.empty_like(logits)
        start = 0
        for n in sizes:
            z = np.exp(logits[:, start:start + n] - logits[:, start:start + n].max(1, keepdims=True))
            P[:, start:start + n] = z / z.sum(1, keepdims=True)
            start += n
        G = (P - Y) / len(X)
        W -= lr * (X.T @ G + l2 * W)
        b -= lr * G.sum(0)
    # fold the standardization into the weights
    W_raw = W / sd[:, None]
    b_raw = b - mu @ W_raw
    acc = []
    start = 0
    for s, n in enumerate(sizes):
        pred = (feats @ W_raw + b_raw)[:, start:start + n].argmax(1)
        acc.append(float((pred == attrs[:, s]).mean()))
        start += n
    return W_raw, b_raw, acc


def main():
    rng = np.random.default_rng(7)
    n_in = int(np.prod(LATENT_SHAPE))
    proj = rng.standard_normal((n_in, PROJ_DIM)) / np.sqrt(n_in)
    bias = 0.5 * rng.standard_normal(PROJ_DIM)
    out = {"proj": proj, "bias": bias, "latent_shape": np.array(LATENT_SHAPE)}
    ev = Evaluator(proj, bias, LATENT_SHAPE, {})
    for name, grammar in GRAMMARS.items():
        ds = generate_dataset(seed=0, n_train=512, n_val=64, n_test=64, grammar=grammar,
                              latent_shape=LATENT_SHAPE)
        feats = toy_features(np.stack([e.latent for e in ds.examples]), ev)
        attrs = np.array([e.attributes for e in ds.examples])
        sizes = [len(v) for _, v in grammar.slots]
        W, b, acc = fit_probe(feats, attrs, sizes)
        print(name, "probe accuracy per slot", acc)
        out[f"probe_W.{name}"] = W
        out[f"probe_b.{name}"] = b
        out[f"probe_sizes.{name}"] = np.array(sizes)
    np.savez(OUT, **out)


if __name__ == "__main__":
    main()
