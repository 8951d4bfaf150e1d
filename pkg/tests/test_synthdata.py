import itertools

import numpy as np
import pytest

from ttm.synthdata import (
    GRAMMARS,
    NOISE_AMPLITUDE,
    caption_to_attributes,
    clean_latent,
    directory_hash,
    generate_dataset,
    get_grammar,
    held_out_tuples,
    load_dataset,
    save_dataset,
)

DEFAULT = GRAMMARS["default"]


@pytest.mark.parametrize("name", sorted(GRAMMARS))
def test_every_tuple_round_trips(name):
    g = GRAMMARS[name]
    tuples = list(itertools.product(*(range(len(v)) for _, v in g.slots)))
    captions = [g.caption(t) for t in tuples]
    assert len(set(captions)) == len(tuples)
    for t, c in zip(tuples, captions):
        assert caption_to_attributes(c, g) == t


def test_parse_rejects_unknown_tokens():
    with pytest.raises(ValueError):
        caption_to_attributes("a calm banjo track with a slow tempo", DEFAULT)
    with pytest.raises(ValueError):
        caption_to_attributes("calm piano", DEFAULT)


def test_parse_normalizes_whitespace_and_case():
    assert caption_to_attributes("A  Calm piano track with a very fast tempo", DEFAULT) == (0, 0, 3)


def test_unknown_grammar():
    with pytest.raises(ValueError):
        get_grammar("jazz")


def test_held_out_is_balanced():
    held = held_out_tuples(DEFAULT)
    assert len(held) == len(set(held)) == 8
    for s in range(3):
        assert np.bincount([t[s] for t in held], minlength=4).tolist() == [2, 2, 2, 2]


def test_same_seed_same_bytes(tmp_path):
    save_dataset(generate_dataset(5, 16, 4, 4), tmp_path / "a")
    save_dataset(generate_dataset(5, 16, 4, 4), tmp_path / "b")
    assert directory_hash(tmp_path / "a") == directory_hash(tmp_path / "b")
    save_dataset(generate_dataset(6, 16, 4, 4), tmp_path / "c")
    assert directory_hash(tmp_path / "a") != directory_hash(tmp_path / "c")


def test_save_load_round_trip(tmp_path):
    ds = generate_dataset(2, 8, 2, 2)
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert [e.caption for e in back.examples] == [e.caption for e in ds.examples]
    for a, b in zip(ds.examples, back.examples):
        assert a.latent.tobytes() == b.latent.tobytes()
        assert a.attributes == b.attributes and a.split == b.split


def test_clean_parts_identical_per_tuple():
    ds = generate_dataset(0)
    by_tuple = {}
    for e in ds.examples:
        by_tuple.setdefault(e.attributes, []).append(e)
    t, group = next((k, v) for k, v in by_tuple.items() if len(v) >= 2)
    clean = clean_latent(t, DEFAULT)
    for e in group:
        resid = e.latent - clean
        assert np.std(resid) == pytest.approx(NOISE_AMPLITUDE, rel=0.15)
    c1 = group[0].latent - (group[0].latent - clean)
    c2 = group[1].latent - (group[1].latent - clean)
    assert np.corrcoef(c1.ravel(), c2.ravel())[0, 1] == pytest.approx(1.0)
    assert not np.array_equal(group[0].latent, group[1].latent)


def test_clean_latent_unit_rms():
    for t in DEFAULT.all_tuples()[:10]:
        assert np.sqrt(np.mean(clean_latent(t, DEFAULT) ** 2)) == pytest.approx(1.0)


def test_split_sizes_and_disjoint_seeds():
    ds = generate_dataset(0)
    assert [len(ds.split(s)) for s in ("train", "val", "test")] == [512, 64, 64]
    seeds = {s: {e.example_seed for e in ds.split(s)} for s in ("train", "val", "test")}
    assert not (seeds["train"] & seeds["val"]) and not (seeds["train"] & seeds["test"])
    assert not (seeds["val"] & seeds["test"])


def test_held_out_tuples_absent_from_train():
    ds = generate_dataset(0)
    held = set(held_out_tuples(DEFAULT))
    assert not held & {e.attributes for e in ds.split("train")}
    assert not held & {e.attributes for e in ds.split("val")}


def test_attribute_balance_within_three_sigma():
    ds = generate_dataset(0, n_train=512)
    n = 512
    sd = np.sqrt(n * 0.25 * 0.75)
    attrs = np.array([e.attributes for e in ds.split("train")])
    for s in range(3):
        counts = np.bincount(attrs[:, s], minlength=4)
        assert np.all(np.abs(counts - n / 4) <= 3 * sd), counts
