import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pv2tea.data import (DatasetConfig, DatasetFormatError, GoldSource, Sample, ValueType, build_vocabulary,
                         generate_dataset, generate_dataset_with_truth, load_dataset, load_vocabulary,
                         save_dataset, save_vocabulary)


def test_zero_noise_means_no_flags():
    train, _ = generate_dataset(DatasetConfig(n_samples=100, label_noise_rate=0.0, test_fraction=0.0))
    assert len(train) == 100
    assert not any(s.noise_flag for s in train)


def test_image_source_count_is_exact():
    cfg = DatasetConfig(n_samples=1000, frac_image_source=0.3, seed=11)
    _, test, truth = generate_dataset_with_truth(cfg)
    expected = round(0.3 * len(test))
    scanned = sum(s.gold_source is GoldSource.IMAGE for s in test)
    assert truth.n_image_source_test == expected
    assert scanned == expected


def test_determinism_byte_identical(tmp_path):
    cfg = DatasetConfig(n_samples=80, seed=5)
    paths = []
    for run in range(2):
        train, test = generate_dataset(cfg)
        p = tmp_path / f"run{run}.jsonl"
        save_dataset(train + test, p, cfg.header())
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_different_seed_differs():
    a, _ = generate_dataset(DatasetConfig(n_samples=20, seed=1))
    b, _ = generate_dataset(DatasetConfig(n_samples=20, seed=2))
    assert a != b


def test_source_and_noise_bookkeeping():
    cfg = DatasetConfig(n_samples=400, seed=4)
    vocab = build_vocabulary(cfg)
    tok2val = vocab.token_to_value()
    train, test, truth = generate_dataset_with_truth(cfg)
    for s in test:
        mentioned = {tok2val[t] for t in s.tokens if t in tok2val}
        if s.gold_source is GoldSource.TEXT:
            assert s.gold_label <= mentioned
        else:
            assert not (s.gold_label & mentioned)
    for s in train:
        assert s.noise_flag == (s.weak_label != truth.true_values[s.id])
    assert sum(s.noise_flag for s in train) == truth.n_noisy_train == round(0.2 * len(train))


def test_multiple_value_type_labels():
    cfg = DatasetConfig(n_samples=100, value_type=ValueType.MULTIPLE, seed=2)
    train, test = generate_dataset(cfg)
    sizes = {len(s.gold_label) for s in test}
    assert sizes <= {1, 2, 3} and max(sizes) > 1


@pytest.mark.parametrize("field,value", [
    ("label_noise_rate", 1.5), ("frac_image_source", -0.1), ("background_distractor_rate", 2.0),
])
def test_invalid_rate_names_field(field, value):
    with pytest.raises(ValueError, match=field):
        DatasetConfig(**{field: value}).validate()


def test_empty_sample_list_round_trip(tmp_path):
    p = tmp_path / "empty.jsonl"
    save_dataset([], p, DatasetConfig().header())
    assert len(p.read_text().splitlines()) == 1
    assert load_dataset(p) == []


def test_single_sample_round_trip(tmp_path, small_dataset):
    cfg, _, train, test = small_dataset
    p = tmp_path / "one.jsonl"
    for s in (train[0], test[0]):
        save_dataset([s], p, cfg.header())
        assert load_dataset(p) == [s]


def test_full_round_trip_is_identity(tmp_path, small_dataset):
    cfg, _, train, test = small_dataset
    p = tmp_path / "all.jsonl"
    save_dataset(train + test, p, cfg.header())
    assert load_dataset(p) == train + test


def test_truncated_line_three_is_reported(tmp_path, small_dataset):
    cfg, _, train, _ = small_dataset
    p = tmp_path / "trunc.jsonl"
    save_dataset(train[:4], p, cfg.header())
    lines = p.read_text().splitlines()
    lines[2] = lines[2][: len(lines[2]) // 2]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="line 3"):
        load_dataset(p)


def test_grid_mismatch_is_reported(tmp_path, small_dataset):
    cfg, _, train, _ = small_dataset
    p = tmp_path / "bad.jsonl"
    header = dict(cfg.header(), P=cfg.P + 1)
    save_dataset(train[:2], p, header)
    with pytest.raises(DatasetFormatError, match="line 2"):
        load_dataset(p)


def test_empty_file_is_an_error(tmp_path):
    p = tmp_path / "nothing.jsonl"
    p.write_text("")
    with pytest.raises(DatasetFormatError):
        load_dataset(p)


def test_sample_validation():
    with pytest.raises(ValueError):
        Sample("x", np.zeros((4, 2)), [1], 0, frozenset())
    with pytest.raises(ValueError):
        Sample("x", np.zeros((4, 2)), [1], 0, frozenset([1]), gold_label=frozenset([1]))


def test_vocabulary_round_trip(tmp_path):
    vocab = build_vocabulary(DatasetConfig())
    save_vocabulary(vocab, tmp_path / "v.json")
    again = load_vocabulary(tmp_path / "v.json")
    assert again.tokens == vocab.tokens and again.synonyms == vocab.synonyms
    assert json.loads((tmp_path / "v.json").read_text())["values"][0] == "red"


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), noise=st.floats(0, 1), image=st.floats(0, 1), n=st.integers(5, 60))
def test_generator_properties(seed, noise, image, n):
    cfg = DatasetConfig(n_samples=n, seed=seed, label_noise_rate=noise, frac_image_source=image,
                        P=6, d_img=4, T_max=6)
    train, test, truth = generate_dataset_with_truth(cfg)
    assert len(train) + len(test) == n
    assert sum(s.noise_flag for s in train) == round(noise * len(train))
    assert sum(s.gold_source is GoldSource.IMAGE for s in test) == round(image * len(test))
    for s in train + test:
        assert s.patches.shape == (6, 4)
        assert 1 <= len(s.tokens) <= 6
        assert s.noise_flag == (s.weak_label != truth.true_values[s.id])
    again, again_test = generate_dataset(cfg)
    assert again == train and again_test == test
