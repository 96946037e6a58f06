import math

import numpy as np
import pytest

from pv2tea.data import DatasetConfig, GoldSource, build_vocabulary, generate_dataset
from pv2tea.encoders import ModelState, save_checkpoint
from pv2tea.model import LossScales, Toggles, predict
from pv2tea.training import (AdamW, TrainConfig, cosine_lr, make_items, model_config_for, total_loss, train)

from conftest import items_from


def run(small_dataset, **kw):
    cfg, vocab, train_samples, _ = small_dataset
    config = TrainConfig(**{"epochs": 3, "batch_size": 8, "queue_size": 16, "d_h": 8, "K": 5, **kw})
    return train(train_samples, vocab, config, n_categories=cfg.n_categories, n_values=cfg.n_values,
                 value_type=cfg.value_type, T_max=cfg.T_max)


def test_total_is_sum_of_components():
    from conftest import perturbed_state, random_items
    st = perturbed_state(seed=9)
    items = random_items(np.random.default_rng(9), st.config)
    total, comps, _ = total_loss(st, items, np.ones(4), Toggles(), with_grad=False)
    assert total == pytest.approx(comps.L_sc + comps.L_ct + comps.L_rmlm, abs=1e-12)
    doubled, comps2, _ = total_loss(st, items, np.ones(4), Toggles(), scales=LossScales(2.0, 2.0, 2.0),
                                    with_grad=False)
    assert doubled == pytest.approx(2 * total, rel=1e-12)


def test_decomposition_at_every_step(small_dataset):
    res = run(small_dataset)
    for row in res.metrics.steps:
        assert row["total"] == pytest.approx(row["L_sc"] + row["L_ct"] + row["L_rmlm"], rel=1e-12, abs=1e-12)


def test_zero_epochs_returns_initial_state(small_dataset, tmp_path):
    res = run(small_dataset, epochs=0)
    assert res.metrics.steps == [] and res.weight_history == []
    save_checkpoint(res.state, tmp_path / "a.json")
    save_checkpoint(res.initial_state, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_training_is_deterministic(small_dataset, tmp_path):
    for name in ("a", "b"):
        save_checkpoint(run(small_dataset, epochs=2, E=1).state, tmp_path / f"{name}.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_prediction_reliability_starts_at_E(small_dataset):
    res = run(small_dataset, epochs=4, E=2)
    assert [t.s_p is not None for t in res.weight_history] == [False, False, True, True]
    for t in res.weight_history:
        assert np.all((t.s >= 0) & (t.s <= 1))
        if t.s_p is None:
            np.testing.assert_array_equal(t.s, t.s_v)
        else:
            np.testing.assert_array_equal(t.s, (t.s_v + t.s_p) / 2)


def test_no_s3_means_no_weight_history(small_dataset):
    assert run(small_dataset, s3=False).weight_history == []


@pytest.mark.parametrize("M", [16, 64])
def test_queue_fill_count(small_dataset, M):
    _, _, train_samples, _ = small_dataset
    assert len(train_samples) % 8 == 0
    res = run(small_dataset, epochs=1, E=1, queue_size=M)
    k = len(res.metrics.steps)
    assert len(res.state.image_queue) == len(res.state.text_queue) == min(k * 8, M)


def test_momentum_tracks_online(small_dataset):
    res = run(small_dataset, epochs=1, E=1)
    init = res.initial_state
    for key, theta_m in res.state.momentum.items():
        assert not np.array_equal(theta_m, init.momentum[key])


def test_backbone_leaves_queues_and_momentum_alone(small_dataset):
    res = run(small_dataset, epochs=1, E=1, s1=False, s2=False, s3=False)
    assert len(res.state.image_queue) == 0
    for key, theta_m in res.state.momentum.items():
        np.testing.assert_array_equal(theta_m, res.initial_state.momentum[key])


def test_small_gradient_step_decreases_loss(small_dataset):
    cfg, vocab, train_samples, _ = small_dataset
    mc = model_config_for((cfg.P, cfg.d_img, cfg.T_max), len(vocab), cfg.n_categories, cfg.n_values,
                          cfg.value_type, 8)
    st = ModelState.initialize(mc, queue_size=16, seed=0)
    items = items_from(train_samples[:4], vocab)
    before, _, grads = total_loss(st, items, np.ones(4))
    for k in st.params:
        st.params[k] -= 1e-6 * grads[k]
    after, _, _ = total_loss(st, items, np.ones(4), with_grad=False)
    assert after < before


def test_teacher_forced_loss_decreases(small_dataset):
    cfg, vocab, train_samples, _ = small_dataset
    mc = model_config_for((cfg.P, cfg.d_img, cfg.T_max), len(vocab), cfg.n_categories, cfg.n_values,
                          cfg.value_type, 8)
    st = ModelState.initialize(mc, queue_size=16, seed=0)
    items = items_from(train_samples[:10], vocab)
    only_gen = LossScales(0.0, 0.0, 1.0)
    first = total_loss(st, items, None, Toggles(False, False, False), scales=only_gen, with_grad=False)[0]
    opt = AdamW(st.params)
    for _ in range(50):
        _, _, grads = total_loss(st, items, None, Toggles(False, False, False), scales=only_gen)
        opt.step(st.params, grads, 1e-2)
    last = total_loss(st, items, None, Toggles(False, False, False), scales=only_gen, with_grad=False)[0]
    assert last < first


def test_decoding_uses_the_image():
    cfg = DatasetConfig(n_samples=120, n_categories=2, n_values=4, P=8, d_img=6, T_max=8, seed=0,
                        label_noise_rate=0.0, frac_image_source=1.0, test_fraction=0.2,
                        jitter=0.3, background_distractor_rate=0.0)
    vocab = build_vocabulary(cfg)
    train_samples, test = generate_dataset(cfg)
    res = train(train_samples[:20], vocab, TrainConfig(epochs=15, batch_size=4, queue_size=8, d_h=8, K=3),
                n_categories=2, n_values=4, value_type=cfg.value_type, T_max=cfg.T_max)
    changed = 0
    for s, it in zip(test, make_items(test, vocab)):
        assert s.gold_source is GoldSource.IMAGE
        a = predict(res.state, it.patches, it.tokens, it.prompt).values
        b = predict(res.state, np.zeros_like(it.patches), it.tokens, it.prompt).values
        changed += a != b
    assert changed >= 1


def test_cosine_schedule():
    assert cosine_lr(0.1, 0, 10) == 0.1
    assert cosine_lr(0.1, 5, 10) == pytest.approx(0.05)
    assert cosine_lr(0.1, 10, 10) == pytest.approx(0.0, abs=1e-15)


def test_adamw_first_step_is_sign_sized():
    params = {"w": np.array([1.0, -2.0])}
    AdamW(params, weight_decay=0.0).step(params, {"w": np.array([3.0, -0.5])}, 0.1)
    np.testing.assert_allclose(params["w"], [0.9, -1.9], atol=1e-6)
    params = {"w": np.array([1.0])}
    AdamW(params, weight_decay=0.5).step(params, {"w": np.array([0.0])}, 0.1)
    assert params["w"][0] == pytest.approx(0.95)


@pytest.mark.parametrize("kw", [{"epochs": -1}, {"batch_size": 1}, {"alpha": 2.0}, {"tau": 0.0}, {"E": 9}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**{"epochs": 3, **kw}).validate()


def test_k_must_be_below_n(small_dataset):
    cfg, vocab, train_samples, _ = small_dataset
    with pytest.raises(ValueError):
        train(train_samples[:5], vocab, TrainConfig(epochs=1, E=1, K=5, queue_size=8))
    assert math.isfinite(run(small_dataset, epochs=1, E=1).metrics.steps[-1]["total"])
