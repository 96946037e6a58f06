import numpy as np
import pytest

from pv2tea.model import LossScales, Toggles, batch_loss, predict

from conftest import perturbed_state, random_items
from gradcheck import COMPONENT_SCALES, group_errors


@pytest.mark.parametrize("component", list(COMPONENT_SCALES))
def test_gradients_all_schemes_on(component):
    st = perturbed_state(seed=2)
    rng = np.random.default_rng(2)
    items = random_items(rng, st.config, B=3)
    errs = group_errors(st, items, rng.random(3), COMPONENT_SCALES[component], max_coords=15)
    assert max(errs.values()) < 1e-4, errs


def test_gradients_backbone():
    st = perturbed_state(seed=3)
    rng = np.random.default_rng(3)
    items = random_items(rng, st.config, B=3)
    errs = group_errors(st, items, None, LossScales(), Toggles(False, False, False), max_coords=15)
    assert max(errs.values()) < 1e-4, errs


def test_disabled_schemes_contribute_zero():
    st = perturbed_state(seed=4)
    rng = np.random.default_rng(4)
    items = random_items(rng, st.config)
    full, _ = batch_loss(st, items, rng.random(4))
    no_s1, g = batch_loss(st, items, rng.random(4), Toggles(s1=False))
    assert no_s1.L_sc == 0.0
    assert no_s1.total == pytest.approx(no_s1.L_ct + no_s1.L_rmlm, abs=1e-12)
    assert np.all(g["vis.head"] == 0) and np.all(g["txt.head"] == 0)
    no_s2, g = batch_loss(st, items, None, Toggles(s2=False))
    assert no_s2.L_ct == 0.0
    assert all(np.all(g[k] == 0) for k in ("mask.w", "mask.b", "cat.w", "cat.b"))
    assert full.total == pytest.approx(full.L_sc + full.L_ct + full.L_rmlm, abs=1e-12)


def test_s3_off_ignores_weights():
    st = perturbed_state(seed=5)
    items = random_items(np.random.default_rng(5), st.config)
    off = Toggles(s3=False)
    a, _ = batch_loss(st, items, np.array([0.1, 0.2, 0.0, 0.9]), off, with_grad=False)
    b, _ = batch_loss(st, items, None, Toggles(), with_grad=False)
    assert a.L_rmlm == b.L_rmlm
    half, _ = batch_loss(st, items, np.full(4, 0.5), Toggles(), with_grad=False)
    assert half.L_rmlm == pytest.approx(0.5 * b.L_rmlm, rel=1e-12)


def test_predict_outputs():
    st = perturbed_state(seed=6)
    it = random_items(np.random.default_rng(6), st.config, B=1)[0]
    p = predict(st, it.patches, it.tokens, it.prompt)
    assert p.gates.shape == (st.config.P,)
    assert np.all((p.gates > 0) & (p.gates < 1))
    assert abs(np.linalg.norm(p.visual_feature) - 1) < 1e-12
    assert predict(st, it.patches, it.tokens, it.prompt, use_pruning=False).gates is None
    assert all(0 <= v < st.config.n_values for v in p.values)
