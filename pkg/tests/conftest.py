import numpy as np
import pytest

from pv2tea.data import DatasetConfig, build_vocabulary, generate_dataset
from pv2tea.encoders import ModelConfig, ModelState
from pv2tea.fusion import build_prompt
from pv2tea.model import BatchItem


@pytest.fixture
def small_config():
    return DatasetConfig(n_samples=60, n_categories=3, n_values=5, P=8, d_img=6, T_max=8, seed=3)


@pytest.fixture
def small_dataset(small_config):
    train, test = generate_dataset(small_config)
    return small_config, build_vocabulary(small_config), train, test


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def perturbed_state(seed=1, d_h=8, vocab_size=30, P=4, d_img=3, T_max=5, C=3, V=4, max_values=3, queue=8):
    """A small model whose params are moved off their (partly zero) init."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(vocab_size=vocab_size, P=P, d_img=d_img, T_max=T_max, n_categories=C, n_values=V,
                      d_h=d_h, max_values=max_values)
    st = ModelState.initialize(cfg, queue_size=queue, seed=seed)
    for k in st.params:
        st.params[k] = st.params[k] + 0.3 * rng.standard_normal(st.params[k].shape)
    for k in st.momentum:
        st.momentum[k] = st.params[k] + 0.1 * rng.standard_normal(st.params[k].shape)
    st.image_queue.enqueue(unit_rows(rng, 5, d_h))
    st.text_queue.enqueue(unit_rows(rng, 5, d_h))
    return st


def random_items(rng, cfg, B=4):
    items = []
    for _ in range(B):
        T = int(rng.integers(1, cfg.T_max + 1))
        k = int(rng.integers(1, min(cfg.max_values, cfg.n_values) + 1))
        items.append(BatchItem(
            rng.standard_normal((cfg.P, cfg.d_img)),
            [int(t) for t in rng.integers(cfg.vocab_size, size=T)],
            int(rng.integers(cfg.n_categories)),
            tuple(int(t) for t in rng.integers(cfg.vocab_size, size=9)),
            frozenset(int(v) for v in rng.choice(cfg.n_values, size=k, replace=False)),
        ))
    return items


def items_from(samples, vocab):
    return [BatchItem(s.patches, s.tokens, s.category_id, build_prompt(0, s.category_id, vocab).tokens,
                      s.weak_label) for s in samples]


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
