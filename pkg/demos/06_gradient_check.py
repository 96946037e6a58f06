"""Analytic gradients of the composite loss against central differences."""
# %%
import numpy as np

from pv2tea.encoders import PARAM_GROUPS, ModelConfig, ModelState
from pv2tea.model import BatchItem, batch_loss

rng = np.random.default_rng(0)
cfg = ModelConfig(vocab_size=30, P=4, d_img=3, T_max=5, n_categories=3, n_values=4, d_h=8)
state = ModelState.initialize(cfg, queue_size=8, seed=0)
for k in state.params:  # move off the zero-initialized heads
    state.params[k] += 0.3 * rng.standard_normal(state.params[k].shape)
items = [BatchItem(rng.standard_normal((4, 3)), [1, 5, 7], c, tuple(range(9)), frozenset({c}))
         for c in (0, 1, 2, 1)]
weights = np.array([1.0, 0.5, 0.8, 0.2])

# %%
_, grads = batch_loss(state, items, weights)
h = 1e-5
for group, keys in PARAM_GROUPS.items():
    num, ana = [], []
    for k in keys:
        arr = state.params[k]
        for idx in list(np.ndindex(arr.shape))[:10]:
            old = arr[idx]
            arr[idx] = old + h
            up = batch_loss(state, items, weights, with_grad=False)[0].total
            arr[idx] = old - h
            down = batch_loss(state, items, weights, with_grad=False)[0].total
            arr[idx] = old
            num.append((up - down) / (2 * h))
            ana.append(grads[k][idx])
    num, ana = np.array(num), np.array(ana)
    print(f"{group:8s} relative error {np.linalg.norm(num - ana) / np.linalg.norm(num):.2e}")
