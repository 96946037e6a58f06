"""Category supervision teaches the patch gate where the product is."""
# %%
import numpy as np

from pv2tea.data import DatasetConfig, build_vocabulary, generate_dataset_with_truth
from pv2tea.experiments import foreground_gate_stats, predict_split
from pv2tea.training import TrainConfig, train

config = DatasetConfig(n_samples=600, seed=1)
train_set, test, truth = generate_dataset_with_truth(config)
vocab = build_vocabulary(config)

# %% Train with pruning only (no contrast, no reweighting)
result = train(train_set, vocab, TrainConfig(epochs=6, s1=False, s3=False), n_categories=config.n_categories,
               n_values=config.n_values, T_max=config.T_max)
_, gates = predict_split(result.state, test, vocab, use_pruning=True)
fg, bg = foreground_gate_stats(gates, truth.foreground, [s.id for s in test], config.P)
print(f"mean gate: foreground {fg:.3f}, background {bg:.3f}")

# %% Gate vector of one test image, foreground positions marked
s = test[0]
marks = ["*" if p in truth.foreground[s.id] else " " for p in range(config.P)]
print(" ".join(f"{g:.2f}{m}" for g, m in zip(np.round(gates[0], 2), marks)))
