"""Synthetic weakly labeled product data.

Each sample is a grid of patch vectors plus a short bag of word tokens. Run with
``python demos/01_synthetic_data.py``.
"""
# %%
from collections import Counter

import numpy as np

from pv2tea.data import DatasetConfig, build_vocabulary, generate_dataset_with_truth

config = DatasetConfig(n_samples=500, seed=0)
train, test, truth = generate_dataset_with_truth(config)
vocab = build_vocabulary(config)
print(f"{len(train)} train / {len(test)} test samples, vocabulary of {len(vocab)} tokens")

# %% One training sample, decoded back to words
s = train[0]
print("tokens :", " ".join(vocab.tokens[t] for t in s.tokens))
print("label  :", [vocab.values[v] for v in s.weak_label], "| true:", [vocab.values[v] for v in truth.true_values[s.id]])
print("patches:", s.patches.shape, "foreground at", truth.foreground[s.id])

# %% Label noise lands mostly on samples whose text does not mention the value
print("noisy training samples:", sum(x.noise_flag for x in train))
print("test gold sources:", Counter(x.gold_source.value for x in test))

# %% Foreground patches carry the value signature, so they sit farther from the origin
fg = np.mean([np.linalg.norm(x.patches[list(truth.foreground[x.id])], axis=1).mean() for x in train])
all_rows = np.mean([np.linalg.norm(x.patches, axis=1).mean() for x in train])
print(f"mean patch norm: foreground {fg:.2f}, all patches {all_rows:.2f}")
