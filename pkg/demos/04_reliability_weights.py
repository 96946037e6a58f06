"""Neighborhood agreement flags noisy weak labels."""
# %%
import numpy as np

from pv2tea.data import DatasetConfig, build_vocabulary, generate_dataset
from pv2tea.neighborhood import knn_visual, prediction_reliability, reliability_table
from pv2tea.training import TrainConfig, train

# %% The pieces on a toy example
points = np.array([[0.0], [1.0], [3.0]])
print("nearest neighbor of the middle point:", set(knn_visual(points, 1, 1)))
print("Jaccard of {a,b,c} and {b,c,d}:", prediction_reliability({"a", "b", "c"}, {"b", "c", "d"}))

# %% Per-epoch weights during training; prediction agreement joins at epoch E
config = DatasetConfig(n_samples=1000, seed=2)
train_set, _ = generate_dataset(config)
vocab = build_vocabulary(config)
result = train(train_set, vocab, TrainConfig(epochs=5, E=2), n_categories=config.n_categories,
               n_values=config.n_values, T_max=config.T_max)
for row in result.metrics.epochs:
    print(f"epoch {row['epoch']}: clean {row['mean_s_clean']:.3f}  noisy {row['mean_s_noisy']:.3f}"
          f"  (prediction term {'on' if row['has_s_p'] else 'off'})")

# %% The same table computed from raw patch means, before any training
feats = np.stack([s.patches.mean(axis=0) for s in train_set])
feats /= np.linalg.norm(feats, axis=1, keepdims=True)
table = reliability_table(feats, [s.weak_label for s in train_set], K=10, epoch=0, E=2)
noisy = np.array([s.noise_flag for s in train_set])
print(f"untrained features: clean {table.s[~noisy].mean():.3f}, noisy {table.s[noisy].mean():.3f}")
