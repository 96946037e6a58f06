"""Soft contrastive targets built from momentum features and a queue."""
# %%
import numpy as np

from pv2tea.alignment import align, pseudo_similarity, smooth_targets
from pv2tea.encoders import MomentumQueue

rng = np.random.default_rng(0)


def unit(n, d=8):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# %% Pseudo-similarity and smoothing on a toy pair of candidates
q = pseudo_similarity(np.array([1.0, 0.0]), np.eye(2), tau=1.0)
print("softmax over dots [1, 0]:", q.round(4))
print("smoothed one-hot, alpha=0.4:", smooth_targets(np.array([1.0, 0, 0, 0]), np.full(4, 0.25), 0.4))

# %% A batch of 4 pairs against 6 queued features per modality
image_q, text_q = MomentumQueue(16, 8), MomentumQueue(16, 8)
image_q.enqueue(unit(6))
text_q.enqueue(unit(6))
img, txt = unit(4), unit(4)
img_m = img + 0.05 * rng.standard_normal(img.shape)
img_m /= np.linalg.norm(img_m, axis=1, keepdims=True)
txt_m = txt + 0.05 * rng.standard_normal(txt.shape)
txt_m /= np.linalg.norm(txt_m, axis=1, keepdims=True)
for alpha in (0.0, 0.4, 1.0):
    out = align(img, txt, img_m, txt_m, image_q.contents(), text_q.contents(), alpha=alpha)
    print(f"alpha={alpha}: L_sc={out.loss:.4f}, target row 0 = {out.targets.p_tilde_i2t[0].round(3)}")
