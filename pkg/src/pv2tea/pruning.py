"""Category-supervised patch scoring and sigmoid gating of visual features.

One linear head scores every patch. The scores play two roles: softmax over
patches gives the attention-pooling weights of the category classifier, and
sigmoid of the same scores gates patch features before fusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import safe_log, sigmoid, softmax, softmax_backward


@dataclass
class AttentionMask:
    logits: np.ndarray

    @property
    def gates(self) -> np.ndarray:
        return sigmoid(self.logits)


@dataclass
class CategoryOutput:
    logits: np.ndarray  # (C,)
    mask: AttentionMask
    pool_weights: np.ndarray  # (P,)
    pooled: np.ndarray
    _patches: np.ndarray


def category_logits(params, patch_embeddings) -> CategoryOutput:
    """Attention-pool patch embeddings and classify the category."""
    if params["cat.w"].shape[1] < 2:
        raise ValueError("category classification needs at least 2 categories")
    E = np.asarray(patch_embeddings, dtype=np.float64)
    scores = E @ params["mask.w"] + params["mask.b"][0]
    weights = softmax(scores)
    pooled = weights @ E
    logits = pooled @ params["cat.w"] + params["cat.b"]
    return CategoryOutput(logits, AttentionMask(scores), weights, pooled, E)


def category_logits_backward(params, out: CategoryOutput, d_logits, d_mask_logits=None):
    """Backprop through the classifier and the shared scoring head.

    ``d_mask_logits`` carries extra gradient on the scores from pruning.
    Returns (grads, d_patch_embeddings).
    """
    E = out._patches
    grads = {"cat.w": np.outer(out.pooled, d_logits), "cat.b": np.asarray(d_logits, dtype=np.float64).copy()}
    d_pooled = params["cat.w"] @ d_logits
    d_weights = E @ d_pooled
    d_scores = softmax_backward(d_weights, out.pool_weights)
    if d_mask_logits is not None:
        d_scores = d_scores + d_mask_logits
    d_E = np.outer(out.pool_weights, d_pooled) + np.outer(d_scores, params["mask.w"])
    grads["mask.w"] = E.T @ d_scores
    grads["mask.b"] = np.array([d_scores.sum()])
    return grads, d_E


def ct_loss(logits, category_ids) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    category_ids = np.atleast_1d(np.asarray(category_ids))
    B, C = logits.shape
    if len(category_ids) != B:
        raise ValueError("one category id per logit row required")
    if np.any(category_ids < 0) or np.any(category_ids >= C):
        raise ValueError(f"category id outside [0, {C})")
    probs = softmax(logits)
    rows = np.arange(B)
    loss = float(-np.mean(safe_log(probs[rows, category_ids])))
    grad = probs.copy()
    grad[rows, category_ids] -= 1.0
    return loss, grad / B


def prune(visual_sequence, mask: AttentionMask) -> np.ndarray:
    """Scale each patch row by sigmoid(mask logit); row 0 (CLS) passes through."""
    seq = np.asarray(visual_sequence, dtype=np.float64)
    logits = np.asarray(mask.logits)
    if logits.shape != (seq.shape[0] - 1,):
        raise ValueError(f"mask length {logits.shape} does not match {seq.shape[0] - 1} patches")
    out = seq.copy()
    out[1:] *= sigmoid(logits)[:, None]
    return out


def prune_backward(visual_sequence, mask: AttentionMask, d_out):
    """Returns (d_visual_sequence, d_mask_logits)."""
    gates = sigmoid(np.asarray(mask.logits))
    d_seq = d_out.copy()
    d_seq[1:] *= gates[:, None]
    d_logits = np.sum(d_out[1:] * visual_sequence[1:], axis=1) * gates * (1.0 - gates)
    return d_seq, d_logits
