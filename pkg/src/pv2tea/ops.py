"""Small differentiable building blocks with explicit backward passes."""

import numpy as np

LOG_EPS = 1e-12


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(grad_out, probs, axis=-1):
    return probs * (grad_out - np.sum(grad_out * probs, axis=axis, keepdims=True))


def sigmoid(x):
    # split by sign so large |x| never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def safe_log(p):
    return np.log(np.maximum(p, LOG_EPS))


def l2_normalize(x):
    """Row-wise unit normalization. Returns (normalized, norms)."""
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / norm, norm


def l2_normalize_backward(grad_out, normalized, norm):
    dot = np.sum(grad_out * normalized, axis=-1, keepdims=True)
    return (grad_out - normalized * dot) / norm


def attention(queries, keys, wq, wk, wv, mask=None):
    """Single-head attention, residual on the query side.

    ``out = softmax((queries @ wq) (keys @ wk)^T / sqrt(d)) (keys @ wv) + queries``.
    ``mask`` is a boolean array (Lq, Lk); False entries are excluded.
    """
    if keys.shape[0] == 0:
        raise ValueError("attention needs at least one key position")
    q = queries @ wq
    k = keys @ wk
    v = keys @ wv
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q @ k.T) * scale
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    probs = softmax(scores)
    out = probs @ v + queries
    cache = (queries, keys, wq, wk, wv, q, k, v, probs, scale)
    return out, probs, cache


def attention_backward(grad_out, cache):
    """Returns (d_queries, d_keys, d_wq, d_wk, d_wv)."""
    queries, keys, wq, wk, wv, q, k, v, probs, scale = cache
    d_probs = grad_out @ v.T
    d_v = probs.T @ grad_out
    d_scores = softmax_backward(d_probs, probs) * scale
    d_q = d_scores @ k
    d_k = d_scores.T @ q
    d_queries = grad_out + d_q @ wq.T
    d_keys = d_k @ wk.T + d_v @ wv.T
    return d_queries, d_keys, queries.T @ d_q, keys.T @ d_k, keys.T @ d_v
