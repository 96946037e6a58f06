"""Label-smoothed image-text contrast over in-batch and queued candidates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import safe_log, softmax


def _similarity_softmax(cls, candidates, tau):
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if candidates.size == 0 or candidates.shape[0] == 0:
        raise ValueError("candidate set is empty")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return softmax(np.asarray(cls, dtype=np.float64) @ candidates.T / tau)


def pseudo_similarity(momentum_cls, candidates, tau: float) -> np.ndarray:
    """Softmax of momentum CLS features against candidates; rows sum to one."""
    return _similarity_softmax(momentum_cls, candidates, tau)


def matching_distribution(online_cls, candidates, tau: float) -> np.ndarray:
    """Predicted matching probabilities of online CLS features over candidates."""
    return _similarity_softmax(online_cls, candidates, tau)


def smooth_targets(p_onehot, q, alpha: float) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    p_onehot, q = np.asarray(p_onehot, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p_onehot.shape != q.shape:
        raise ValueError(f"target shapes differ: {p_onehot.shape} vs {q.shape}")
    return (1.0 - alpha) * p_onehot + alpha * q


def cross_entropy_rows(targets, probs) -> float:
    """Mean over rows of ``-sum_k targets[k] * log(probs[k])`` (log clamped)."""
    targets, probs = np.atleast_2d(targets), np.atleast_2d(probs)
    if targets.shape != probs.shape:
        raise ValueError(f"row shapes differ: {targets.shape} vs {probs.shape}")
    return float(-np.mean(np.sum(targets * safe_log(probs), axis=1)))


def contrastive_loss(p_tilde_i2t, d_i2t, p_tilde_t2i, d_t2i) -> tuple[float, float, float]:
    """Returns ``(L_sc, L_i2t, L_t2i)`` with ``L_sc`` the mean of both directions."""
    l_i2t = cross_entropy_rows(p_tilde_i2t, d_i2t)
    l_t2i = cross_entropy_rows(p_tilde_t2i, d_t2i)
    return (l_i2t + l_t2i) / 2.0, l_i2t, l_t2i


@dataclass
class AlignmentTargets:
    p_i2t: np.ndarray
    p_t2i: np.ndarray
    q_i2t: np.ndarray
    q_t2i: np.ndarray
    p_tilde_i2t: np.ndarray
    p_tilde_t2i: np.ndarray
    d_i2t: np.ndarray
    d_t2i: np.ndarray
    alpha: float
    tau: float


@dataclass
class AlignmentOutput:
    loss: float
    loss_i2t: float
    loss_t2i: float
    targets: AlignmentTargets
    grad_image: np.ndarray  # dL/d(online normalized image CLS), (B, d)
    grad_text: np.ndarray


def align(image_z, text_z, image_z_m, text_z_m, image_queue=None, text_queue=None,
          alpha: float = 0.4, tau: float = 0.07) -> AlignmentOutput:
    """Both contrast directions for a batch.

    Candidates for image->text are the batch's momentum text features followed
    by the text queue (oldest first); the positive for row n is column n.
    Targets come from momentum features only and carry no gradient.
    """
    B, d = image_z.shape
    if B == 0:
        raise ValueError("empty batch")
    image_queue = np.zeros((0, d)) if image_queue is None else image_queue
    text_queue = np.zeros((0, d)) if text_queue is None else text_queue
    text_cands = np.vstack([text_z_m, text_queue])
    image_cands = np.vstack([image_z_m, image_queue])

    p_i2t = np.eye(B, len(text_cands))
    p_t2i = np.eye(B, len(image_cands))
    q_i2t = pseudo_similarity(image_z_m, text_cands, tau)
    q_t2i = pseudo_similarity(text_z_m, image_cands, tau)
    pt_i2t = smooth_targets(p_i2t, q_i2t, alpha)
    pt_t2i = smooth_targets(p_t2i, q_t2i, alpha)
    d_i2t = matching_distribution(image_z, text_cands, tau)
    d_t2i = matching_distribution(text_z, image_cands, tau)
    loss, l_i2t, l_t2i = contrastive_loss(pt_i2t, d_i2t, pt_t2i, d_t2i)

    # d(-sum p log softmax)/dlogits = softmax - p when sum(p) = 1; halved by the average
    g_i2t = (d_i2t - pt_i2t) / (2.0 * B * tau)
    g_t2i = (d_t2i - pt_t2i) / (2.0 * B * tau)
    targets = AlignmentTargets(p_i2t, p_t2i, q_i2t, q_t2i, pt_i2t, pt_t2i, d_i2t, d_t2i, alpha, tau)
    return AlignmentOutput(loss, l_i2t, l_t2i, targets, g_i2t @ text_cands, g_t2i @ image_cands)
