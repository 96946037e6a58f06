"""Forward/backward of the full encoder-fusion-decoder pipeline on a batch."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alignment import align
from .encoders import ModelState, encode_image, encode_image_backward, encode_text, encode_text_backward
from .fusion import (decode, decoder_backward, decoder_forward, embed_prompt, embed_prompt_backward, fuse,
                     fuse_backward, generation_loss, generation_loss_grad, label_sequence, teacher_inputs)
from .ops import l2_normalize
from .pruning import category_logits, category_logits_backward, ct_loss, prune, prune_backward


@dataclass(frozen=True)
class Toggles:
    s1: bool = True  # label-smoothed momentum contrast
    s2: bool = True  # category-supervised attention pruning
    s3: bool = True  # neighborhood-regularized sample weights


@dataclass(frozen=True)
class LossScales:
    sc: float = 1.0
    ct: float = 1.0
    rmlm: float = 1.0


@dataclass
class BatchItem:
    patches: np.ndarray
    tokens: list
    category_id: int
    prompt: tuple
    label: frozenset


@dataclass
class LossComponents:
    L_sc: float = 0.0
    L_ct: float = 0.0
    L_rmlm: float = 0.0
    total: float = 0.0
    extras: dict = field(default_factory=dict)


def _accumulate(into, grads):
    for k, g in grads.items():
        into[k] += g


def batch_loss(state: ModelState, items, weights=None, toggles: Toggles = Toggles(),
               alpha: float = 0.4, tau: float = 0.07, scales: LossScales = LossScales(),
               with_grad: bool = True):
    """Composite loss of a batch and (optionally) its gradient w.r.t. online params.

    Disabled schemes contribute exactly zero and no gradient. Without S3 every
    sample weight is 1.
    """
    B = len(items)
    if B == 0:
        raise ValueError("empty batch")
    params, cfg = state.params, state.config
    weights = np.ones(B) if (weights is None or not toggles.s3) else np.asarray(weights, dtype=np.float64)

    fwd = []
    for it, s_n in zip(items, weights):
        enc_v = encode_image(params, it.patches)
        enc_t = encode_text(params, it.tokens)
        cat = None
        vis_seq = enc_v.sequence
        if toggles.s2:
            cat = category_logits(params, enc_v.sequence[1:])
            vis_seq = prune(enc_v.sequence, cat.mask)
        keys = np.vstack([vis_seq, enc_t.sequence])
        prompt_emb = embed_prompt(params, it.prompt)
        grounded = fuse(params, prompt_emb, keys)
        targets = label_sequence(it.label, cfg)
        dec = decoder_forward(params, grounded.sequence, teacher_inputs(targets, cfg))
        gen = generation_loss(dec.probs, targets, float(s_n))
        fwd.append((enc_v, enc_t, cat, grounded, dec, targets, gen))

    comps = LossComponents()
    comps.L_rmlm = float(np.mean([f[-1] for f in fwd]))
    d_cat_logits = None
    if toggles.s2:
        comps.L_ct, d_cat_logits = ct_loss(np.stack([f[2].logits for f in fwd]), [it.category_id for it in items])
    alignment = None
    if toggles.s1:
        z_v = np.stack([f[0].cls_normalized for f in fwd])
        z_t = np.stack([f[1].cls_normalized for f in fwd])
        zm_v = np.stack([encode_image(state.momentum, it.patches).cls_normalized for it in items])
        zm_t = np.stack([encode_text(state.momentum, it.tokens).cls_normalized for it in items])
        alignment = align(z_v, z_t, zm_v, zm_t, state.image_queue.contents(), state.text_queue.contents(),
                          alpha=alpha, tau=tau)
        comps.L_sc = alignment.loss
        comps.extras.update(momentum_image=zm_v, momentum_text=zm_t, alignment=alignment)
    comps.total = scales.sc * comps.L_sc + scales.ct * comps.L_ct + scales.rmlm * comps.L_rmlm
    if not with_grad:
        return comps, None

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    P1 = cfg.P + 1
    for n, (it, f) in enumerate(zip(items, fwd)):
        enc_v, enc_t, cat, grounded, dec, targets, _ = f
        d_logits = scales.rmlm * generation_loss_grad(dec.probs, targets, float(weights[n])) / B
        g_dec, d_grounded = decoder_backward(params, dec, d_logits)
        _accumulate(grads, g_dec)
        g_fuse, d_prompt, d_keys = fuse_backward(grounded, d_grounded)
        _accumulate(grads, g_fuse)
        _accumulate(grads, embed_prompt_backward(params, it.prompt, d_prompt))
        d_vis, d_txt = d_keys[:P1], d_keys[P1:]
        if toggles.s2:
            d_vis, d_mask = prune_backward(enc_v.sequence, cat.mask, d_vis)
            g_cat, d_patch = category_logits_backward(params, cat, scales.ct * d_cat_logits[n], d_mask)
            _accumulate(grads, g_cat)
            d_vis = d_vis.copy()
            d_vis[1:] += d_patch
        d_zv = d_zt = None
        if alignment is not None:
            d_zv = scales.sc * alignment.grad_image[n]
            d_zt = scales.sc * alignment.grad_text[n]
        _accumulate(grads, encode_image_backward(params, enc_v, d_vis, d_zv))
        _accumulate(grads, encode_text_backward(params, enc_t, d_txt, d_zt))
    return comps, grads


@dataclass
class Prediction:
    values: frozenset
    gates: np.ndarray | None
    visual_feature: np.ndarray


def predict(state: ModelState, patches, tokens, prompt, use_pruning: bool = True) -> Prediction:
    params = state.params
    enc_v = encode_image(params, patches)
    enc_t = encode_text(params, tokens)
    gates = None
    vis_seq = enc_v.sequence
    if use_pruning:
        cat = category_logits(params, enc_v.sequence[1:])
        vis_seq = prune(enc_v.sequence, cat.mask)
        gates = cat.mask.gates
    grounded = fuse(params, embed_prompt(params, prompt), np.vstack([vis_seq, enc_t.sequence]))
    gen = decode(params, grounded.sequence, state.config)
    feature, _ = l2_normalize(enc_v.cls)
    return Prediction(gen.values, gates, feature)


def visual_features(state: ModelState, patch_grids) -> np.ndarray:
    """Unit-normalized visual CLS features, one row per image."""
    rows = [encode_image(state.params, p).cls for p in patch_grids]
    feats, _ = l2_normalize(np.stack(rows))
    return feats
