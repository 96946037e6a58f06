"""Question prompt, cross-attention grounding and generative value decoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CLS_Q, Vocabulary
from .encoders import MAX_DECODE_STEPS, ModelConfig
from .ops import attention, attention_backward, safe_log, softmax


@dataclass(frozen=True)
class Prompt:
    tokens: tuple[int, ...]
    text: str


def build_prompt(attribute_id: int, category_id: int, vocab: Vocabulary) -> Prompt:
    if not 0 <= attribute_id < len(vocab.attributes):
        raise ValueError(f"unknown attribute id {attribute_id}")
    if not 0 <= category_id < len(vocab.categories):
        raise ValueError(f"unknown category id {category_id}")
    words = ["what", "is", "the", vocab.attributes[attribute_id], "of", "the",
             vocab.categories[category_id], "?"]
    tokens = (vocab.token_id(CLS_Q),) + tuple(vocab.token_id(w) for w in words)
    return Prompt(tokens, " ".join(words))


def embed_prompt(params, prompt_tokens) -> np.ndarray:
    tokens = np.asarray(prompt_tokens, dtype=np.int64)
    return params["txt.tok"][tokens] + params["prompt.pos"][: len(tokens)]


def embed_prompt_backward(params, prompt_tokens, d_emb) -> dict:
    tokens = np.asarray(prompt_tokens, dtype=np.int64)
    d_tok = np.zeros_like(params["txt.tok"])
    np.add.at(d_tok, tokens, d_emb)
    d_pos = np.zeros_like(params["prompt.pos"])
    d_pos[: len(tokens)] = d_emb
    return {"txt.tok": d_tok, "prompt.pos": d_pos}


@dataclass
class GroundedRepresentation:
    sequence: np.ndarray  # (Q, d_h), row 0 is q_cls
    attention: np.ndarray  # (Q, n_keys)
    _cache: tuple = field(default=(), repr=False)


def fuse(params, prompt_emb, keys) -> GroundedRepresentation:
    """Prompt positions attend over the concatenated visual + text positions."""
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise ValueError("fusion needs at least one key position")
    if keys.shape[1] != prompt_emb.shape[1]:
        raise ValueError(f"width mismatch: keys {keys.shape[1]} vs prompt {prompt_emb.shape[1]}")
    out, probs, cache = attention(prompt_emb, keys, params["fuse.q"], params["fuse.k"], params["fuse.v"])
    return GroundedRepresentation(out, probs, cache)


def fuse_backward(grounded: GroundedRepresentation, d_out):
    """Returns (grads, d_prompt_emb, d_keys)."""
    d_prompt, d_keys, dq, dk, dv = attention_backward(d_out, grounded._cache)
    return {"fuse.q": dq, "fuse.k": dk, "fuse.v": dv}, d_prompt, d_keys


@dataclass
class DecoderOutput:
    logits: np.ndarray
    probs: np.ndarray
    _cache: tuple = field(default=(), repr=False)


def decoder_forward(params, grounded_seq, input_symbols) -> DecoderOutput:
    """Causal self-attention, cross-attention to the grounded sequence, linear head."""
    inputs = np.asarray(input_symbols, dtype=np.int64)
    L = len(inputs)
    if L > MAX_DECODE_STEPS:
        raise ValueError(f"decoder supports at most {MAX_DECODE_STEPS} steps")
    h0 = params["dec.emb"][inputs] + params["dec.pos"][:L]
    causal = np.tril(np.ones((L, L), dtype=bool))
    h1, _, self_cache = attention(h0, h0, params["dec.sq"], params["dec.sk"], params["dec.sv"], causal)
    h2, _, cross_cache = attention(h1, grounded_seq, params["dec.cq"], params["dec.ck"], params["dec.cv"])
    logits = h2 @ params["dec.out.w"] + params["dec.out.b"]
    return DecoderOutput(logits, softmax(logits), (inputs, h2, self_cache, cross_cache))


def decoder_backward(params, out: DecoderOutput, d_logits):
    """Returns (grads, d_grounded_seq)."""
    inputs, h2, self_cache, cross_cache = out._cache
    grads = {"dec.out.w": h2.T @ d_logits, "dec.out.b": d_logits.sum(axis=0)}
    d_h2 = d_logits @ params["dec.out.w"].T
    d_h1, d_grounded, grads["dec.cq"], grads["dec.ck"], grads["dec.cv"] = attention_backward(d_h2, cross_cache)
    d_q, d_k, grads["dec.sq"], grads["dec.sk"], grads["dec.sv"] = attention_backward(d_h1, self_cache)
    d_h0 = d_q + d_k
    d_emb = np.zeros_like(params["dec.emb"])
    np.add.at(d_emb, inputs, d_h0)
    d_pos = np.zeros_like(params["dec.pos"])
    d_pos[: len(inputs)] = d_h0
    grads["dec.emb"], grads["dec.pos"] = d_emb, d_pos
    return grads, d_grounded


def label_sequence(values, config: ModelConfig) -> list[int]:
    """Teacher-forcing targets: sorted value ids then END."""
    values = sorted(int(v) for v in values)[: config.max_values]
    return values + [config.end_id]


def teacher_inputs(targets, config: ModelConfig) -> list[int]:
    return [config.bos_id] + list(targets[:-1])


@dataclass
class Generation:
    values: frozenset  # empty means the NONE abstention
    symbols: list
    prob_rows: np.ndarray

    @property
    def is_none(self) -> bool:
        return not self.values


def decode(params, grounded_seq, config: ModelConfig) -> Generation:
    """Greedy decoding; stops at END/NONE or after ``config.max_values`` values."""
    inputs = [config.bos_id]
    values, symbols, rows = [], [], []
    while True:
        out = decoder_forward(params, grounded_seq, inputs)
        row = out.probs[-1]
        rows.append(row)
        sym = int(np.argmax(row))
        symbols.append(sym)
        if sym in (config.end_id, config.none_id):
            break
        values.append(sym)
        if len(values) >= config.max_values or len(inputs) >= MAX_DECODE_STEPS:
            break
        inputs.append(sym)
    return Generation(frozenset(values), symbols, np.array(rows))


def generation_loss(prob_rows, label_tokens, sample_weight: float = 1.0) -> float:
    """``s * sum_t -log p_t(label_t)`` for one sample."""
    if not 0.0 <= sample_weight <= 1.0:
        raise ValueError(f"sample weight must be in [0, 1], got {sample_weight}")
    prob_rows = np.atleast_2d(prob_rows)
    label_tokens = np.asarray(label_tokens, dtype=np.int64)
    if len(label_tokens) != len(prob_rows):
        raise ValueError("one label token per probability row required")
    if np.any(label_tokens < 0) or np.any(label_tokens >= prob_rows.shape[1]):
        raise ValueError("label token outside the output vocabulary")
    picked = prob_rows[np.arange(len(label_tokens)), label_tokens]
    return float(sample_weight * -np.sum(safe_log(picked)))


def generation_loss_grad(prob_rows, label_tokens, sample_weight: float = 1.0) -> np.ndarray:
    """Gradient of :func:`generation_loss` w.r.t. the decoder logits."""
    grad = np.array(prob_rows, dtype=np.float64)
    grad[np.arange(len(label_tokens)), label_tokens] -= 1.0
    return sample_weight * grad
