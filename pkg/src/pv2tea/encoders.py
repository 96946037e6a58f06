"""Toy visual/text encoders, momentum copies and FIFO feature queues."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ops import l2_normalize, l2_normalize_backward, softmax, softmax_backward

CHECKPOINT_VERSION = 1
PROMPT_LENGTH = 9  # [CLS-Q] what is the <attr> of the <category> ?
MAX_DECODE_STEPS = 4  # up to 3 values then END

VISUAL_KEYS = ("vis.proj", "vis.pos", "vis.pool", "vis.cls", "vis.head")
TEXT_KEYS = ("txt.tok", "txt.pos", "txt.pool", "txt.cls", "txt.head")
MOMENTUM_KEYS = VISUAL_KEYS + TEXT_KEYS

PARAM_GROUPS = {
    "visual": VISUAL_KEYS,
    "text": TEXT_KEYS,
    "pruning": ("mask.w", "mask.b", "cat.w", "cat.b"),
    "fusion": ("prompt.pos", "fuse.q", "fuse.k", "fuse.v"),
    "decoder": ("dec.emb", "dec.pos", "dec.sq", "dec.sk", "dec.sv",
                "dec.cq", "dec.ck", "dec.cv", "dec.out.w", "dec.out.b"),
}


@dataclass
class ModelConfig:
    vocab_size: int
    P: int
    d_img: int
    T_max: int
    n_categories: int
    n_values: int
    d_h: int = 32
    max_values: int = 3
    init_std: float = 0.1

    @property
    def n_symbols(self) -> int:
        """Output symbols: value ids, then NONE, then END."""
        return self.n_values + 2

    @property
    def none_id(self) -> int:
        return self.n_values

    @property
    def end_id(self) -> int:
        return self.n_values + 1

    @property
    def bos_id(self) -> int:
        return self.n_values + 2


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 17])
    d, s = config.d_h, config.init_std

    def w(*shape, scale=s):
        return scale * rng.standard_normal(shape)

    attn = 1.0 / np.sqrt(d)
    params = {
        "vis.proj": w(config.d_img, d, scale=1.0 / np.sqrt(config.d_img)),
        "vis.pos": w(config.P, d, scale=0.02),
        "vis.pool": np.zeros(d),
        "vis.cls": w(d, scale=0.02),
        "vis.head": w(d, d, scale=attn),
        "txt.tok": w(config.vocab_size, d, scale=1.0),
        "txt.pos": w(config.T_max, d, scale=0.02),
        "txt.pool": np.zeros(d),
        "txt.cls": w(d, scale=0.02),
        "txt.head": w(d, d, scale=attn),
        "mask.w": w(d, scale=0.02),
        "mask.b": np.zeros(1),
        "cat.w": np.zeros((d, config.n_categories)),
        "cat.b": np.zeros(config.n_categories),
        "prompt.pos": w(PROMPT_LENGTH, d, scale=0.02),
        "fuse.q": w(d, d, scale=attn),
        "fuse.k": w(d, d, scale=attn),
        "fuse.v": w(d, d, scale=attn),
        "dec.emb": w(config.n_symbols + 1, d, scale=1.0),
        "dec.pos": w(MAX_DECODE_STEPS, d, scale=0.02),
        "dec.sq": w(d, d, scale=attn),
        "dec.sk": w(d, d, scale=attn),
        "dec.sv": w(d, d, scale=attn),
        "dec.cq": w(d, d, scale=attn),
        "dec.ck": w(d, d, scale=attn),
        "dec.cv": w(d, d, scale=attn),
        "dec.out.w": w(d, config.n_symbols, scale=attn),
        "dec.out.b": np.zeros(config.n_symbols),
    }
    return params


@dataclass
class EncodingResult:
    sequence: np.ndarray  # (L+1, d_h), CLS at position 0
    cls: np.ndarray
    cls_normalized: np.ndarray
    _cache: tuple = field(default=(), repr=False)


def _pool(rows, query):
    """Softmax-weighted pooling; a zero query gives the plain mean."""
    weights = softmax(rows @ query)
    return weights @ rows, weights


def _pool_backward(rows, query, weights, d_pooled):
    """Returns (d_rows, d_query)."""
    d_scores = softmax_backward(rows @ d_pooled, weights)
    return np.outer(weights, d_pooled) + np.outer(d_scores, query), rows.T @ d_scores


def _check_patches(params, patches):
    d_img, _ = params["vis.proj"].shape
    P = params["vis.pos"].shape[0]
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape != (P, d_img):
        raise ValueError(f"patch grid shape {patches.shape} != expected {(P, d_img)}")
    return patches


def encode_image(params, patches) -> EncodingResult:
    """Project patches, add positions, and pool a CLS-I embedding.

    The pooling query starts at zero, where pooling is the plain mean of the
    projected patches; CLS = pooled + CLS bias.
    """
    patches = _check_patches(params, patches)
    projected = patches @ params["vis.proj"]
    embedded = projected + params["vis.pos"]
    pooled, weights = _pool(projected, params["vis.pool"])
    cls = pooled + params["vis.cls"]
    head = cls @ params["vis.head"]
    z, norm = l2_normalize(head)
    seq = np.vstack([cls, embedded])
    return EncodingResult(seq, cls, z, (patches, projected, weights, head, z, norm))


def encode_image_backward(params, enc: EncodingResult, d_seq=None, d_z=None) -> dict:
    patches, projected, weights, head, z, norm = enc._cache
    P, d = params["vis.pos"].shape
    d_seq = np.zeros((P + 1, d)) if d_seq is None else d_seq
    d_cls = d_seq[0].copy()
    grads = {"vis.head": np.zeros_like(params["vis.head"])}
    if d_z is not None:
        d_head = l2_normalize_backward(d_z, z, norm)
        grads["vis.head"] = np.outer(enc.cls, d_head)
        d_cls += params["vis.head"] @ d_head
    d_embedded = d_seq[1:]
    d_pool_rows, grads["vis.pool"] = _pool_backward(projected, params["vis.pool"], weights, d_cls)
    d_projected = d_embedded + d_pool_rows
    grads["vis.proj"] = patches.T @ d_projected
    grads["vis.pos"] = d_embedded.copy()
    grads["vis.cls"] = d_cls
    return grads


def encode_text(params, tokens) -> EncodingResult:
    """Embed tokens with positions and pool a CLS embedding (see encode_image)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    vocab_size = params["txt.tok"].shape[0]
    T_max = params["txt.pos"].shape[0]
    if tokens.ndim != 1 or not 1 <= len(tokens) <= T_max:
        raise ValueError(f"token sequence length must be in [1, {T_max}], got {tokens.shape}")
    if tokens.min() < 0 or tokens.max() >= vocab_size:
        raise ValueError(f"token id out of vocabulary range [0, {vocab_size})")
    emb = params["txt.tok"][tokens]
    embedded = emb + params["txt.pos"][: len(tokens)]
    pooled, weights = _pool(emb, params["txt.pool"])
    cls = pooled + params["txt.cls"]
    head = cls @ params["txt.head"]
    z, norm = l2_normalize(head)
    seq = np.vstack([cls, embedded])
    return EncodingResult(seq, cls, z, (tokens, emb, weights, head, z, norm))


def encode_text_backward(params, enc: EncodingResult, d_seq=None, d_z=None) -> dict:
    tokens, emb, weights, head, z, norm = enc._cache
    T = len(tokens)
    d = params["txt.cls"].shape[0]
    d_seq = np.zeros((T + 1, d)) if d_seq is None else d_seq
    d_cls = d_seq[0].copy()
    grads = {"txt.head": np.zeros_like(params["txt.head"])}
    if d_z is not None:
        d_head = l2_normalize_backward(d_z, z, norm)
        grads["txt.head"] = np.outer(enc.cls, d_head)
        d_cls += params["txt.head"] @ d_head
    d_embedded = d_seq[1:]
    d_pool_rows, grads["txt.pool"] = _pool_backward(emb, params["txt.pool"], weights, d_cls)
    d_tok = np.zeros_like(params["txt.tok"])
    np.add.at(d_tok, tokens, d_embedded + d_pool_rows)
    d_pos = np.zeros_like(params["txt.pos"])
    d_pos[:T] = d_embedded
    grads["txt.tok"] = d_tok
    grads["txt.pos"] = d_pos
    grads["txt.cls"] = d_cls
    return grads


def momentum_update(online: dict, momentum: dict, m: float) -> dict:
    """EMA step ``theta' <- m * theta' + (1 - m) * theta`` for every momentum key."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum coefficient must be in [0, 1], got {m}")
    out = {}
    for name, theta_m in momentum.items():
        theta = online[name]
        if theta.shape != theta_m.shape:
            raise ValueError(f"shape mismatch for {name}: {theta.shape} vs {theta_m.shape}")
        out[name] = m * theta_m + (1.0 - m) * theta
    return out


class MomentumQueue:
    """Fixed-capacity FIFO ring buffer of unit-norm feature vectors."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.capacity = capacity
        self.dim = dim
        self.buffer = np.zeros((capacity, dim))
        self.ptr = 0
        self.fill = 0

    def enqueue(self, batch, tol: float = 1e-4) -> MomentumQueue:
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.dim)
        if len(batch) == 0:
            return self
        norms = np.linalg.norm(batch, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
        if len(bad):
            raise ValueError(f"queue only accepts unit-norm vectors; row {bad[0]} has norm {norms[bad[0]]:.6g}")
        if len(batch) > self.capacity:
            batch = batch[-self.capacity:]
        idx = (self.ptr + np.arange(len(batch))) % self.capacity
        self.buffer[idx] = batch
        self.ptr = int((self.ptr + len(batch)) % self.capacity)
        self.fill = min(self.fill + len(batch), self.capacity)
        return self

    def contents(self) -> np.ndarray:
        """Stored vectors, oldest first."""
        if self.fill < self.capacity:
            return self.buffer[: self.fill].copy()
        return np.roll(self.buffer, -self.ptr, axis=0)

    def __len__(self):
        return self.fill

    def copy(self) -> MomentumQueue:
        q = MomentumQueue(self.capacity, self.dim)
        q.buffer = self.buffer.copy()
        q.ptr, q.fill = self.ptr, self.fill
        return q


@dataclass
class ModelState:
    config: ModelConfig
    params: dict
    momentum: dict
    image_queue: MomentumQueue
    text_queue: MomentumQueue

    @classmethod
    def initialize(cls, config: ModelConfig, queue_size: int = 512, seed: int = 0) -> ModelState:
        params = init_params(config, seed)
        momentum = {k: params[k].copy() for k in MOMENTUM_KEYS}
        return cls(config, params, momentum,
                   MomentumQueue(queue_size, config.d_h), MomentumQueue(queue_size, config.d_h))

    def copy(self) -> ModelState:
        return ModelState(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.momentum.items()},
            self.image_queue.copy(),
            self.text_queue.copy(),
        )


def _array_json(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _array_from_json(obj):
    return np.asarray(obj["data"], dtype=np.float64).reshape(obj["shape"])


def state_to_json(state: ModelState, extra: dict | None = None) -> dict:
    arrays = {}
    for k, v in state.params.items():
        arrays[f"online/{k}"] = _array_json(v)
    for k, v in state.momentum.items():
        arrays[f"momentum/{k}"] = _array_json(v)
    queues = {}
    for name, q in (("image", state.image_queue), ("text", state.text_queue)):
        queues[name] = {"capacity": q.capacity, "ptr": q.ptr, "fill": q.fill, "buffer": _array_json(q.buffer)}
    return {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(state.config),
        "arrays": arrays,
        "queues": queues,
        "extra": extra or {},
    }


def state_from_json(obj: dict) -> ModelState:
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')!r}")
    config = ModelConfig(**obj["model_config"])
    params, momentum = {}, {}
    for key, arr in obj["arrays"].items():
        group, name = key.split("/", 1)
        (params if group == "online" else momentum)[name] = _array_from_json(arr)
    queues = []
    for name in ("image", "text"):
        qd = obj["queues"][name]
        q = MomentumQueue(qd["capacity"], config.d_h)
        q.buffer = _array_from_json(qd["buffer"])
        q.ptr, q.fill = qd["ptr"], qd["fill"]
        queues.append(q)
    return ModelState(config, params, momentum, *queues)


def save_checkpoint(state: ModelState, path, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(state_to_json(state, extra), sort_keys=True), encoding="utf-8")


def load_checkpoint(path) -> tuple[ModelState, dict]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return state_from_json(obj), obj.get("extra", {})
