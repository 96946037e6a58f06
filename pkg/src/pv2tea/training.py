"""Composite objective, AdamW-style optimization and the reliability refresh schedule."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Sample, ValueType, Vocabulary
from .encoders import ModelConfig, ModelState, momentum_update
from .fusion import build_prompt
from .model import BatchItem, LossComponents, LossScales, Toggles, batch_loss, predict, visual_features
from .neighborhood import ReliabilityTable, reliability_table

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-2
    weight_decay: float = 0.05
    alpha: float = 0.4
    tau: float = 0.07
    queue_size: int = 512
    K: int = 10
    E: int = 2
    momentum: float = 0.995
    seed: int = 0
    d_h: int = 32
    s1: bool = True
    s2: bool = True
    s3: bool = True
    scale_sc: float = 1.0
    scale_ct: float = 1.0
    scale_rmlm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    attribute_id: int = 0

    @property
    def toggles(self) -> Toggles:
        return Toggles(self.s1, self.s2, self.s3)

    @property
    def scales(self) -> LossScales:
        return LossScales(self.scale_sc, self.scale_ct, self.scale_rmlm)

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or (self.s1 and self.batch_size < 2):
            raise ValueError("batch_size must be >= 2 when the contrastive term is on")
        if self.queue_size < self.batch_size:
            raise ValueError("queue_size must be >= batch_size")
        if self.epochs > 0 and self.E > self.epochs:
            raise ValueError(f"E={self.E} must not exceed epochs={self.epochs}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must be in [0, 1]")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


def total_loss(state: ModelState, items, weights=None, toggles: Toggles = Toggles(),
               alpha: float = 0.4, tau: float = 0.07, scales: LossScales = LossScales(),
               with_grad: bool = True):
    """``L_sc + L_ct + L_r-mlm`` over enabled terms. Returns (total, components, grads)."""
    comps, grads = batch_loss(state, items, weights, toggles, alpha, tau, scales, with_grad)
    return comps.total, comps, grads


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    if total_steps <= 0:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


class AdamW:
    """Adam moments with weight decay applied directly to the parameters."""

    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.05):
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            v = self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] *= 1.0 - lr * self.weight_decay
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def model_config_for(header_or_samples, vocab_size: int, n_categories: int, n_values: int,
                     value_type: ValueType, d_h: int) -> ModelConfig:
    P, d_img, T_max = header_or_samples
    return ModelConfig(vocab_size=vocab_size, P=P, d_img=d_img, T_max=T_max, n_categories=n_categories,
                       n_values=n_values, d_h=d_h, max_values=3 if value_type is ValueType.MULTIPLE else 1)


def make_items(samples, vocab: Vocabulary, attribute_id: int = 0, use_gold: bool = False) -> list[BatchItem]:
    prompts = {}
    items = []
    for s in samples:
        if s.category_id not in prompts:
            prompts[s.category_id] = build_prompt(attribute_id, s.category_id, vocab).tokens
        label = s.gold_label if (use_gold and s.gold_label is not None) else s.weak_label
        items.append(BatchItem(s.patches, s.tokens, s.category_id, prompts[s.category_id], label))
    return items


@dataclass
class TrainMetrics:
    steps: list = field(default_factory=list)  # dicts: step, epoch, L_sc, L_ct, L_rmlm, total, lr
    epochs: list = field(default_factory=list)  # per-epoch weight summaries
    wall_clock: float = 0.0

    METRIC_FIELDS = ["step", "epoch", "L_sc", "L_ct", "L_rmlm", "total", "lr"]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.METRIC_FIELDS)
            writer.writeheader()
            for row in self.steps:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


@dataclass
class TrainResult:
    state: ModelState
    metrics: TrainMetrics
    weight_history: list  # ReliabilityTable per epoch (empty without S3)
    initial_state: ModelState


class DivergenceError(RuntimeError):
    pass


def _weight_summary(table: ReliabilityTable, noise_flags) -> dict:
    flags = np.asarray(noise_flags, dtype=bool)
    summary = {"epoch": table.epoch, "mean_s": float(table.s.mean()),
               "has_s_p": table.s_p is not None}
    if flags.any() and (~flags).any():
        summary["mean_s_clean"] = float(table.s[~flags].mean())
        summary["mean_s_noisy"] = float(table.s[flags].mean())
    return summary


def train(train_samples: list[Sample], vocab: Vocabulary, config: TrainConfig,
          state: ModelState | None = None, *, n_categories: int | None = None,
          n_values: int | None = None, value_type: ValueType = ValueType.SINGLE,
          T_max: int | None = None, epoch_callback=None) -> TrainResult:
    """Train from ``state`` (fresh initialization when None).

    Per epoch: snapshot visual features (and, from epoch E, the current
    predictions), refresh sample weights, then one shuffled pass of AdamW
    steps with momentum and queue updates.
    """
    config.validate()
    if not train_samples:
        raise ValueError("training set is empty")
    if state is None:
        n_categories = n_categories or (max(s.category_id for s in train_samples) + 1)
        n_values = n_values or len(vocab.values)
        P, d_img = train_samples[0].patches.shape
        T_max = T_max or max(len(s.tokens) for s in train_samples)
        state = ModelState.initialize(
            model_config_for((P, d_img, T_max), len(vocab), n_categories, n_values, ValueType(value_type),
                             config.d_h),
            queue_size=config.queue_size, seed=config.seed)
    initial = state.copy()
    state = state.copy()
    items = make_items(train_samples, vocab, config.attribute_id)
    labels = [it.label for it in items]
    noise_flags = [s.noise_flag for s in train_samples]
    N, B = len(items), config.batch_size
    if config.s3 and config.K >= N:
        raise ValueError(f"K={config.K} must be smaller than the training set size {N}")
    steps_per_epoch = math.ceil(N / B)
    total_steps = config.epochs * steps_per_epoch
    opt = AdamW(state.params, config.beta1, config.beta2, config.adam_eps, config.weight_decay)
    rng = np.random.default_rng([config.seed, 99])
    metrics = TrainMetrics()
    history: list[ReliabilityTable] = []
    toggles, scales = config.toggles, config.scales
    started = time.perf_counter()
    step = 0
    for epoch in range(config.epochs):
        weights = np.ones(N)
        if toggles.s3:
            feats = visual_features(state, [it.patches for it in items])
            preds = None
            if epoch >= config.E:
                preds = [predict(state, it.patches, it.tokens, it.prompt, toggles.s2).values for it in items]
            table = reliability_table(feats, labels, config.K, epoch, config.E, preds,
                                      ids=[s.id for s in train_samples])
            history.append(table)
            weights = table.s
            metrics.epochs.append(_weight_summary(table, noise_flags))
        order = rng.permutation(N)
        for start in range(0, N, B):
            idx = order[start:start + B]
            lr = cosine_lr(config.lr, step, total_steps)
            total, comps, grads = total_loss(state, [items[i] for i in idx], weights[idx], toggles,
                                             config.alpha, config.tau, scales)
            if not np.isfinite(total):
                raise DivergenceError(f"non-finite total loss at step {step} (epoch {epoch})")
            opt.step(state.params, grads, lr)
            if toggles.s1:
                state.momentum = momentum_update(state.params, state.momentum, config.momentum)
                state.image_queue.enqueue(comps.extras["momentum_image"])
                state.text_queue.enqueue(comps.extras["momentum_text"])
            metrics.steps.append({"step": step, "epoch": epoch, "L_sc": comps.L_sc, "L_ct": comps.L_ct,
                                  "L_rmlm": comps.L_rmlm, "total": total, "lr": lr})
            step += 1
        last = metrics.steps[-1]
        log.info("epoch %d done: total=%.4f L_sc=%.4f L_ct=%.4f L_rmlm=%.4f", epoch, last["total"],
                 last["L_sc"], last["L_ct"], last["L_rmlm"])
        if epoch_callback is not None:
            epoch_callback(epoch, state)
    metrics.wall_clock = time.perf_counter() - started
    return TrainResult(state, metrics, history, initial)


def train_config_to_dict(config: TrainConfig) -> dict:
    return asdict(config)


__all__ = ["AdamW", "DivergenceError", "LossComponents", "TrainConfig", "TrainMetrics", "TrainResult",
           "cosine_lr", "make_items", "total_loss", "train"]
