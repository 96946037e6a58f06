"""Glue for running a trained model over a split and summarizing the result."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .data import ValueType, Vocabulary
from .encoders import ModelState, encode_image, encode_text
from .evaluation import EvalRecord, MetricsReport, macro_prf, normalize_set, retrieval_eval, source_aware_report
from .model import predict
from .training import TrainConfig, make_items, train


def predict_split(state: ModelState, samples, vocab: Vocabulary, use_pruning: bool = True,
                  attribute_id: int = 0):
    """Greedy predictions for every sample. Returns (records, gate vectors or None)."""
    records, gates = [], []
    for s, it in zip(samples, make_items(samples, vocab, attribute_id)):
        pred = predict(state, it.patches, it.tokens, it.prompt, use_pruning)
        # round-trip through surface strings so matching is synonym-normalized
        pred_values = normalize_set([vocab.values[v] for v in sorted(pred.values)], vocab)
        gold = s.gold_label if s.gold_label is not None else s.weak_label
        records.append(EvalRecord(s.id, pred_values, gold, s.gold_source, s.category_id))
        gates.append(pred.gates)
    return records, (gates if use_pruning else None)


def evaluate_split(state, samples, vocab, value_type: ValueType, use_pruning: bool = True,
                   source_aware: bool = True) -> MetricsReport:
    records, _ = predict_split(state, samples, vocab, use_pruning)
    if source_aware and all(r.gold_source is not None for r in records):
        return source_aware_report(records, value_type)
    return macro_prf(records, value_type)


def foreground_gate_stats(gates, foreground, sample_ids, P: int) -> tuple[float, float]:
    """Mean gate over foreground patches and over background patches."""
    fg_means, bg_means = [], []
    for g, sid in zip(gates, sample_ids):
        mask = np.zeros(P, dtype=bool)
        mask[list(foreground[sid])] = True
        fg_means.append(g[mask].mean())
        if (~mask).any():
            bg_means.append(g[~mask].mean())
    return float(np.mean(fg_means)), float(np.mean(bg_means))


def retrieval_on(state: ModelState, samples) -> dict:
    """Image<->text rank-1 recall over the given aligned pairs (online encoders)."""
    image = np.stack([encode_image(state.params, s.patches).cls_normalized for s in samples])
    text = np.stack([encode_text(state.params, s.tokens).cls_normalized for s in samples])
    return retrieval_eval(image, text)


def dataset_hash(samples) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(s.id.encode())
        h.update(np.ascontiguousarray(s.patches).tobytes())
        h.update(json.dumps([s.tokens, s.category_id, sorted(s.weak_label)]).encode())
    return h.hexdigest()[:16]


ABLATION_VARIANTS = {
    "full": {},
    "w/o S1": {"s1": False},
    "w/o S2": {"s2": False},
    "w/o S3": {"s3": False},
}


def _ablation_job(args):
    train_samples, test_samples, vocab, cfg, name, dims = args
    result = train(train_samples, vocab, cfg, n_categories=dims["n_categories"], n_values=dims["n_values"],
                   value_type=dims["value_type"], T_max=dims["T_max"])
    report = evaluate_split(result.state, test_samples, vocab, dims["value_type"], use_pruning=cfg.s2)
    row = {"seed": cfg.seed, "variant": name, **report.macro}
    if report.gap is not None:
        row["GAP_F1"] = report.gap["F1"]
    return row


def run_ablation(train_samples, test_samples, vocab, config: TrainConfig, seeds, *, n_categories, n_values,
                 value_type: ValueType, T_max: int, variants=ABLATION_VARIANTS, jobs: int = 1,
                 log=None) -> dict:
    """Train every variant on the same data for each seed; returns per-seed and mean P/R/F1.

    ``jobs > 1`` trains variants in separate processes; row order is unaffected.
    """
    from concurrent.futures import ProcessPoolExecutor
    from dataclasses import replace

    data_hash = dataset_hash(train_samples)
    dims = {"n_categories": n_categories, "n_values": n_values, "value_type": ValueType(value_type),
            "T_max": T_max}
    tasks = [(train_samples, test_samples, vocab, replace(config, seed=seed, **overrides), name, dims)
             for seed in seeds for name, overrides in variants.items()]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_seed = list(pool.map(_ablation_job, tasks))
    else:
        per_seed = []
        for task in tasks:
            per_seed.append(_ablation_job(task))
            if log is not None:
                log(per_seed[-1])
    for row in per_seed:
        row["dataset_hash"] = data_hash
    averaged = []
    for name in variants:
        rows = [r for r in per_seed if r["variant"] == name]
        avg = {"variant": name, "n_seeds": len(rows)}
        for key in ("P", "R", "F1", "GAP_F1"):
            vals = [r[key] for r in rows if key in r]
            if vals:
                avg[key] = float(np.mean(vals))
        averaged.append(avg)
    return {"dataset_hash": data_hash, "per_seed": per_seed, "averaged": averaged}
