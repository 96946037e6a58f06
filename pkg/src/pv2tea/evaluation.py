"""Synonym-normalized matching, macro P/R/F1, source-aware gaps and retrieval recall."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .data import GoldSource, ValueType, Vocabulary

UNKNOWN = -1
METRICS = ("P", "R", "F1")


def normalize(value_string: str, vocab: Vocabulary) -> int:
    """Canonical value id of a surface string; ``UNKNOWN`` when not in the synonym map."""
    key = value_string.strip().lower()
    canonical = vocab.synonyms.get(key)
    if canonical is None:
        return UNKNOWN
    return vocab.value_id(canonical)


def normalize_set(values, vocab: Vocabulary) -> frozenset[int]:
    return frozenset(normalize(v, vocab) if isinstance(v, str) else int(v) for v in values)


def match(pred_set, gold_set, value_type: ValueType) -> bool:
    """SINGLE: prediction is exactly the gold value. MULTIPLE: every gold value is predicted."""
    pred_set, gold_set = frozenset(pred_set), frozenset(gold_set)
    if ValueType(value_type) is ValueType.SINGLE:
        return pred_set == gold_set and len(gold_set) == 1
    return bool(gold_set) and gold_set <= pred_set


@dataclass
class EvalRecord:
    sample_id: str
    pred: frozenset  # empty = NONE abstention
    gold: frozenset
    gold_source: GoldSource | None = None
    category_id: int | None = None

    def __post_init__(self):
        self.pred = frozenset(self.pred)
        self.gold = frozenset(self.gold)
        if not self.gold:
            raise ValueError(f"record {self.sample_id}: gold value set is empty")
        if self.gold_source is not None:
            self.gold_source = GoldSource(self.gold_source)


def f1_score(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)


@dataclass
class MetricsReport:
    per_class: dict  # value id -> ClassCounts
    macro: dict  # P, R, F1
    n_records: int
    splits: dict = field(default_factory=dict)  # source name -> MetricsReport | None
    gap: dict | None = None

    def to_json(self) -> dict:
        obj = {
            "n_records": self.n_records,
            "macro": dict(self.macro),
            "per_class": {
                str(v): {"TP": c.tp, "FP": c.fp, "FN": c.fn, "P": c.precision, "R": c.recall, "F1": c.f1}
                for v, c in sorted(self.per_class.items())
            },
        }
        if self.splits:
            obj["splits"] = {k: (None if r is None else r.to_json()) for k, r in self.splits.items()}
            obj["gap"] = self.gap
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> MetricsReport:
        per_class = {int(v): ClassCounts(c["TP"], c["FP"], c["FN"]) for v, c in obj["per_class"].items()}
        splits = {k: (None if r is None else cls.from_json(r)) for k, r in obj.get("splits", {}).items()}
        return cls(per_class, dict(obj["macro"]), obj["n_records"], splits, obj.get("gap"))

    def csv_rows(self, split: str = "ALL"):
        rows = []
        for v, c in sorted(self.per_class.items()):
            rows.append({"split": split, "class": str(v), "P": c.precision, "R": c.recall, "F1": c.f1})
        rows.append({"split": split, "class": "MACRO", **self.macro})
        for name, sub in self.splits.items():
            if sub is not None:
                rows.extend(sub.csv_rows(name))
        if self.gap is not None:
            rows.append({"split": "GAP", "class": "MACRO", **self.gap})
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["split", "class", *METRICS], lineterminator="\n")
        writer.writeheader()
        for row in self.csv_rows():
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def parse_report_csv(text: str) -> list[dict]:
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        rows.append({"split": row["split"], "class": row["class"], **{m: float(row[m]) for m in METRICS}})
    return rows


def class_counts(records, value_type: ValueType) -> dict:
    """Per value class TP/FP/FN. Abstentions (empty predictions) never count as FP."""
    value_type = ValueType(value_type)
    counts = defaultdict(ClassCounts)
    for r in records:
        for v in r.gold:
            hit = (r.pred == frozenset([v])) if value_type is ValueType.SINGLE else (v in r.pred)
            if hit:
                counts[v].tp += 1
            else:
                counts[v].fn += 1
        for v in r.pred - r.gold:
            counts[v].fp += 1
    return dict(counts)


def macro_prf(records, value_type: ValueType = ValueType.SINGLE) -> MetricsReport:
    """Macro precision/recall/F1 over value classes with at least one gold occurrence."""
    records = list(records)
    if not records:
        raise ValueError("no records to evaluate")
    counts = class_counts(records, value_type)
    gold_classes = sorted({v for r in records for v in r.gold})
    macro = {
        "P": float(np.mean([counts[v].precision for v in gold_classes])),
        "R": float(np.mean([counts[v].recall for v in gold_classes])),
        "F1": float(np.mean([counts[v].f1 for v in gold_classes])),
    }
    return MetricsReport(counts, macro, len(records))


def source_aware_report(records, value_type: ValueType = ValueType.SINGLE) -> MetricsReport:
    """Overall report plus TEXT / IMAGE splits and a TEXT - IMAGE gap row."""
    records = list(records)
    if any(r.gold_source is None for r in records):
        raise ValueError("source-aware evaluation needs gold_source on every record")
    report = macro_prf(records, value_type)
    for source in (GoldSource.TEXT, GoldSource.IMAGE):
        subset = [r for r in records if r.gold_source is source]
        report.splits[source.value] = macro_prf(subset, value_type) if subset else None
    text, image = report.splits["TEXT"], report.splits["IMAGE"]
    if text is not None and image is not None:
        report.gap = {m: text.macro[m] - image.macro[m] for m in METRICS}
    return report


def retrieval_eval(image_cls, text_cls) -> dict:
    """Rank-1 recall both ways plus mean rank of the true pair.

    Row i of ``image_cls`` and row i of ``text_cls`` are a true pair.
    ``R@Mean`` is the average of ``T@1`` and ``I@1``.
    """
    image_cls = np.asarray(image_cls, dtype=np.float64)
    text_cls = np.asarray(text_cls, dtype=np.float64)
    if image_cls.shape != text_cls.shape:
        raise ValueError(f"count mismatch: {image_cls.shape} vs {text_cls.shape}")
    N = len(image_cls)
    if N == 0:
        raise ValueError("no pairs to evaluate")
    sim = image_cls @ text_cls.T
    idx = np.arange(N)
    t_at_1 = float(np.mean(np.argmax(sim, axis=1) == idx))
    i_at_1 = float(np.mean(np.argmax(sim, axis=0) == idx))
    # rank 1 = best; ties resolved in favor of the true pair
    t_rank = 1 + np.sum(sim > sim[idx, idx][:, None], axis=1)
    i_rank = 1 + np.sum(sim > sim[idx, idx][None, :], axis=0)
    return {
        "T@1": t_at_1,
        "I@1": i_at_1,
        "R@Mean": (t_at_1 + i_at_1) / 2.0,
        "T@MeanRank": float(np.mean(t_rank)),
        "I@MeanRank": float(np.mean(i_rank)),
    }


def write_report(report: MetricsReport, json_path, csv_path, extra: dict | None = None) -> None:
    obj = report.to_json()
    if extra:
        obj.update(extra)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report.to_csv())
