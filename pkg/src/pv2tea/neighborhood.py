"""Sample reliability from visual and prediction neighborhoods.

A sample's weak label is trusted in proportion to how well the set of samples
sharing that label agrees with (a) its K nearest visual neighbors and, from
epoch E on, (b) the set of samples the model currently predicts the same
value for. The sample itself is excluded from every set so that all scores
stay in [0, 1].
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass

import numpy as np


def _squared_distances(features, n):
    diff = features - features[n]
    return np.sum(diff * diff, axis=1)


def knn_visual(features, n: int, K: int) -> frozenset[int]:
    """Indices of the K nearest rows to row ``n`` (Euclidean), ``n`` excluded.

    Ties are broken toward the lower index.
    """
    features = np.asarray(features, dtype=np.float64)
    N = len(features)
    if K >= N:
        raise ValueError(f"K={K} must be smaller than the number of samples N={N}")
    if K < 1:
        raise ValueError("K must be >= 1")
    dist = _squared_distances(features, n)
    dist[n] = np.inf
    order = np.argsort(dist, kind="stable")
    return frozenset(int(i) for i in order[:K])


def _label_groups(labels):
    groups = defaultdict(set)
    for j, y in enumerate(labels):
        groups[frozenset(y)].add(j)
    return groups


def label_consensus(labels, n: int) -> frozenset[int]:
    """Samples other than ``n`` whose label set equals that of ``n``."""
    target = frozenset(labels[n])
    return frozenset(j for j, y in enumerate(labels) if j != n and frozenset(y) == target)


def visual_reliability(neighbors, consensus, K: int) -> float:
    return len(set(neighbors) & set(consensus)) / K


def prediction_reliability(pred_consensus, consensus) -> float:
    """Jaccard overlap of the prediction cohort and the label cohort (1 if both empty)."""
    a, b = set(pred_consensus), set(consensus)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def combine(s_v: float, s_p: float | None, epoch: int, E: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < E:
        return s_v
    if s_p is None:
        raise ValueError(f"prediction reliability required from epoch {E} on (epoch={epoch})")
    return (s_v + s_p) / 2.0


@dataclass
class ReliabilityTable:
    ids: list
    s_v: np.ndarray
    s_p: np.ndarray | None
    s: np.ndarray
    epoch: int

    def rows(self, noise_flags=None):
        for i, sid in enumerate(self.ids):
            yield {
                "id": sid,
                "epoch": self.epoch,
                "s_v": float(self.s_v[i]),
                "s_p": "" if self.s_p is None else float(self.s_p[i]),
                "s": float(self.s[i]),
                "noise_flag": "" if noise_flags is None else int(bool(noise_flags[i])),
            }


def reliability_table(features, labels, K: int, epoch: int, E: int,
                      predictions=None, ids=None) -> ReliabilityTable:
    """Per-sample weights for one epoch from a frozen feature/prediction snapshot."""
    features = np.asarray(features, dtype=np.float64)
    N = len(features)
    if len(labels) != N:
        raise ValueError("one label per feature row required")
    ids = list(range(N)) if ids is None else list(ids)
    label_groups = _label_groups(labels)
    pred_groups = _label_groups(predictions) if predictions is not None else None

    s_v = np.empty(N)
    s_p = np.empty(N) if predictions is not None else None
    s = np.empty(N)
    for n in range(N):
        consensus = label_groups[frozenset(labels[n])] - {n}
        s_v[n] = visual_reliability(knn_visual(features, n, K), consensus, K)
        sp = None
        if pred_groups is not None:
            sp = prediction_reliability(pred_groups[frozenset(predictions[n])] - {n}, consensus)
            s_p[n] = sp
        s[n] = combine(s_v[n], sp, epoch, E)
    if epoch < E:
        s_p = None
    return ReliabilityTable(ids, s_v, s_p, s, epoch)


WEIGHT_FIELDS = ["id", "epoch", "s_v", "s_p", "s", "noise_flag"]


def write_weights_csv(tables, path, noise_flags=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=WEIGHT_FIELDS)
        writer.writeheader()
        for table in tables:
            writer.writerows(table.rows(noise_flags))
