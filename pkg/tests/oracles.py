"""Independent reference implementations used as test oracles."""

import math

import numpy as np

from pv2tea.data import ValueType


def infonce(img, txt, img_keys, txt_keys, tau):
    """In-batch InfoNCE averaged over both directions, with plain Python loops."""
    B = len(img)
    total = 0.0
    for a, b in ((img, txt_keys), (txt, img_keys)):
        for i in range(B):
            logits = [float(np.dot(a[i], b[j])) / tau for j in range(B)]
            mx = max(logits)
            lse = mx + math.log(sum(math.exp(x - mx) for x in logits))
            total += lse - logits[i]
    return total / (2 * B)


def reliability(features, labels, K, epoch, E, predictions=None):
    """Explicit O(N^2) scan: sort (distance, index) pairs, build every set by hand."""
    N = len(features)
    s_v, s_p, s = [], [], []
    for n in range(N):
        dists = []
        for j in range(N):
            if j != n:
                diff = features[j] - features[n]
                dists.append((float(np.sum(diff * diff)), j))
        dists.sort()
        neigh = {j for _, j in dists[:K]}
        same = {j for j in range(N) if j != n and set(labels[j]) == set(labels[n])}
        v = len(neigh & same) / K
        s_v.append(v)
        if predictions is not None and epoch >= E:
            cohort = {j for j in range(N) if j != n and set(predictions[j]) == set(predictions[n])}
            union = cohort | same
            p = 1.0 if not union else len(cohort & same) / len(union)
            s_p.append(p)
            s.append((v + p) / 2.0)
        else:
            s.append(v)
    return s_v, (s_p or None), s


def macro(records, value_type):
    """Per-class confusion counts by direct scan, then macro averages."""
    classes = sorted({v for r in records for v in r.gold})
    P, R, F = [], [], []
    for v in classes:
        tp = fp = fn = 0
        for r in records:
            if v in r.gold:
                if value_type is ValueType.SINGLE:
                    ok = len(r.pred) == 1 and v in r.pred
                else:
                    ok = v in r.pred
                tp += ok
                fn += not ok
            elif v in r.pred:
                fp += 1
        p = tp / (tp + fp) if tp + fp else 0.0
        rc = tp / (tp + fn) if tp + fn else 0.0
        P.append(p)
        R.append(rc)
        F.append(2 * p * rc / (p + rc) if p + rc else 0.0)
    return {"P": float(np.mean(P)), "R": float(np.mean(R)), "F1": float(np.mean(F))}
