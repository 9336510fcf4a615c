"""Deliberately naive reference implementations of the metrics.

Plain loops over cells, pairs and lists with no shared helpers, used to
cross-check the vectorized versions.
"""

import math
from collections import Counter


def v_acc(truth, est, eps):
    agree = total = 0
    for row_y, row_e in zip(truth, est):
        for a, b in zip(row_y, row_e):
            total += 1
            if (a >= eps) == (b >= eps):
                agree += 1
    return agree / total


def _argmax(row):
    best = 0
    for j in range(1, len(row)):
        if row[j] > row[best]:
            best = j
    return best


def top1_acc(truth, est, eps):
    hits = n = 0
    for row_y, row_e in zip(truth, est):
        top = max(row_y)
        if top < eps or list(row_y).count(top) > 1:
            continue
        n += 1
        if _argmax(row_e) == _argmax(row_y):
            hits += 1
    return hits / n if n else 0.0


def mse_with_std(truth, est):
    per = []
    for row_y, row_e in zip(truth, est):
        per.append(sum((a - b) ** 2 for a, b in zip(row_y, row_e)) / len(row_y))
    mean = sum(per) / len(per)
    var = sum((p - mean) ** 2 for p in per) / len(per)
    return mean, math.sqrt(var)


def _ranked(row, eps):
    items = [(v, j) for j, v in enumerate(row) if v >= eps]
    out = []
    while items:
        # repeatedly pull the largest value, lowest index on ties
        best = items[0]
        for it in items[1:]:
            if it[0] > best[0] or (it[0] == best[0] and it[1] < best[1]):
                best = it
        out.append(best[1])
        items.remove(best)
    return out


def mc_acc(truth, est, eps):
    hits = n = 0
    for row_y, row_e in zip(truth, est):
        want = _ranked(row_y, eps)
        if not want:
            continue
        n += 1
        if want == _ranked(row_e, eps):
            hits += 1
    return hits / n if n else 0.0


def _tau(a, b):
    r = len(a)
    n0 = r * (r - 1) // 2
    nc = nd = 0
    for i in range(r):
        for j in range(i + 1, r):
            da, db = a[i] - a[j], b[i] - b[j]
            if da * db > 0:
                nc += 1
            elif da * db < 0:
                nd += 1
    na = sum(t * (t - 1) // 2 for t in Counter(a).values())
    nb = sum(t * (t - 1) // 2 for t in Counter(b).values())
    denom = (n0 - na) * (n0 - nb)
    if denom == 0:
        return None
    return (nc - nd) / math.sqrt(denom)


def kendall_tau(truth, est):
    vals = []
    for row_y, row_e in zip(truth, est):
        t = _tau(list(row_y), list(row_e))
        if t is not None:
            vals.append(t)
    return sum(vals) / len(vals) if vals else 0.0


def top1_ir(truth, est):
    total = 0.0
    for row_y, row_e in zip(truth, est):
        total += row_y[_argmax(row_e)]
    return total / len(truth)
