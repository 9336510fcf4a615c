"""Ranking and regression metrics over (queries x root causes) impact matrices.

Queries whose truth has no valid root cause are left out of Top1-ACC and
MC-ACC; queries whose truth maximum is tied are left out of Top1-ACC; queries
with a zero tau denominator are left out of Tau. Each exclusion is counted.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ShapeError

DEFAULT_EPSILON = 0.10


def _pair(truth, est):
    y = np.asarray(truth, dtype=np.float64)
    yh = np.asarray(est, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    if yh.ndim == 1:
        yh = yh[None, :]
    if y.shape != yh.shape:
        raise ShapeError(f"truth shape {y.shape} != estimate shape {yh.shape}")
    return y, yh


def v_acc(truth, est, eps=DEFAULT_EPSILON):
    y, yh = _pair(truth, est)
    return float(np.mean((yh >= eps) == (y >= eps)))


def _top1_mask(y, eps):
    top = y.max(axis=1)
    unique = (y == top[:, None]).sum(axis=1) == 1
    valid = top >= eps if eps is not None else np.ones(len(y), dtype=bool)
    return unique & valid, valid


def top1_acc(truth, est, eps=DEFAULT_EPSILON, return_counts=False):
    """Share of queries whose estimated argmax is the true argmax.

    ``eps=None`` keeps queries without a valid root cause.
    """
    y, yh = _pair(truth, est)
    keep, _ = _top1_mask(y, eps)
    n = int(keep.sum())
    hits = int((np.argmax(yh[keep], axis=1) == np.argmax(y[keep], axis=1)).sum()) if n else 0
    value = hits / n if n else 0.0
    return (value, n, len(y) - n) if return_counts else value


def mse_with_std(truth, est, per_cell=False):
    y, yh = _pair(truth, est)
    sq = (y - yh) ** 2
    vals = sq.ravel() if per_cell else sq.mean(axis=1)
    return float(vals.mean()), float(vals.std())


def valid_ranking(row, eps):
    """Indices with value >= eps, by descending value then ascending index."""
    idx = [j for j in range(len(row)) if row[j] >= eps]
    return sorted(idx, key=lambda j: (-row[j], j))


def mc_acc(truth, est, eps=DEFAULT_EPSILON, return_counts=False):
    y, yh = _pair(truth, est)
    hits = n = 0
    for row_y, row_e in zip(y, yh):
        want = valid_ranking(row_y, eps)
        if not want:
            continue
        n += 1
        hits += want == valid_ranking(row_e, eps)
    value = hits / n if n else 0.0
    return (value, n, len(y) - n) if return_counts else value


def tau_b(a, b):
    """Kendall tau-b of two equal-length vectors, or None when undefined."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    i, j = np.triu_indices(len(a), k=1)
    sa = np.sign(a[i] - a[j])
    sb = np.sign(b[i] - b[j])
    n0 = len(i)
    prod = sa * sb
    nc = int((prod > 0).sum())
    nd = int((prod < 0).sum())
    na = int((sa == 0).sum())
    nb = int((sb == 0).sum())
    denom = (n0 - na) * (n0 - nb)
    if denom == 0:
        return None
    return (nc - nd) / float(np.sqrt(denom))


def kendall_tau(truth, est, return_counts=False):
    y, yh = _pair(truth, est)
    taus = [t for t in (tau_b(a, b) for a, b in zip(y, yh)) if t is not None]
    value = float(np.mean(taus)) if taus else 0.0
    return (value, len(taus), len(y) - len(taus)) if return_counts else value


def top1_ir(truth, est):
    y, yh = _pair(truth, est)
    return float(y[np.arange(len(y)), np.argmax(yh, axis=1)].mean())


@dataclass
class MetricsReport:
    v_acc: float
    top1_acc: float
    mse_mean: float
    mse_std: float
    mc_acc: float
    tau: float
    top1_ir: float
    n_queries: int
    skipped: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    METRICS = ("v_acc", "top1_acc", "mse_mean", "mse_std", "mc_acc", "tau", "top1_ir")


def compute_report(truth, est, eps=DEFAULT_EPSILON, per_cell_mse=False, timing=None):
    y, yh = _pair(truth, est)
    t1, _, t1_skip = top1_acc(y, yh, eps, return_counts=True)
    mc, _, mc_skip = mc_acc(y, yh, eps, return_counts=True)
    tau, _, tau_skip = kendall_tau(y, yh, return_counts=True)
    mse, std = mse_with_std(y, yh, per_cell_mse)
    no_valid = int((y.max(axis=1) < eps).sum())
    return MetricsReport(
        v_acc=v_acc(y, yh, eps),
        top1_acc=t1,
        mse_mean=mse,
        mse_std=std,
        mc_acc=mc,
        tau=tau,
        top1_ir=top1_ir(y, yh),
        n_queries=len(y),
        skipped={"top1": t1_skip, "mc": mc_skip, "tau": tau_skip, "no_valid_truth": no_valid},
        timing=dict(timing or {}),
    )
