"""Central finite-difference check of reverse-mode gradients."""

from dataclasses import dataclass

import numpy as np

from .tensor import record_kinks

MAX_DRAWS = 8  # candidate coordinates tried per parameter when skipping kinks


def _central(fn, flat, i, fd_step, kinks=None):
    """Central difference at flat index ``i``; ``None`` if a probe flips a relu."""
    orig = flat[i]
    try:
        flat[i] = orig + fd_step
        with record_kinks() as up_log:
            up = float(fn().data)
        flat[i] = orig - fd_step
        with record_kinks() as down_log:
            down = float(fn().data)
    finally:
        flat[i] = orig
    if kinks is not None and (up_log != kinks or down_log != kinks):
        return None
    return (up - down) / (2.0 * fd_step)


def numeric_grad(fn, params, fd_step=1e-3, coords=None):
    """Central differences of scalar ``fn()`` w.r.t. entries of ``params``.

    ``coords`` optionally lists, per parameter, the flat indices to probe;
    the remaining entries of the returned arrays stay zero.
    """
    out = []
    for k, p in enumerate(params):
        g = np.zeros_like(p.data, dtype=np.float64)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size) if coords is None else coords[k]:
            gflat[i] = _central(fn, flat, i, fd_step)
        out.append(g)
    return out


@dataclass
class GradCheckResult:
    max_error: float
    checked: int  # coordinates compared
    skipped: int  # coordinates whose probes crossed a relu boundary


def _candidates(g, per_param, rng):
    flat = g.reshape(-1)
    if per_param is None:
        return np.arange(flat.size)
    live = np.flatnonzero(flat)
    # parameters with an all-zero analytic gradient still get probed so a
    # missing gradient shows up as a mismatch
    pool = live if live.size else np.arange(flat.size)
    return rng.permutation(pool)[:MAX_DRAWS]


def check_gradients(fn, params, fd_step=1e-3, per_param=None, rng=None, smooth_only=False):
    """Compare analytic and central-difference gradients coordinate by coordinate.

    With ``per_param`` set, up to that many sampled coordinates of each
    parameter are compared. With ``smooth_only`` a coordinate whose ``±fd_step``
    probes switch any relu on or off is passed over (and replaced when
    sampling): the loss is not differentiable across those boundaries.
    """
    params = list(params)
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in params:
        p.grad = None
    with record_kinks() as kinks:
        loss = fn()
    loss.backward()
    reference = kinks if smooth_only else None
    worst, checked, skipped = 0.0, 0, 0
    for p in params:
        ga = np.zeros(p.data.size) if p.grad is None else np.asarray(p.grad, dtype=np.float64).reshape(-1)
        flat = p.data.reshape(-1)
        taken = 0
        for i in _candidates(ga, per_param, rng):
            if per_param is not None and taken >= per_param:
                break
            gn = _central(fn, flat, int(i), fd_step, reference)
            if gn is None:
                skipped += 1
                continue
            taken += 1
            worst = max(worst, abs(ga[i] - gn) / max(1.0, abs(gn)))
        checked += taken
    return GradCheckResult(float(worst), checked, skipped)


def grad_check(fn, params, fd_step=1e-3, per_param=None, rng=None, smooth_only=False):
    """Max over coordinates of |g_ad - g_fd| / max(1, |g_fd|).

    ``fn`` must be deterministic (dropout off) and return a scalar Tensor built
    from ``params``; evaluate in float64.
    """
    return check_gradients(fn, params, fd_step, per_param, rng, smooth_only).max_error
