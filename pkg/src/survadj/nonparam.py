"""Nonparametric survival machinery.

Weighted Kaplan-Meier and Nelson-Aalen, the reverse (censoring) Kaplan-Meier,
jackknife pseudo-values and the two post-hoc corrections (truncation to
[0, 1] and isotonic regression) applied to curves that are not proper.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import StepCurve, SurvivalDataset
from .errors import AllWeightsZero, EmptyGroup


def _risk_table(time, status, weights):
    """Per distinct observed time: time, weighted events, weighted removals
    and weighted number at risk."""
    utimes, inv = np.unique(time, return_inverse=True)
    k = len(utimes)
    removed = np.bincount(inv, weights=weights, minlength=k)
    events = np.bincount(inv, weights=weights * status, minlength=k)
    at_risk = np.cumsum(removed[::-1])[::-1]
    return utimes, events, removed, at_risk


def _product_limit(events, at_risk):
    """Kaplan-Meier values after each distinct time.

    Uses the telescoped form S_q = (Y_q - d_q)/Y_1 * prod_{k<q} (Y_k - d_k)/Y_{k+1},
    which is algebraically the usual product but whose factors are exactly 1
    wherever nobody is censored. Uncensored data therefore reproduce the
    empirical survival fraction to one rounding.
    """
    factors = (at_risk[:-1] - events[:-1]) / at_risk[1:]
    carry = np.concatenate(([1.0], np.cumprod(factors)))
    return (at_risk - events) / at_risk[0] * carry


def _group_arrays(data: SurvivalDataset, z, weights):
    if weights is None:
        weights = np.ones(data.n)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (data.n,):
        raise ValueError(f"expected {data.n} weights, got shape {weights.shape}")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and nonnegative")
    mask = np.ones(data.n, bool) if z is None else data.group == z
    if not mask.any():
        raise EmptyGroup(f"no subjects with group={z}")
    if not np.any(weights[mask] > 0):
        raise AllWeightsZero(f"all weights zero in group={z}")
    # zero-weight subjects carry no information and would empty trailing risk sets
    mask &= weights > 0
    return data.time[mask], data.status[mask].astype(float), weights[mask]


def kaplan_meier(data: SurvivalDataset, z: Optional[int] = None,
                 weights=None) -> StepCurve:
    """(Weighted) product-limit estimate for group ``z`` (pooled if None).

    The curve jumps only at times with positive weighted event mass.
    """
    time, status, w = _group_arrays(data, z, weights)
    utimes, events, _, at_risk = _risk_table(time, status, w)
    surv = _product_limit(events, at_risk)
    keep = events > 0
    return StepCurve(utimes[keep], np.clip(surv[keep], 0.0, 1.0), 1.0)


def nelson_aalen(data: SurvivalDataset, z: Optional[int] = None,
                 weights=None) -> StepCurve:
    """Weighted cumulative hazard (Breslow increments within the stratum)."""
    time, status, w = _group_arrays(data, z, weights)
    utimes, events, _, at_risk = _risk_table(time, status, w)
    keep = events > 0
    return StepCurve(utimes[keep], np.cumsum(events[keep] / at_risk[keep]), 0.0)


def weighted_nelson_aalen_surv(data: SurvivalDataset, z: Optional[int] = None,
                               weights=None) -> StepCurve:
    """``exp(-cumulative hazard)``: the survival curve of a weighted Cox model
    stratified on treatment with no covariates."""
    cumhaz = nelson_aalen(data, z, weights)
    return StepCurve(cumhaz.times, np.exp(-cumhaz.values), 1.0)


def censoring_km(data: SurvivalDataset) -> StepCurve:
    """Kaplan-Meier of the censoring distribution, pooled over both groups."""
    return kaplan_meier(data.with_status(1 - data.status), None)


@dataclass(frozen=True, eq=False)
class PseudoValueMatrix:
    grid: np.ndarray
    values: np.ndarray  # (n, len(grid))


def event_grid(data: SurvivalDataset) -> np.ndarray:
    """All distinct event times (the default pseudo-value grid)."""
    return np.unique(data.time[data.status == 1])


def pseudo_values(data: SurvivalDataset, grid=None,
                  method: str = "fast") -> PseudoValueMatrix:
    """Jackknife pseudo-values ``n S(t) - (n-1) S^{-i}(t)`` of the pooled KM.

    ``method="direct"`` recomputes the Kaplan-Meier estimate with each
    subject left out. ``method="fast"`` (default) gets all leave-one-out
    curves at once in closed form; the two agree to about 1e-12.
    """
    grid = event_grid(data) if grid is None else np.asarray(grid, dtype=float)
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid times must be positive and strictly increasing")
    n = data.n
    time = data.time
    status = data.status.astype(float)
    if method == "direct":
        full = kaplan_meier(data)(grid)
        out = np.empty((n, len(grid)))
        keep = np.ones(n, bool)
        for i in range(n):
            keep[i] = False
            utimes, events, _, at_risk = _risk_table(time[keep], status[keep],
                                                     np.ones(n - 1))
            surv = _product_limit(events, at_risk)
            q = np.searchsorted(utimes, grid, side="right") - 1
            loo = np.where(q >= 0, surv[np.maximum(q, 0)], 1.0)
            out[i] = n * full - (n - 1) * loo
            keep[i] = True
        return PseudoValueMatrix(grid, out)
    if method != "fast":
        raise ValueError(f"unknown method {method!r}")
    return PseudoValueMatrix(grid, _pseudo_fast(time, status, grid))


def _pseudo_fast(time, status, grid):
    n = len(time)
    utimes, inv = np.unique(time, return_inverse=True)
    k = len(utimes)
    d = np.bincount(inv, weights=status, minlength=k)
    removed = np.bincount(inv, minlength=k).astype(float)
    y = np.cumsum(removed[::-1])[::-1]
    y_next = np.append(y[1:], 0.0)

    full = _product_limit(d, y)
    q = np.searchsorted(utimes, grid, side="right") - 1  # (m,)
    s_full = np.where(q >= 0, full[np.maximum(q, 0)], 1.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        # factor k when the subject is still at risk after t_k (k < p)
        a = (y - 1 - d) / (y_next - 1)
        # factor k when the subject left before t_k (k > p)
        b = (y - d) / y_next
    a = np.where(np.isfinite(a), a, 0.0)
    b = np.where(np.isfinite(b), b, 0.0)
    a = np.where((y_next - 1) == (y - 1 - d), 1.0, a)
    b = np.where(y_next == (y - d), 1.0, b)
    pa = np.concatenate(([1.0], np.cumprod(a)))  # pa[j] = prod_{k<j} a_k
    pb = np.concatenate(([1.0], np.cumprod(b)))

    p = inv[:, None]  # (n,1) index of each subject's own time
    di = status[:, None]
    qq = q[None, :]
    qs = np.maximum(qq, 0)
    nm1 = n - 1.0

    lead_before = (y[qs] - 1 - d[qs]) / nm1
    surv_before = lead_before * pa[qs]

    yp, dp, ynp = y[p], d[p], y_next[p]
    own = (yp - 1 - dp + di)
    surv_at = own / nm1 * pa[p]

    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.where(ynp > 0, own / ynp, 0.0)
        e = np.where(ynp == own, 1.0, e)
        ratio = np.where(pb[p + 1] != 0, pb[qs] / pb[p + 1], 0.0)
    surv_after = (y[qs] - d[qs]) / nm1 * pa[p] * e * ratio

    loo = np.where(qq < p, surv_before, np.where(qq == p, surv_at, surv_after))
    # subject alone at the last time: removing it empties the risk set, so the
    # leave-one-out curve stays at its previous value
    alone = (yp == 1)
    if np.any(alone):
        prev = np.maximum(p - 1, 0)
        hold = np.where(p > 0, (y[prev] - 1 - d[prev]) / nm1 * pa[prev], 1.0)
        loo = np.where(alone & (qq >= p), hold, loo)
    loo = np.where(qq < 0, 1.0, loo)
    return n * s_full[None, :] - nm1 * loo


def truncate_curve(c: StepCurve) -> StepCurve:
    """Clamp every value (initial included) into [0, 1]."""
    return StepCurve(c.times, np.clip(c.values, 0.0, 1.0),
                     min(max(c.initial, 0.0), 1.0))


def pava_decreasing(values, weights) -> np.ndarray:
    """Weighted L2 projection of ``values`` onto non-increasing sequences
    (pool-adjacent-violators). Weights must be positive."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    means, wts, sizes = [], [], []
    for v, w in zip(values, weights):
        means.append(v)
        wts.append(w)
        sizes.append(1)
        while len(means) > 1 and means[-1] > means[-2]:
            w_new = wts[-1] + wts[-2]
            m_new = (means[-1] * wts[-1] + means[-2] * wts[-2]) / w_new
            s_new = sizes[-1] + sizes[-2]
            del means[-1], wts[-1], sizes[-1]
            means[-1], wts[-1], sizes[-1] = m_new, w_new, s_new
    return np.repeat(means, sizes)


def isotonic_correct(c: StepCurve, horizon: Optional[float] = None) -> StepCurve:
    """Project a curve onto non-increasing step functions in L2([0, horizon]).

    Each segment is weighted by its length inside [0, horizon] (default: the
    last jump time). Segments lying wholly beyond the horizon carry no weight
    and are replaced by a running minimum, which keeps the result monotone.
    """
    vals = c.all_values
    if len(c) == 0:
        return c
    if horizon is None:
        horizon = float(c.times[-1])
    starts = np.concatenate(([0.0], c.times))
    ends = np.append(c.times, np.inf)
    w = np.clip(np.minimum(ends, horizon) - np.minimum(starts, horizon), 0.0, None)
    pos = w > 0
    out = vals.copy()
    if pos.any():
        out[pos] = pava_decreasing(vals[pos], w[pos])
    # zero-weight segments: squeeze between the neighbouring projected values
    idx_pos = np.flatnonzero(pos)
    for j in np.flatnonzero(~pos):
        later = idx_pos[idx_pos > j]
        lo = out[later[0]] if len(later) else -np.inf
        hi = out[j - 1] if j > 0 else np.inf
        out[j] = min(max(vals[j], lo), hi)
    return StepCurve(c.times, out[1:], out[0])
