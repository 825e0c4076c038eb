"""Confounder-adjusted survival curve estimators.

Every method maps a dataset plus covariate sets to one step curve per
treatment group. :func:`estimate` is the uniform entry point; it fills the
not-monotone / out-of-bounds diagnostics and optionally applies the
truncation + isotonic corrections.

Fits that several methods share (propensity model, Cox model, pseudo-values,
censoring distribution) are memoised on an :class:`EstimationContext`, so
running all methods on one dataset fits each model once.
"""

import enum
import warnings
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .dataset import MONOTONE_TOL, StepCurve, SurvivalDataset
from .errors import (CensoringSupport, HullViolation, MissingCovariateSet,
                     NoConvergence, NoMatches)
from .models import (fit_cox, fit_logistic, fit_pv_regression, iptw_weights)
from .nonparam import (censoring_km, event_grid, isotonic_correct, kaplan_meier,
                       pseudo_values, truncate_curve, weighted_nelson_aalen_surv)

EXTREME_WEIGHT = 100.0


class ExtremeWeightWarning(UserWarning):
    pass


class MethodId(str, enum.Enum):
    KM = "KM"
    G_FORMULA = "G_FORMULA"
    G_FORMULA_PV = "G_FORMULA_PV"
    IPTW_KM = "IPTW_KM"
    IPTW_HZ = "IPTW_HZ"
    IPTW_PV = "IPTW_PV"
    MATCHING = "MATCHING"
    EL = "EL"
    AIPTW = "AIPTW"
    AIPTW_PV = "AIPTW_PV"
    G_FORMULA_IPTW = "G_FORMULA_IPTW"

    @classmethod
    def parse(cls, name: str) -> "MethodId":
        key = name.strip().upper().replace("-", "_").replace(" ", "_")
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown method {name!r}; choose from "
                             f"{', '.join(m.value for m in cls)}") from None


ADJUSTED_METHODS = tuple(m for m in MethodId if m is not MethodId.KM)
NEEDS_OUTCOME = frozenset({MethodId.G_FORMULA, MethodId.G_FORMULA_PV, MethodId.AIPTW,
                           MethodId.AIPTW_PV, MethodId.G_FORMULA_IPTW})
NEEDS_TREATMENT = frozenset({MethodId.IPTW_KM, MethodId.IPTW_HZ, MethodId.IPTW_PV,
                             MethodId.MATCHING, MethodId.AIPTW, MethodId.AIPTW_PV,
                             MethodId.G_FORMULA_IPTW})
# methods whose output is a proper survival curve by construction
ALWAYS_PROPER = frozenset({MethodId.KM, MethodId.IPTW_KM, MethodId.IPTW_HZ,
                           MethodId.MATCHING, MethodId.EL, MethodId.G_FORMULA,
                           MethodId.G_FORMULA_IPTW})
PV_METHODS = frozenset({MethodId.G_FORMULA_PV, MethodId.IPTW_PV, MethodId.AIPTW_PV})


@dataclass(frozen=True, eq=False)
class AdjustedCurves:
    method: MethodId
    curve_z0: StepCurve
    curve_z1: StepCurve
    nm_flag: Tuple[bool, bool]
    oob_flag: Tuple[bool, bool]
    corrected: bool = False

    def curve(self, z: int) -> StepCurve:
        return self.curve_z1 if z == 1 else self.curve_z0

    @property
    def curves(self):
        return self.curve_z0, self.curve_z1


def diagnose(curve: StepCurve, tol: float = MONOTONE_TOL) -> Tuple[bool, bool]:
    """(not monotone, out of bounds) flags for one curve."""
    return not curve.is_monotone(tol), not curve.is_bounded(tol)


def correct_curve(curve: StepCurve, horizon: Optional[float] = None) -> StepCurve:
    """Truncate to [0, 1], then isotonic regression."""
    return isotonic_correct(truncate_curve(curve), horizon)


class EstimationContext:
    """Memoised model fits for one (canonically ordered) dataset."""

    def __init__(self, data: SurvivalDataset, grid=None, pv_link: str = "identity",
                 propensity=None, trim: Optional[float] = None):
        if trim is not None and not 0.0 <= trim < 0.5:
            raise ValueError("trim must lie in [0, 0.5)")
        self.data = data
        self.trim = trim
        self.grid = event_grid(data) if grid is None else np.asarray(grid, float)
        self.pv_link = pv_link
        self._propensity_override = (None if propensity is None
                                     else np.asarray(propensity, dtype=float))
        self._cache: Dict = {}

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def prob_treated(self, covs) -> np.ndarray:
        """P(Z=1 | x_i) from the logistic model (or the injected override)."""
        if self._propensity_override is not None:
            ps = self._propensity_override
        else:
            covs = tuple(covs)
            ps = self._memo(("ps", covs), lambda: fit_logistic(self.data, covs).fitted)
        if self.trim:
            ps = np.clip(ps, self.trim, 1.0 - self.trim)
        return ps

    def weights(self, covs) -> np.ndarray:
        def make():
            w = iptw_weights(self.data.group, self.prob_treated(covs))
            if w.max() > EXTREME_WEIGHT:
                warnings.warn(f"largest IPTW weight {w.max():.1f} exceeds "
                              f"{EXTREME_WEIGHT:g}", ExtremeWeightWarning, stacklevel=3)
            return w
        key = ("w", None if self._propensity_override is not None else tuple(covs))
        return self._memo(key, make)

    def cox(self, covs, weight_covs=None):
        covs = tuple(covs)
        key = ("cox", covs, None if weight_covs is None else tuple(weight_covs))

        def make():
            w = None if weight_covs is None else self.weights(weight_covs)
            return fit_cox(self.data, covs, include_treatment=True, weights=w)
        return self._memo(key, make)

    def pseudo(self):
        return self._memo(("pv",), lambda: pseudo_values(self.data, self.grid))

    def pv_fit(self, covs):
        covs = tuple(covs)
        return self._memo(("pvfit", covs, self.pv_link),
                          lambda: fit_pv_regression(self.pseudo(), self.data, covs,
                                                    self.pv_link))

    def censoring(self) -> StepCurve:
        return self._memo(("cens",), lambda: censoring_km(self.data))


def _ctx(data, ctx, **kw) -> EstimationContext:
    return ctx if ctx is not None else EstimationContext(data, **kw)


# --------------------------------------------------------------------------
# outcome-model methods

def standardize_cox(fit, x, z) -> StepCurve:
    """Average of the Cox-predicted survival curves of all rows of ``x`` with
    treatment set to ``z``."""
    surv = fit.survival_matrix(z, x)
    return StepCurve(fit.baseline_cumhaz.times, surv.mean(axis=0), 1.0)


def est_g_formula(data, outcome_covs, weights_covs=None, *, ctx=None):
    """G-computation with a Cox model on Z + ``outcome_covs``.

    With ``weights_covs`` the Cox model is fitted with inverse probability of
    treatment weights from a propensity model on those covariates (the
    G-Formula + IPTW variant).
    """
    ctx = _ctx(data, ctx)
    fit = ctx.cox(outcome_covs, weights_covs)
    x = ctx.data.columns(tuple(outcome_covs))
    return standardize_cox(fit, x, 0), standardize_cox(fit, x, 1)


def est_g_formula_iptw(data, outcome_covs, treatment_covs, *, ctx=None):
    return est_g_formula(data, outcome_covs, treatment_covs, ctx=ctx)


def est_g_formula_pv(data, outcome_covs, grid=None, *, ctx=None):
    ctx = _ctx(data, ctx, grid=grid)
    fit = ctx.pv_fit(outcome_covs)
    x = ctx.data.columns(tuple(outcome_covs))
    return tuple(StepCurve(fit.grid, fit.predict(z, x).mean(axis=0), 1.0) for z in (0, 1))


# --------------------------------------------------------------------------
# treatment-model methods

def est_iptw_km(data, treatment_covs, *, ctx=None):
    ctx = _ctx(data, ctx)
    w = ctx.weights(treatment_covs)
    return tuple(kaplan_meier(ctx.data, z, w) for z in (0, 1))


def est_iptw_hz(data, treatment_covs, *, ctx=None):
    ctx = _ctx(data, ctx)
    w = ctx.weights(treatment_covs)
    return tuple(weighted_nelson_aalen_surv(ctx.data, z, w) for z in (0, 1))


def est_iptw_pv(data, treatment_covs, grid=None, *, ctx=None):
    """Normalised (Hajek) IPTW-weighted mean of the pseudo-values per group."""
    ctx = _ctx(data, ctx, grid=grid)
    w = ctx.weights(treatment_covs)
    theta = ctx.pseudo().values
    out = []
    for z in (0, 1):
        wz = np.where(ctx.data.group == z, w, 0.0)
        out.append(StepCurve(ctx.grid, wz @ theta / wz.sum(), 1.0))
    return tuple(out)


def _nearest(query, pool_ps):
    """For each query value, the indices (into ``pool_ps``) of its nearest
    neighbours and the distance. Equidistant neighbours are all returned."""
    order = np.argsort(pool_ps, kind="stable")
    sorted_ps = pool_ps[order]
    pos = np.searchsorted(sorted_ps, query)
    left = sorted_ps[np.maximum(pos - 1, 0)]
    right = sorted_ps[np.minimum(pos, len(sorted_ps) - 1)]
    dl = np.where(pos > 0, query - left, np.inf)
    dr = np.where(pos < len(sorted_ps), right - query, np.inf)
    dist = np.minimum(dl, dr)
    result = []
    for q, d, l_ok, r_ok, lv, rv in zip(query, dist, dl == dist, dr == dist, left, right):
        idx = []
        if l_ok:
            idx.extend(range(np.searchsorted(sorted_ps, lv, "left"),
                             np.searchsorted(sorted_ps, lv, "right")))
        if r_ok and not (l_ok and lv == rv):
            idx.extend(range(np.searchsorted(sorted_ps, rv, "left"),
                             np.searchsorted(sorted_ps, rv, "right")))
        result.append(order[idx])
    return result, dist


def match_greedy(ps, group, caliper=None):
    """1:1 greedy nearest-neighbour matching without replacement.

    Treated subjects are processed in descending propensity order (ties by
    row order); each takes the closest still-unused control (ties by row
    order). Returns a list of (treated_index, control_index) pairs.
    """
    ps = np.asarray(ps, dtype=float)
    treated = np.flatnonzero(group == 1)
    controls = np.flatnonzero(group == 0)
    treated = treated[np.argsort(-ps[treated], kind="stable")]
    available = np.ones(len(controls), bool)
    pairs = []
    for t in treated:
        if not available.any():
            break
        dist = np.where(available, np.abs(ps[controls] - ps[t]), np.inf)
        j = int(np.argmin(dist))
        if caliper is not None and dist[j] > caliper:
            continue
        available[j] = False
        pairs.append((int(t), int(controls[j])))
    if not pairs:
        raise NoMatches("no treated subject has a control within the caliper")
    return pairs


def match_weights_ate(ps, group, caliper=None):
    """Nearest-neighbour matching with replacement in both directions.

    Every subject is matched to the closest subject(s) of the other group
    (equidistant neighbours share the match). Returns per-subject frequency
    weights of the matched sample: 1 for each subject kept as itself plus
    the match mass it received. Subjects with no partner inside the caliper
    are dropped.
    """
    ps = np.asarray(ps, dtype=float)
    w = np.zeros(len(ps))
    for z in (0, 1):
        own = np.flatnonzero(group == z)
        other = np.flatnonzero(group != z)
        neighbours, dist = _nearest(ps[own], ps[other])
        for i, nb, d in zip(own, neighbours, dist):
            if caliper is not None and d > caliper:
                continue
            w[i] += 1.0
            w[other[nb]] += 1.0 / len(nb)
    if not np.any(w[group == 1] > 0) or not np.any(w[group == 0] > 0):
        raise NoMatches("caliper excludes every match")
    return w


def est_matching(data, treatment_covs, caliper=None, estimand="ATE", *, ctx=None):
    """Propensity score matching followed by a stratified Kaplan-Meier.

    ``caliper`` is in units of the standard deviation of the estimated
    propensity score. ``estimand="ATE"`` matches both ways with replacement;
    ``"greedy"`` is 1:1 greedy matching of treated to controls without
    replacement.
    """
    ctx = _ctx(data, ctx)
    ps = ctx.prob_treated(treatment_covs)
    group = ctx.data.group
    cal = None if caliper is None else caliper * np.std(ps)
    if estimand == "ATE":
        w = match_weights_ate(ps, group, cal)
    elif estimand == "greedy":
        w = np.zeros(ctx.data.n)
        for t, c in match_greedy(ps, group, cal):
            w[t] += 1.0
            w[c] += 1.0
    else:
        raise ValueError(f"unknown matching estimand {estimand!r}")
    return tuple(kaplan_meier(ctx.data, z, w) for z in (0, 1))


def _moment_columns(x, moments):
    cols = [x]
    for k in range(2, moments + 1):
        cont = [j for j in range(x.shape[1]) if len(np.unique(x[:, j])) > 2]
        if cont:
            cols.append(x[:, cont] ** k)
    return np.hstack(cols)


def el_weights(x_group, target, tol=1e-12, max_iter=100):
    """Empirical likelihood weights for one group.

    Maximises sum(log p_i) subject to sum(p_i) = 1 and sum(p_i x_i) = target.
    The solution is p_i = 1 / (m (1 + eta'(x_i - target))) with eta from a
    damped Newton method on the convex dual.
    """
    u = np.atleast_2d(np.asarray(x_group, float)) - np.asarray(target, float)
    m, q = u.shape
    if q == 0:
        return np.full(m, 1.0 / m)
    eta = np.zeros(q)

    def objective(e):
        arg = 1.0 + u @ e
        if np.any(arg <= 0):
            return np.inf
        return -np.sum(np.log(arg))

    f = objective(eta)
    for _ in range(max_iter):
        arg = 1.0 + u @ eta
        grad = -(u / arg[:, None]).sum(axis=0)
        if np.max(np.abs(grad)) / m < tol:
            break
        hess = (u / arg[:, None]).T @ (u / arg[:, None])
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise HullViolation("degenerate covariates: singular dual Hessian") from None
        t = 1.0
        for _ in range(60):
            f_new = objective(eta + t * step)
            # inside the quadratic region the decrease is below rounding of f,
            # so a feasible full step is taken as is
            if f_new <= f + 1e-4 * t * (grad @ step) or (
                    np.isfinite(f_new) and -(grad @ step) < 1e-10):
                break
            t *= 0.5
        else:
            break
        eta = eta + t * step
        f = f_new
    arg = 1.0 + u @ eta
    grad = -(u / arg[:, None]).sum(axis=0)
    p = 1.0 / (m * arg)
    # an unbounded dual (target outside the hull) also drives grad to 0,
    # so check the primal constraints as well
    feasible = (np.all(arg > 0) and abs(p.sum() - 1.0) < 1e-8
                and np.max(np.abs(p @ u)) < 1e-8 * max(1.0, np.max(np.abs(u))))
    if not feasible or np.max(np.abs(grad)) / m > 1e-9:
        if not _in_hull(u):
            raise HullViolation("target covariate mean lies outside the convex "
                                "hull of the group (positivity violated)")
        raise NoConvergence("empirical likelihood dual did not converge")
    return p / p.sum()


def _in_hull(u):
    from scipy.optimize import linprog

    m = u.shape[0]
    res = linprog(np.zeros(m), A_eq=np.vstack([np.ones(m), u.T]),
                  b_eq=np.r_[1.0, np.zeros(u.shape[1])], bounds=(1e-9, None),
                  method="highs")
    return res.status == 0


def est_el(data, balance_covs, moments=1, *, ctx=None):
    """Empirical likelihood reweighting of each group to the pooled covariate
    means (plus higher moments of continuous covariates when ``moments`` > 1),
    then a weighted Kaplan-Meier per group."""
    ctx = _ctx(data, ctx)
    x = _moment_columns(ctx.data.columns(tuple(balance_covs)), moments)
    target = x.mean(axis=0)
    w = np.zeros(ctx.data.n)
    for z in (0, 1):
        idx = ctx.data.group == z
        w[idx] = el_weights(x[idx], target)
    return tuple(kaplan_meier(ctx.data, z, w) for z in (0, 1))


# --------------------------------------------------------------------------
# doubly robust methods

def _augmented(outcome_pred, response, indicator, prob):
    """mean_i [ m_i + I_i / pi_i * (y_i - m_i) ] column-wise."""
    resid = (indicator / prob)[:, None] * (response - outcome_pred)
    return (outcome_pred + resid).mean(axis=0)


def ipcw_response(data, times, cens: StepCurve) -> np.ndarray:
    """I(T_i > t) / G(t-) for every subject (rows) and time (columns)."""
    idx = np.searchsorted(cens.times, times, side="left")
    g_left = np.r_[cens.initial, cens.values][idx]
    if np.any(g_left <= 0):
        bad = times[np.argmax(g_left <= 0)]
        raise CensoringSupport(f"censoring survival reaches 0 before t={bad:g}")
    return (data.time[:, None] > times[None, :]) / g_left[None, :]


def aipcw_response(data, times, cens: StepCurve, fit, z) -> np.ndarray:
    """Censoring-augmented response for the subjects in group ``z``.

    phi_i(t) = I(T_i > t)/G(t) + sum_{u <= t} S(t|z,x_i)/S(u|z,x_i) dM^C_i(u)/G(u)

    with dM^C_i(u) = dN^C_i(u) - I(T_i >= u) dLambda_C(u) at the censoring
    jump times u and S(.|z,x) from the Cox fit. Rows of other groups are 0.
    With S = 1 an uncensored-by-t subject gets exactly 1, so the term only
    removes the noise of the weights.
    """
    rows = np.flatnonzero(data.group == z)
    out = np.zeros((data.n, len(times)))
    if len(times) == 0 or len(rows) == 0:
        return out
    g_t = cens(times)
    if np.any(g_t <= 0):
        bad = times[np.argmax(g_t <= 0)]
        raise CensoringSupport(f"censoring survival reaches 0 at t={bad:g}")
    u = cens.times[cens.times <= times[-1]]
    g_u = cens.values[:len(u)]
    g_before = np.r_[cens.initial, cens.values][:len(u)]
    dlam = 1.0 - g_u / g_before
    t_obs, d_obs = data.time[rows], data.status[rows]
    x = data.columns(fit.covariate_set)[rows]
    risk = np.exp(fit.linear_predictor(z, x))
    base_u = fit.baseline_cumhaz(u)
    base_t = fit.baseline_cumhaz(times)

    # C_i(k) = sum_{k' <= k} S(u_k|x_i)/S(u_k'|x_i) h_ik', run forward with
    # factors <= 1 so no survival ratio can overflow
    acc = np.zeros(len(rows))
    prev = 0.0
    at_u = np.empty((len(u), len(rows)))
    for k in range(len(u)):
        acc *= np.exp(-risk * (base_u[k] - prev))
        prev = base_u[k]
        jump = ((t_obs == u[k]) & (d_obs == 0)).astype(float)
        at_risk = (t_obs >= u[k]).astype(float)
        acc += (jump - at_risk * dlam[k]) / g_u[k]
        at_u[k] = acc
    k_of_t = np.searchsorted(u, times, side="right") - 1
    aug = np.zeros((len(rows), len(times)))
    has = k_of_t >= 0
    if np.any(has):
        kk = k_of_t[has]
        decay = np.exp(-np.outer(risk, base_t[has] - base_u[kk]))
        aug[:, has] = at_u[kk].T * decay
    out[rows] = (t_obs[:, None] > times[None, :]) / g_t[None, :] + aug
    return out


def est_aiptw(data, outcome_covs, treatment_covs, *, ctx=None, outcome_pred=None,
              censoring="augmented"):
    """Augmented IPTW for survival curves.

    S_z(t) = mean_i [ S(t|z,x_i) + I(Z_i=z)/P(Z=z|x_i) * (Y_i(t) - S(t|z,x_i)) ]

    evaluated at every observed event time, with S(t|z,x) from a Cox model.
    ``censoring="augmented"`` (default) uses the censoring-augmented response
    of :func:`aipcw_response`; ``"ipcw"`` uses I(T_i>t)/G(t-) alone.
    ``outcome_pred`` may supply the two (n x m) conditional survival
    matrices directly, in which case the plain IPCW response is used.
    """
    if censoring not in ("augmented", "ipcw"):
        raise ValueError(f"censoring must be 'augmented' or 'ipcw', got {censoring!r}")
    ctx = _ctx(data, ctx)
    d = ctx.data
    times = event_grid(d)
    fit = None
    if outcome_pred is None:
        fit = ctx.cox(outcome_covs)
        x = d.columns(tuple(outcome_covs))
        outcome_pred = [fit.survival_matrix(z, x, times) for z in (0, 1)]
    if fit is None or censoring == "ipcw":
        y = ipcw_response(d, times, ctx.censoring())
        responses = (y, y)
    else:
        responses = tuple(aipcw_response(d, times, ctx.censoring(), fit, z) for z in (0, 1))
    pi1 = ctx.prob_treated(treatment_covs)
    out = []
    for z in (0, 1):
        prob = pi1 if z == 1 else 1.0 - pi1
        est = _augmented(outcome_pred[z], responses[z], (d.group == z).astype(float), prob)
        out.append(StepCurve(times, est, 1.0))
    return tuple(out)


def est_aiptw_pv(data, outcome_covs, treatment_covs, grid=None, *, ctx=None,
                 outcome_pred=None):
    ctx = _ctx(data, ctx, grid=grid)
    d = ctx.data
    theta = ctx.pseudo().values
    if outcome_pred is None:
        fit = ctx.pv_fit(outcome_covs)
        x = d.columns(tuple(outcome_covs))
        outcome_pred = [fit.predict(z, x) for z in (0, 1)]
    pi1 = ctx.prob_treated(treatment_covs)
    out = []
    for z in (0, 1):
        prob = pi1 if z == 1 else 1.0 - pi1
        est = _augmented(outcome_pred[z], theta, (d.group == z).astype(float), prob)
        out.append(StepCurve(ctx.grid, est, 1.0))
    return tuple(out)


# --------------------------------------------------------------------------

def _require(labels, what, method, data):
    if labels is None:
        raise MissingCovariateSet(f"{method.value} needs {what} covariates")
    missing = [lab for lab in labels if lab not in data.covariate_names]
    if missing:
        raise MissingCovariateSet(
            f"{method.value}: unknown covariate(s) {', '.join(map(repr, missing))}")
    return tuple(labels)


def estimate(method, data: SurvivalDataset, outcome_covs: Optional[Sequence[str]] = None,
             treatment_covs: Optional[Sequence[str]] = None, grid=None,
             apply_corrections: bool = False, *, caliper: Optional[float] = None,
             matching: str = "ATE", pv_link: str = "identity", el_moments: int = 1,
             propensity=None, trim: Optional[float] = None,
             aiptw_censoring: str = "augmented",
             ctx: Optional[EstimationContext] = None) -> AdjustedCurves:
    """Run one adjustment method and return both group curves with diagnostics.

    EL balances the ``treatment_covs`` (all covariates when not given).
    ``propensity`` overrides the fitted P(Z=1|x) (one value per input row);
    ``trim`` clips propensities symmetrically into [trim, 1 - trim]
    (no trimming by default). ``aiptw_censoring`` selects the AIPTW response
    ("augmented" or "ipcw", see :func:`est_aiptw`).
    Passing the same ``ctx`` across calls on one dataset reuses model fits;
    it must have been built with :func:`make_context`.
    """
    method = MethodId(method) if not isinstance(method, MethodId) else method
    if method in NEEDS_OUTCOME:
        outcome_covs = _require(outcome_covs, "outcome", method, data)
    if method in NEEDS_TREATMENT and propensity is None:
        treatment_covs = _require(treatment_covs, "treatment", method, data)
    if method is MethodId.EL:
        treatment_covs = (data.covariate_names if treatment_covs is None
                          else _require(treatment_covs, "balancing", method, data))
    if ctx is None:
        ctx = make_context(data, grid=grid, pv_link=pv_link, propensity=propensity,
                           trim=trim)
    d = ctx.data
    tc = treatment_covs if treatment_covs is not None else ()

    if method is MethodId.KM:
        curves = kaplan_meier(d, 0), kaplan_meier(d, 1)
    elif method is MethodId.G_FORMULA:
        curves = est_g_formula(d, outcome_covs, ctx=ctx)
    elif method is MethodId.G_FORMULA_IPTW:
        curves = est_g_formula_iptw(d, outcome_covs, tc, ctx=ctx)
    elif method is MethodId.G_FORMULA_PV:
        curves = est_g_formula_pv(d, outcome_covs, ctx=ctx)
    elif method is MethodId.IPTW_KM:
        curves = est_iptw_km(d, tc, ctx=ctx)
    elif method is MethodId.IPTW_HZ:
        curves = est_iptw_hz(d, tc, ctx=ctx)
    elif method is MethodId.IPTW_PV:
        curves = est_iptw_pv(d, tc, ctx=ctx)
    elif method is MethodId.MATCHING:
        curves = est_matching(d, tc, caliper, matching, ctx=ctx)
    elif method is MethodId.EL:
        curves = est_el(d, tc, el_moments, ctx=ctx)
    elif method is MethodId.AIPTW:
        curves = est_aiptw(d, outcome_covs, tc, ctx=ctx, censoring=aiptw_censoring)
    elif method is MethodId.AIPTW_PV:
        curves = est_aiptw_pv(d, outcome_covs, tc, ctx=ctx)
    else:  # pragma: no cover
        raise ValueError(method)

    flags = [diagnose(c) for c in curves]
    if apply_corrections:
        curves = tuple(correct_curve(c) for c in curves)
    return AdjustedCurves(method, curves[0], curves[1],
                          (flags[0][0], flags[1][0]), (flags[0][1], flags[1][1]),
                          apply_corrections)


def make_context(data: SurvivalDataset, grid=None, pv_link: str = "identity",
                 propensity=None, trim: Optional[float] = None) -> EstimationContext:
    """Canonically order ``data`` and wrap it for memoised estimation."""
    order = data.canonical_order()
    d = data.subset(order)
    if propensity is not None:
        propensity = np.broadcast_to(np.asarray(propensity, float), (data.n,))[order]
    return EstimationContext(d, grid=grid, pv_link=pv_link, propensity=propensity,
                             trim=trim)


def estimate_many(methods, data, outcome_covs=None, treatment_covs=None, grid=None,
                  apply_corrections=False, **kw) -> Dict[MethodId, AdjustedCurves]:
    """Run several methods on one dataset, sharing model fits."""
    ctx = make_context(data, grid=grid, pv_link=kw.pop("pv_link", "identity"),
                       propensity=kw.pop("propensity", None), trim=kw.pop("trim", None))
    return {MethodId(m): estimate(m, data, outcome_covs, treatment_covs, grid,
                                  apply_corrections, ctx=ctx, **kw)
            for m in methods}
