"""Model fits consumed by the estimators.

* logistic propensity model (Newton / IRLS),
* Cox proportional hazards with Breslow ties and Breslow baseline hazard,
  optionally case-weighted,
* per-time-point regression of pseudo-values on treatment and covariates.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import StepCurve, SurvivalDataset
from .errors import (DimensionMismatch, MonotoneLikelihood, NoConvergence,
                     NoEvents, RankDeficient, SeparationError)
from .nonparam import PseudoValueMatrix

MAX_ITER = 100
MAX_HALVINGS = 20
COEF_LIMIT = 30.0


def _check_rank(design, what):
    if design.shape[0] < design.shape[1] or \
            np.linalg.matrix_rank(design) < design.shape[1]:
        raise RankDeficient(f"{what} design matrix is not of full column rank")


def expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --------------------------------------------------------------------------
# logistic propensity model

@dataclass(frozen=True, eq=False)
class PropensityFit:
    coefficients: np.ndarray  # intercept first
    fitted: np.ndarray        # P(Z=1 | x_i) on the training rows
    covariate_set: tuple
    n_iter: int = 0

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != len(self.covariate_set):
            raise DimensionMismatch(
                f"expected {len(self.covariate_set)} covariates, got {x.shape[1]}")
        return expit(self.coefficients[0] + x @ self.coefficients[1:])

    def prob_of(self, group: np.ndarray) -> np.ndarray:
        """P(Z = z_i | x_i) for each subject's own group."""
        return np.where(group == 1, self.fitted, 1.0 - self.fitted)


def fit_logistic(data: SurvivalDataset, covariate_set: Sequence[str] = ()) -> PropensityFit:
    """Maximum-likelihood logistic regression of treatment on covariates."""
    covariate_set = tuple(covariate_set)
    x = data.columns(covariate_set)
    design = np.column_stack([np.ones(data.n), x])
    _check_rank(design, "propensity")
    y = data.group.astype(float)

    ybar = y.mean()
    beta = np.zeros(design.shape[1])
    beta[0] = np.log(ybar / (1 - ybar))

    def loglik(b):
        eta = design @ b
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    ll = loglik(beta)
    for it in range(1, MAX_ITER + 1):
        p = expit(design @ beta)
        score = design.T @ (y - p)
        if np.max(np.abs(score)) < 1e-8:
            break
        info = design.T @ (design * (p * (1 - p))[:, None])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SeparationError("singular information matrix") from None
        for _ in range(MAX_HALVINGS + 1):
            new = beta + step
            ll_new = loglik(new)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        beta, ll_old, ll = new, ll, ll_new
        if np.max(np.abs(beta)) > COEF_LIMIT:
            raise SeparationError(
                f"coefficient diverged past {COEF_LIMIT}: fitted probabilities degenerate")
        if abs(ll - ll_old) <= 1e-10 * abs(ll):
            break
    else:
        raise NoConvergence(f"logistic fit did not converge in {MAX_ITER} iterations")
    fitted = expit(design @ beta)
    if np.max(np.abs(fitted - y)) < 1e-6 or np.any(fitted <= 0) or np.any(fitted >= 1):
        raise SeparationError("treatment perfectly separated by covariates")
    return PropensityFit(beta, fitted, covariate_set, it)


def iptw_weights(group, prob_treated) -> np.ndarray:
    """1/pi for treated, 1/(1-pi) for controls."""
    return np.where(group == 1, 1.0 / prob_treated, 1.0 / (1.0 - prob_treated))


# --------------------------------------------------------------------------
# Cox proportional hazards

@dataclass(frozen=True, eq=False)
class CoxFit:
    coefficients: np.ndarray      # treatment coefficient first when included
    baseline_cumhaz: StepCurve    # Breslow, at covariates = 0 and z = 0
    covariate_set: tuple
    include_treatment: bool
    weights: Optional[np.ndarray] = None
    loglik: float = np.nan
    score: Optional[np.ndarray] = None
    information: Optional[np.ndarray] = None
    n_iter: int = 0

    @property
    def weighted(self) -> bool:
        return self.weights is not None

    def linear_predictor(self, z, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != len(self.covariate_set):
            raise DimensionMismatch(
                f"expected {len(self.covariate_set)} covariates, got {x.shape[1]}")
        beta = self.coefficients
        if self.include_treatment:
            return beta[0] * np.asarray(z, dtype=float) + x @ beta[1:]
        return x @ beta

    def survival_matrix(self, z, x, times=None) -> np.ndarray:
        """S(t | z, x_i) for every row of ``x`` (rows) and time (columns).

        ``times`` defaults to the baseline jump times.
        """
        times = self.baseline_cumhaz.times if times is None else np.asarray(times, float)
        lam = self.baseline_cumhaz(times)
        risk = np.exp(self.linear_predictor(z, x))
        return np.exp(-np.outer(risk, lam))


def _cox_design(data, covariate_set, include_treatment):
    cols = [data.group.astype(float)[:, None]] if include_treatment else []
    cols.append(data.columns(covariate_set))
    return np.hstack(cols) if cols else np.zeros((data.n, 0))


class _CoxProblem:
    """Sufficient statistics for the Breslow partial likelihood."""

    def __init__(self, time, status, x, w):
        order = np.argsort(time, kind="stable")
        self.time = time[order]
        self.status = status[order].astype(float)
        self.x = x[order]
        self.w = w[order]
        self.order = order
        self.utimes, self.starts = np.unique(self.time, return_index=True)
        ew = self.w * self.status
        self.dw = np.add.reduceat(ew, self.starts)
        self.event_sum = (ew[:, None] * self.x).sum(axis=0)
        self.evt = self.dw > 0

    def _risk_sums(self, beta):
        eta = self.x @ beta
        r = self.w * np.exp(eta)
        xr = self.x * r[:, None]
        xxr = self.x[:, :, None] * xr[:, None, :]
        s0 = np.cumsum(np.add.reduceat(r, self.starts)[::-1])[::-1]
        s1 = np.cumsum(np.add.reduceat(xr, self.starts, axis=0)[::-1], axis=0)[::-1]
        s2 = np.cumsum(np.add.reduceat(xxr, self.starts, axis=0)[::-1], axis=0)[::-1]
        return eta, s0, s1, s2

    def evaluate(self, beta):
        eta, s0, s1, s2 = self._risk_sums(beta)
        e, dw = self.evt, self.dw[self.evt]
        s0, s1, s2 = s0[e], s1[e], s2[e]
        loglik = float(np.sum(self.w * self.status * eta) - np.sum(dw * np.log(s0)))
        xbar = s1 / s0[:, None]
        score = self.event_sum - (dw[:, None] * xbar).sum(axis=0)
        info = np.einsum("j,jab->ab", dw, s2 / s0[:, None, None]) \
            - np.einsum("j,ja,jb->ab", dw, xbar, xbar)
        return loglik, score, info

    def loglik(self, beta):
        eta, s0, _, _ = self._risk_sums(beta)
        return float(np.sum(self.w * self.status * eta)
                     - np.sum(self.dw[self.evt] * np.log(s0[self.evt])))


def cox_partial_loglik(data, covariate_set, beta, include_treatment=True,
                       weights=None) -> float:
    """Breslow log partial likelihood at ``beta`` (for checks and oracles)."""
    x = _cox_design(data, tuple(covariate_set), include_treatment)
    w = np.ones(data.n) if weights is None else np.asarray(weights, float)
    return _CoxProblem(data.time, data.status, x, w).loglik(np.asarray(beta, float))


def fit_cox(data: SurvivalDataset, covariate_set: Sequence[str] = (),
            include_treatment: bool = True, weights=None, tol: float = 1e-10) -> CoxFit:
    """Weighted Cox regression with Breslow ties and Breslow baseline hazard.

    Newton-Raphson with step-halving. Convergence is declared when the score,
    scaled by the total weight, has max-norm below ``tol``.
    """
    covariate_set = tuple(covariate_set)
    if not np.any(data.status == 1):
        raise NoEvents("no events: Cox model is not estimable")
    x = _cox_design(data, covariate_set, include_treatment)
    w = np.ones(data.n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (data.n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite, nonnegative and one per subject")
    # a constant column has a flat partial likelihood; pin its coefficient at 0
    free = np.ptp(x, axis=0) > 0 if data.n else np.zeros(x.shape[1], bool)
    full_x = x
    x = x[:, free]
    p = x.shape[1]
    if p:
        _check_rank(x - x.mean(axis=0), "Cox")

    center = (w @ x) / w.sum() if p else np.zeros(0)
    prob = _CoxProblem(data.time, data.status, x - center, w)
    scale = w.sum()
    beta = np.zeros(p)
    ll, score, info = prob.evaluate(beta)
    n_iter = 0
    while p and np.max(np.abs(score)) / scale >= tol:
        n_iter += 1
        if n_iter > MAX_ITER:
            raise NoConvergence(f"Cox fit did not converge in {MAX_ITER} iterations")
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise MonotoneLikelihood("singular information matrix") from None
        for _ in range(MAX_HALVINGS + 1):
            new = beta + step
            ll_new = prob.loglik(new)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        else:
            raise NoConvergence("step-halving failed to increase the partial likelihood")
        if np.max(np.abs(new)) > COEF_LIMIT:
            raise MonotoneLikelihood(
                f"coefficient diverged past {COEF_LIMIT}: partial likelihood is monotone")
        small_step = np.max(np.abs(new - beta)) < 1e-13
        beta = new
        ll, score, info = prob.evaluate(beta)
        if small_step:
            break

    full_beta = np.zeros(full_x.shape[1])
    full_beta[free] = beta
    if p:
        score_full = np.zeros_like(full_beta)
        score_full[free] = score
        info_full = np.zeros((len(full_beta), len(full_beta)))
        info_full[np.ix_(free, free)] = info
        score, info = score_full, info_full
    beta = full_beta

    # Breslow baseline at x = 0 (undo centering)
    eta = full_x @ beta
    r = w * np.exp(eta)
    rs = r[prob.order]
    s0 = np.cumsum(np.add.reduceat(rs, prob.starts)[::-1])[::-1]
    e = prob.evt
    cumhaz = StepCurve(prob.utimes[e], np.cumsum(prob.dw[e] / s0[e]), 0.0)
    return CoxFit(beta, cumhaz, covariate_set, include_treatment,
                  None if weights is None else w, ll, score, info, n_iter)


def predict_cox_survival(fit: CoxFit, z, x, t) -> float:
    """S(t | z, x) = exp(-Lambda_0(t) exp(lp)) for a single subject."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if t < 0:
        raise ValueError("t must be nonnegative")
    return float(fit.survival_matrix(z, x, [t])[0, 0])


# --------------------------------------------------------------------------
# pseudo-value regression

LINKS = ("identity", "cloglog")
# the complementary log-log mean is 1 and 0 to double precision outside this range
CLOGLOG_ETA = (-40.0, 5.0)


@dataclass(frozen=True, eq=False)
class PVRegressionFit:
    grid: np.ndarray
    coefficients: np.ndarray  # (2 + p, m): intercept, Z, covariates
    covariate_set: tuple
    link: str = "identity"

    def linear_predictor(self, z, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != len(self.covariate_set):
            raise DimensionMismatch(
                f"expected {len(self.covariate_set)} covariates, got {x.shape[1]}")
        z = np.broadcast_to(np.asarray(z, dtype=float), (x.shape[0],))
        design = np.column_stack([np.ones(x.shape[0]), z, x])
        return design @ self.coefficients

    def predict(self, z, x) -> np.ndarray:
        """Predicted survival, one row per subject and one column per grid time."""
        eta = self.linear_predictor(z, x)
        if self.link == "identity":
            return eta
        return np.exp(-np.exp(np.clip(eta, *CLOGLOG_ETA)))


def fit_pv_regression(pv: PseudoValueMatrix, data: SurvivalDataset,
                      covariate_set: Sequence[str] = (), link: str = "identity",
                      tol: float = 1e-8) -> PVRegressionFit:
    """Regress pseudo-values on (1, Z, X) separately at each grid time.

    The identity link is ordinary least squares per time point, i.e. an
    estimating-equation fit with independence working correlation. The
    complementary log-log link, log(-log S) linear in (1, Z, X), is fitted by
    damped Gauss-Newton with Gaussian working variance.
    """
    covariate_set = tuple(covariate_set)
    if link not in LINKS:
        raise ValueError(f"unknown link {link!r}; choose from {LINKS}")
    if pv.values.shape[0] != data.n:
        raise DimensionMismatch("pseudo-value rows do not match the dataset")
    if len(pv.grid) == 0:
        raise ValueError("empty pseudo-value grid")
    design = np.column_stack([np.ones(data.n), data.group.astype(float),
                              data.columns(covariate_set)])
    _check_rank(design, "pseudo-value regression")
    theta = pv.values
    if link == "identity":
        q, r = np.linalg.qr(design)
        coef = np.linalg.solve(r, q.T @ theta)
    else:
        coef = _fit_cloglog(design, theta, tol)
    return PVRegressionFit(np.array(pv.grid), coef, covariate_set, link)


def _fit_cloglog(design, theta, tol):
    # Gaussian working variance (nonlinear least squares), the usual choice for
    # pseudo-values, which leave [0, 1]; damped Newton per column.
    n, k = design.shape
    m = theta.shape[1]
    mean = np.clip(theta.mean(axis=0), 1e-3, 1 - 1e-3)
    coef = np.zeros((k, m))
    coef[0] = np.log(-np.log(mean))
    damp = np.full(m, 1e-3)
    eye = np.eye(k)

    def evaluate(c):
        eta = np.clip(design @ c, *CLOGLOG_ETA)
        mu = np.exp(-np.exp(eta))
        resid = theta - mu
        return eta, mu, resid, 0.5 * np.sum(resid * resid, axis=0)

    eta, mu, resid, loss = evaluate(coef)
    for _ in range(MAX_ITER):
        e = np.exp(eta)
        dmu = -e * mu                                      # d mu / d eta
        d2mu = dmu * (1.0 - e)
        grad = design.T @ (dmu * resid)
        active = np.max(np.abs(grad), axis=0) / n >= tol
        if not active.any():
            return coef
        # full Newton Hessian; Gauss-Newton alone oscillates when one residual is large
        curv = dmu * dmu - resid * d2mu
        jtj = np.einsum("ia,it,ib->tab", design, curv, design)
        scale = np.einsum("ia,it->ta", design * design, dmu * dmu) + 1e-300
        for _ in range(MAX_HALVINGS):
            lhs = jtj + damp[:, None, None] * scale[:, :, None] * eye
            step = np.linalg.solve(lhs, grad.T[:, :, None])[:, :, 0].T
            trial = coef + step
            t_eta, t_mu, t_resid, t_loss = evaluate(trial)
            better = (t_loss <= loss) & active
            coef[:, better] = trial[:, better]
            eta[:, better], mu[:, better] = t_eta[:, better], t_mu[:, better]
            resid[:, better], loss[better] = t_resid[:, better], t_loss[better]
            damp = np.where(better, np.maximum(damp / 10, 1e-12), damp)
            damp = np.where(active & ~better, damp * 10, damp)
            active &= ~better
            if not active.any():
                break
    raise NoConvergence("complementary log-log pseudo-value regression did not converge")
