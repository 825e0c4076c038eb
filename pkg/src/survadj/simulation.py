"""Monte-Carlo comparison engine.

A large super-population with both potential survival times is generated
once; it defines the true counterfactual curves by simple proportions.
Each replication samples from it without replacement, draws treatment from
the true propensity, keeps the matching potential time, adds random Weibull
censoring and runs every requested method under every requested scenario.
Performance is summarised by the integrated bias and squared error of each
estimated curve over [0, tau].
"""

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from .dataset import (MONOTONE_TOL, StepCurve, SurvivalDataset, integrate_curve,
                      integrate_product, integrate_square, validate_dataset)
from .errors import (DegenerateTreatedFraction, NoEventsInGroup, SampleTooLarge,
                     SurvAdjError)
from .estimators import (EstimationContext, MethodId, correct_curve, diagnose,
                         estimate, make_context)

log = logging.getLogger(__name__)

COVARIATES = ("X1", "X2", "X3", "X4", "X5", "X6")
Q_LEVEL = 0.05  # tau uses the time where the true survival first drops to 5 %


@dataclass(frozen=True)
class CovariateSpec:
    kind: str          # "bernoulli" or "normal"
    a: float           # p, or mean
    b: float = 1.0     # sd (normal only)

    def draw(self, rng, size):
        if self.kind == "bernoulli":
            return (rng.random(size) < self.a).astype(float)
        if self.kind == "normal":
            return rng.normal(self.a, self.b, size)
        raise ValueError(f"unknown covariate distribution {self.kind!r}")

    def __str__(self):
        if self.kind == "bernoulli":
            return f"bernoulli({self.a:g})"
        return f"normal({self.a:g},{self.b:g})"


def _default_covariates():
    return {"X1": CovariateSpec("normal", 0.0, 1.0),
            "X2": CovariateSpec("bernoulli", 0.5),
            "X3": CovariateSpec("normal", 0.0, 1.0),
            "X4": CovariateSpec("normal", 0.0, 1.0),
            "X5": CovariateSpec("normal", 0.0, 1.0),
            "X6": CovariateSpec("normal", 0.0, 1.0)}


def _default_beta_outcome():
    b = math.log(1.8)
    return {"X1": b, "X2": b, "X4": b, "X5": b, "Z": -1.0}


def _default_beta_treatment():
    # 1.0 on the Bernoulli(0.5) X2 makes the linear predictor symmetric about 0
    return {"X2": 1.0, "X3": math.log(2), "X5": math.log(2), "X6": math.log(2)}


@dataclass(frozen=True)
class DGPConfig:
    """Data-generating process.

    The outcome follows a Cox model with Weibull baseline, cumulative hazard
    ``lam * t**gamma * exp(lp)``; treatment follows a logistic model.
    Coefficient dictionaries are keyed by covariate name (``"Z"`` for the
    treatment effect in ``beta_outcome``); absent names mean 0.
    """

    covariate_specs: Mapping[str, CovariateSpec] = field(default_factory=_default_covariates)
    beta_outcome: Mapping[str, float] = field(default_factory=_default_beta_outcome)
    beta_treatment: Mapping[str, float] = field(default_factory=_default_beta_treatment)
    treatment_intercept: float = -0.5
    event_weibull: Tuple[float, float] = (2.0, 1.8)
    censor_weibull: Tuple[float, float] = (1.0, 2.0)
    superpop_size: int = 100_000

    def __post_init__(self):
        lam, gam = self.event_weibull
        if lam <= 0 or gam <= 0:
            raise ValueError("event Weibull parameters must be positive")
        clam, cgam = self.censor_weibull
        if clam < 0 or cgam <= 0:
            raise ValueError("censoring Weibull needs lambda >= 0 (0 = no censoring) "
                             "and gamma > 0")
        names = set(self.covariate_specs)
        for key in set(self.beta_outcome) - {"Z"} | set(self.beta_treatment):
            if key not in names:
                raise ValueError(f"coefficient for unknown covariate {key!r}")
        if self.superpop_size < 2:
            raise ValueError("super-population needs at least 2 individuals")

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self.covariate_specs)

    def outcome_lp(self, x, z):
        beta = np.array([self.beta_outcome.get(k, 0.0) for k in self.names])
        return x @ beta + self.beta_outcome.get("Z", 0.0) * z

    def treatment_prob(self, x):
        beta = np.array([self.beta_treatment.get(k, 0.0) for k in self.names])
        eta = self.treatment_intercept + x @ beta
        return 1.0 / (1.0 + np.exp(-eta))


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    outcome_covs: Tuple[str, ...]
    treatment_covs: Tuple[str, ...]
    description: str = ""


SCENARIOS: Dict[str, ScenarioSpec] = {s.id: s for s in (
    ScenarioSpec("CO_CT", ("X1", "X2", "X4", "X5"), ("X2", "X5"),
                 "correct outcome and treatment models"),
    ScenarioSpec("CO_ICT", ("X1", "X2", "X4", "X5"), ("X2",),
                 "correct outcome, incorrect treatment model"),
    ScenarioSpec("ICO_CT", ("X1", "X2"), ("X2", "X5"),
                 "incorrect outcome, correct treatment model"),
    ScenarioSpec("ICO_ICT", ("X1", "X2"), ("X2",),
                 "both models incorrect"),
    ScenarioSpec("CO_CT_TP", ("X1", "X2", "X3", "X4", "X5", "X6"), ("X2", "X3", "X5", "X6"),
                 "correct models plus pure treatment predictors"),
    ScenarioSpec("CO_CT_OP", ("X1", "X2", "X4", "X5"), ("X1", "X2", "X4", "X5"),
                 "correct models plus pure outcome predictors"),
)}


def scenario(name: str) -> ScenarioSpec:
    key = name.strip().upper().replace("&", "_").replace(" ", "")
    if key not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return SCENARIOS[key]


def bender_time(u, lp, lam, gamma):
    """Invert S(t) = exp(-lam t^gamma exp(lp)) at the uniform draw ``u``."""
    return (-np.log(u) / (lam * np.exp(lp))) ** (1.0 / gamma)


def weibull_survival(t, lp, lam, gamma):
    return np.exp(-lam * np.asarray(t) ** gamma * np.exp(lp))


def proportion_curve(times) -> StepCurve:
    """Survival curve given by the fraction of ``times`` exceeding t."""
    times = np.asarray(times, dtype=float)
    uniq, counts = np.unique(times, return_counts=True)
    left = len(times) - np.cumsum(counts)
    return StepCurve(uniq, left / len(times), 1.0)


@dataclass(frozen=True, eq=False)
class SuperPopulation:
    covariates: np.ndarray
    covariate_names: Tuple[str, ...]
    potential_times: np.ndarray   # (N, 2): column z holds t_iz
    treatment_probs: np.ndarray
    true_curve_z0: StepCurve
    true_curve_z1: StepCurve

    @property
    def size(self) -> int:
        return len(self.treatment_probs)

    def true_curve(self, z: int) -> StepCurve:
        return self.true_curve_z1 if z == 1 else self.true_curve_z0


def _rng(master_seed: int, *key: int) -> np.random.Generator:
    # SeedSequence hashes (entropy, spawn_key) into independent streams
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


SUPERPOP_STREAM = 0
REPLICATION_STREAM = 1


def generate_superpopulation(cfg: DGPConfig, seed: int) -> SuperPopulation:
    rng = _rng(seed, SUPERPOP_STREAM)
    size = cfg.superpop_size
    x = np.column_stack([cfg.covariate_specs[k].draw(rng, size) for k in cfg.names])
    u = rng.random(size)
    lam, gam = cfg.event_weibull
    times = np.column_stack([bender_time(u, cfg.outcome_lp(x, z), lam, gam) for z in (0, 1)])
    probs = cfg.treatment_prob(x)
    frac = probs.mean()
    if not 0.05 < frac < 0.95:
        raise DegenerateTreatedFraction(f"expected treated fraction {frac:.3f} "
                                        "outside (0.05, 0.95)")
    return SuperPopulation(x, cfg.names, times, probs,
                           proportion_curve(times[:, 0]), proportion_curve(times[:, 1]))


def draw_replication(sp: SuperPopulation, cfg: DGPConfig, n: int, seed) -> SurvivalDataset:
    """One observed sample of size ``n``.

    ``seed`` is an int or a ``numpy.random.Generator``.
    """
    if n > sp.size:
        raise SampleTooLarge(f"n={n} exceeds the super-population size {sp.size}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.choice(sp.size, size=n, replace=False)
    z = (rng.random(n) < sp.treatment_probs[idx]).astype(int)
    t = sp.potential_times[idx, z]
    clam, cgam = cfg.censor_weibull
    uc = rng.random(n)
    if clam == 0:
        c = np.full(n, np.inf)
    else:
        c = bender_time(uc, 0.0, clam, cgam)
    return validate_dataset(np.minimum(t, c), (t <= c).astype(int), z,
                            sp.covariates[idx], sp.covariate_names)


def compute_tau(true_curve: StepCurve, sample: SurvivalDataset, z: int) -> float:
    """min(last event time in group z, time the truth first drops to 5 %)."""
    events = sample.time[(sample.group == z) & (sample.status == 1)]
    if len(events) == 0:
        raise NoEventsInGroup(f"no events in group {z}")
    below = np.flatnonzero(true_curve.values <= Q_LEVEL)
    q95 = true_curve.times[below[0]] if len(below) else np.inf
    return float(min(events.max(), q95))


def delta_bias(true_curve: StepCurve, est: StepCurve, tau: float) -> float:
    """Integral over [0, tau] of (truth - estimate)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return integrate_curve(true_curve, 0.0, tau) - integrate_curve(est, 0.0, tau)


def delta_mse(true_curve: StepCurve, est: StepCurve, tau: float) -> float:
    """Integral over [0, tau] of (truth - estimate)^2."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    val = (integrate_square(true_curve, 0.0, tau)
           - 2.0 * integrate_product(true_curve, est, 0.0, tau)
           + integrate_square(est, 0.0, tau))
    return max(val, 0.0)


def oob_profile(est: StepCurve, tau: float, bins: int = 10,
                tol: float = MONOTONE_TOL) -> np.ndarray:
    """Fraction of each of ``bins`` equal slices of [0, tau] during which the
    estimate lies outside [0, 1]."""
    v = est.all_values
    flag = ((v > 1 + tol) | (v < -tol)).astype(float)
    ind = StepCurve(est.times, flag[1:], flag[0])
    edges = np.linspace(0.0, tau, bins + 1)
    return np.diff(ind._primitive(edges)) / (tau / bins)


@dataclass(frozen=True)
class MetricRecord:
    method: str
    scenario: str
    n: int
    rep: int
    group: int
    delta_bias: float
    delta_mse: float
    nm_flag: bool
    oob_flag: bool
    tau: float
    failed: bool = False
    delta_bias_corrected: float = math.nan
    delta_mse_corrected: float = math.nan
    oob_profile: Tuple[float, ...] = ()
    error: str = ""

    @property
    def sort_key(self):
        return (self.scenario, self.n, self.rep, self.method, self.group)

    def reported(self, corrected: bool):
        if corrected:
            return self.delta_bias_corrected, self.delta_mse_corrected
        return self.delta_bias, self.delta_mse


@dataclass(frozen=True)
class AggregateRow:
    method: str
    scenario: str
    n: int
    group: int
    g_bias: float
    g_bias_mcse: float
    g_mse: float
    g_mse_mcse: float
    nm_pct: float
    oob_pct: float
    reps: int
    failures: int


@dataclass
class StudyResult:
    records: List[MetricRecord]
    corrected: bool
    profile_bins: int = 10

    def aggregate(self) -> List[AggregateRow]:
        groups: Dict[tuple, List[MetricRecord]] = {}
        for r in self.records:
            groups.setdefault((r.method, r.scenario, r.n, r.group), []).append(r)
        rows = []
        for (method, scen, n, z), recs in sorted(groups.items(), key=lambda kv: (
                kv[0][1], kv[0][2], _method_rank(kv[0][0]), kv[0][3])):
            ok = [r for r in recs if not r.failed]
            vals = np.array([r.reported(self.corrected) for r in ok]).reshape(-1, 2)
            k = len(ok)
            mean = vals.mean(axis=0) if k else np.full(2, np.nan)
            se = vals.std(axis=0, ddof=1) / np.sqrt(k) if k > 1 else np.full(2, np.nan)
            nm = 100.0 * np.mean([r.nm_flag for r in ok]) if k else np.nan
            oob = 100.0 * np.mean([r.oob_flag for r in ok]) if k else np.nan
            rows.append(AggregateRow(method, scen, n, z, mean[0], se[0], mean[1], se[1],
                                     nm, oob, k, len(recs) - k))
        return rows

    def aggregate_map(self) -> Dict[tuple, AggregateRow]:
        return {(a.method, a.scenario, a.n, a.group): a for a in self.aggregate()}

    def oob_by_time(self) -> Dict[tuple, np.ndarray]:
        """Mean percentage of time out of bounds per slice of [0, tau]."""
        acc: Dict[tuple, List[Tuple[float, ...]]] = {}
        for r in self.records:
            if not r.failed and r.oob_profile:
                acc.setdefault((r.method, r.scenario, r.n, r.group), []).append(r.oob_profile)
        return {k: 100.0 * np.mean(v, axis=0) for k, v in sorted(acc.items())}


def _method_rank(name):
    try:
        return list(MethodId).index(MethodId(name))
    except ValueError:
        return len(MethodId)


def _evaluate(method, scen, n, rep, curves_or_error, taus, truths, correct, bins):
    out = []
    if isinstance(curves_or_error, Exception):
        for z in (0, 1):
            out.append(MetricRecord(method.value, scen.id, n, rep, z, math.nan, math.nan,
                                    False, False, taus[z] if taus else math.nan, True,
                                    error=f"{type(curves_or_error).__name__}: "
                                          f"{curves_or_error}"))
        return out
    res = curves_or_error
    for z in (0, 1):
        est = res.curve(z)
        tau, truth = taus[z], truths[z]
        nm, oob = res.nm_flag[z], res.oob_flag[z]
        db, dm = delta_bias(truth, est, tau), delta_mse(truth, est, tau)
        dbc, dmc = math.nan, math.nan
        if correct:
            fixed = correct_curve(est, tau) if (nm or oob) else est
            dbc, dmc = delta_bias(truth, fixed, tau), delta_mse(truth, fixed, tau)
        prof = tuple(oob_profile(est, tau, bins)) if bins else ()
        out.append(MetricRecord(method.value, scen.id, n, rep, z, db, dm, nm, oob, tau,
                                False, dbc, dmc, prof))
    return out


def run_replication(sp: SuperPopulation, cfg: DGPConfig, scenarios: Sequence[ScenarioSpec],
                    methods: Sequence[MethodId], n: int, rep: int, master_seed: int,
                    apply_corrections: bool = False, profile_bins: int = 10,
                    estimator_options: Optional[dict] = None) -> List[MetricRecord]:
    """Steps 2-5 for one (n, rep): every scenario analyses the same sample."""
    opts = dict(estimator_options or {})
    grid = opts.pop("grid", None)
    pv_link = opts.pop("pv_link", "identity")
    truths = (sp.true_curve_z0, sp.true_curve_z1)
    try:
        data = draw_replication(sp, cfg, n, _rng(master_seed, REPLICATION_STREAM, n, rep))
        taus = tuple(compute_tau(truths[z], data, z) for z in (0, 1))
        ctx = make_context(data, grid=grid, pv_link=pv_link)
    except SurvAdjError as exc:
        log.warning("replication n=%d rep=%d failed: %s", n, rep, exc)
        return [r for s in scenarios for m in methods
                for r in _evaluate(m, s, n, rep, exc, None, truths, False, 0)]
    records = []
    for scen in scenarios:
        for m in methods:
            try:
                res = estimate(m, data, scen.outcome_covs, scen.treatment_covs, ctx=ctx, **opts)
            except (SurvAdjError, np.linalg.LinAlgError, FloatingPointError) as exc:
                log.warning("%s failed in %s n=%d rep=%d: %s", m.value, scen.id, n, rep, exc)
                res = exc
            records.extend(_evaluate(m, scen, n, rep, res, taus, truths,
                                     apply_corrections, profile_bins))
    return records


_WORKER_STATE = {}


def _worker_init(sp, cfg, scenarios, methods, master_seed, corrections, bins, opts):
    _WORKER_STATE.update(sp=sp, cfg=cfg, scenarios=scenarios, methods=methods,
                         seed=master_seed, corr=corrections, bins=bins, opts=opts)


def _worker_run(task):
    import warnings
    n, rep = task
    s = _WORKER_STATE
    # one BLAS thread per worker keeps results independent of the worker count
    with warnings.catch_warnings(), threadpool_limits(limits=1):
        warnings.simplefilter("ignore")
        return run_replication(s["sp"], s["cfg"], s["scenarios"], s["methods"], n, rep,
                               s["seed"], s["corr"], s["bins"], s["opts"])


def worker_count(threads: Optional[int] = None) -> int:
    if threads is None:
        env = os.environ.get("SURVADJ_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def run_study(cfg: DGPConfig, scenarios: Sequence, methods: Sequence, sample_sizes: Sequence[int],
              reps: int, master_seed: int, apply_corrections: bool = False,
              threads: Optional[int] = None, superpop: Optional[SuperPopulation] = None,
              profile_bins: int = 10, estimator_options: Optional[dict] = None,
              progress=None) -> StudyResult:
    """Run the full (scenario x n x rep x method) design.

    Records are sorted before they are returned, so the result does not
    depend on the number of worker processes. A method that fails in one
    replication yields ``failed`` records; the study carries on.
    """
    if reps < 2:
        raise ValueError("reps must be at least 2")
    scenarios = [s if isinstance(s, ScenarioSpec) else scenario(s) for s in scenarios]
    methods = [m if isinstance(m, MethodId) else MethodId.parse(m) for m in methods]
    sp = superpop if superpop is not None else generate_superpopulation(cfg, master_seed)
    tasks = [(n, rep) for n in sample_sizes for rep in range(reps)]
    workers = min(worker_count(threads), len(tasks))
    init = (sp, cfg, scenarios, methods, master_seed, apply_corrections, profile_bins,
            estimator_options)
    records: List[MetricRecord] = []
    if workers == 1:
        _worker_init(*init)
        for i, t in enumerate(tasks):
            records.extend(_worker_run(t))
            if progress:
                progress(i + 1, len(tasks))
    else:
        import multiprocessing as mp
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(workers, mp_context=ctx, initializer=_worker_init,
                                 initargs=init) as pool:
            for i, recs in enumerate(pool.map(_worker_run, tasks, chunksize=4)):
                records.extend(recs)
                if progress:
                    progress(i + 1, len(tasks))
    records.sort(key=lambda r: r.sort_key)
    return StudyResult(records, apply_corrections, profile_bins)
