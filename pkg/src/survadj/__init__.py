"""Confounder-adjusted survival curves from right-censored observational data,
plus a Monte-Carlo engine for comparing the adjustment methods."""

from .dataset import (StepCurve, SurvivalDataset, eval_curve, integrate_curve,
                      integrate_product, integrate_square, pointwise_combine, read_csv,
                      validate_dataset)
from .errors import *  # noqa: F401,F403
from .estimators import (AdjustedCurves, EstimationContext, MethodId, correct_curve, diagnose,
                         estimate, estimate_many, make_context)
from .models import fit_cox, fit_logistic, fit_pv_regression, predict_cox_survival
from .nonparam import (censoring_km, isotonic_correct, kaplan_meier, nelson_aalen,
                       pava_decreasing, pseudo_values, truncate_curve)
from .simulation import (SCENARIOS, DGPConfig, MetricRecord, ScenarioSpec, SuperPopulation,
                         compute_tau, delta_bias, delta_mse, draw_replication,
                         generate_superpopulation, run_study)

__version__ = "0.1.0"
