"""Study configuration files.

A plain INI file with up to three sections::

    [study]
    seed = 1
    reps = 500
    n = 100, 500, 1000
    scenarios = CO_CT, ICO_CT
    methods = all
    correct = no

    [dgp]
    superpop_size = 100000
    treatment_intercept = -0.5
    event_weibull = 2, 1.8
    censor_weibull = 1, 2

    [covariates]
    X1 = normal(0, 1)
    X2 = bernoulli(0.5)

    [beta_outcome]
    X1 = 0.5878
    Z = -1

    [beta_treatment]
    X2 = 0.5

Sections ``covariates``, ``beta_outcome`` and ``beta_treatment`` replace
the defaults wholesale when present. Any key may be left out.
"""

import configparser
import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .errors import ConfigError
from .estimators import MethodId
from .simulation import SCENARIOS, CovariateSpec, DGPConfig, scenario

_DIST = re.compile(r"^\s*(bernoulli|normal)\s*\(\s*([^,()]+?)\s*(?:,\s*([^,()]+?)\s*)?\)\s*$",
                   re.IGNORECASE)


def parse_list(text: str) -> List[str]:
    return [t.strip() for t in re.split(r"[,\s]+", text or "") if t.strip()]


def parse_floats(text: str, what: str) -> List[float]:
    try:
        return [float(v) for v in parse_list(text)]
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from None


def parse_ints(text: str, what: str) -> List[int]:
    vals = parse_floats(text, what)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"{what}: expected integers, got {text!r}")
    return [int(v) for v in vals]


def parse_methods(text) -> List[MethodId]:
    names = parse_list(text) if isinstance(text, str) else list(text)
    if not names:
        raise ConfigError("at least one method is required")
    if len(names) == 1 and names[0].lower() == "all":
        return list(MethodId)
    try:
        return [MethodId.parse(m) for m in names]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_scenarios(text) -> List[str]:
    names = parse_list(text) if isinstance(text, str) else list(text)
    if len(names) == 1 and names[0].lower() == "all":
        return list(SCENARIOS)
    try:
        return [scenario(s).id for s in names]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_bool(text: str, what: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ConfigError(f"{what}: expected yes/no, got {text!r}")


def parse_distribution(text: str, name: str) -> CovariateSpec:
    m = _DIST.match(text)
    if not m:
        raise ConfigError(f"covariate {name}: expected bernoulli(p) or normal(mean, sd), "
                          f"got {text!r}")
    kind = m.group(1).lower()
    try:
        a = float(m.group(2))
        b = float(m.group(3)) if m.group(3) is not None else 1.0
    except ValueError:
        raise ConfigError(f"covariate {name}: bad parameters in {text!r}") from None
    if kind == "bernoulli" and (m.group(3) is not None or not 0.0 <= a <= 1.0):
        raise ConfigError(f"covariate {name}: bernoulli takes one probability in [0, 1]")
    if kind == "normal" and b <= 0:
        raise ConfigError(f"covariate {name}: normal sd must be positive")
    return CovariateSpec(kind, a, b)


def _pair(text: str, what: str) -> Tuple[float, float]:
    vals = parse_floats(text, what)
    if len(vals) != 2:
        raise ConfigError(f"{what}: expected two numbers (lambda, gamma)")
    return vals[0], vals[1]


@dataclass
class StudySettings:
    dgp: DGPConfig = field(default_factory=DGPConfig)
    seed: int = 1
    reps: int = 100
    sample_sizes: List[int] = field(default_factory=lambda: [1000])
    scenarios: List[str] = field(default_factory=lambda: ["CO_CT"])
    methods: List[MethodId] = field(default_factory=lambda: list(MethodId))
    correct: bool = False
    caliper: Optional[float] = None
    pv_link: str = "identity"
    grid: Optional[List[float]] = None


_STUDY_KEYS = {"seed", "reps", "n", "scenarios", "methods", "correct", "caliper",
               "pv_link", "grid"}
_DGP_KEYS = {"superpop_size", "treatment_intercept", "event_weibull", "censor_weibull"}


def read_config(path) -> StudySettings:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep covariate names case-sensitive
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return settings_from_parser(parser)


def settings_from_parser(parser: configparser.ConfigParser) -> StudySettings:
    known = {"study", "dgp", "covariates", "beta_outcome", "beta_treatment"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    st = StudySettings()
    if parser.has_section("study"):
        sec = parser["study"]
        _reject_unknown(sec, _STUDY_KEYS, "study")
        if "seed" in sec:
            st.seed = _one_int(sec["seed"], "seed")
        if "reps" in sec:
            st.reps = _one_int(sec["reps"], "reps")
        if "n" in sec:
            st.sample_sizes = parse_ints(sec["n"], "n")
        if "scenarios" in sec:
            st.scenarios = parse_scenarios(sec["scenarios"])
        if "methods" in sec:
            st.methods = parse_methods(sec["methods"])
        if "correct" in sec:
            st.correct = parse_bool(sec["correct"], "correct")
        if "caliper" in sec and sec["caliper"].strip().lower() not in ("", "none"):
            st.caliper = parse_floats(sec["caliper"], "caliper")[0]
        if "pv_link" in sec:
            st.pv_link = sec["pv_link"].strip().lower()
        if "grid" in sec and sec["grid"].strip().lower() not in ("", "events"):
            st.grid = parse_floats(sec["grid"], "grid")

    kw: Dict = {}
    if parser.has_section("dgp"):
        sec = parser["dgp"]
        _reject_unknown(sec, _DGP_KEYS, "dgp")
        if "superpop_size" in sec:
            kw["superpop_size"] = _one_int(sec["superpop_size"], "superpop_size")
        if "treatment_intercept" in sec:
            kw["treatment_intercept"] = _one_float(sec["treatment_intercept"],
                                                   "treatment_intercept")
        if "event_weibull" in sec:
            kw["event_weibull"] = _pair(sec["event_weibull"], "event_weibull")
        if "censor_weibull" in sec:
            kw["censor_weibull"] = _pair(sec["censor_weibull"], "censor_weibull")
    if parser.has_section("covariates"):
        kw["covariate_specs"] = {k: parse_distribution(v, k)
                                 for k, v in parser["covariates"].items()}
    for name in ("beta_outcome", "beta_treatment"):
        if parser.has_section(name):
            kw[name] = {k: _one_float(v, f"{name}.{k}") for k, v in parser[name].items()}
    try:
        st.dgp = DGPConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    validate_settings(st)
    return st


def validate_settings(st: StudySettings) -> None:
    if st.reps < 2:
        raise ConfigError("reps must be at least 2")
    if not st.sample_sizes or any(n < 2 for n in st.sample_sizes):
        raise ConfigError("sample sizes must be at least 2")
    if any(n > st.dgp.superpop_size for n in st.sample_sizes):
        raise ConfigError("sample size exceeds the super-population size")
    if st.pv_link not in ("identity", "cloglog"):
        raise ConfigError(f"pv_link must be identity or cloglog, got {st.pv_link!r}")
    if st.caliper is not None and not st.caliper > 0:
        raise ConfigError("caliper must be positive")
    if not st.methods:
        raise ConfigError("at least one method is required")
    for sid in st.scenarios:
        missing = [c for c in SCENARIOS[sid].outcome_covs + SCENARIOS[sid].treatment_covs
                   if c not in st.dgp.covariate_specs]
        if missing:
            raise ConfigError(f"scenario {sid} uses covariates missing from the DGP: "
                              f"{', '.join(missing)}")


def _reject_unknown(sec, allowed, name):
    extra = set(sec) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(extra))}")


def _one_float(text, what) -> float:
    vals = parse_floats(text, what)
    if len(vals) != 1 or not math.isfinite(vals[0]):
        raise ConfigError(f"{what}: expected one finite number, got {text!r}")
    return vals[0]


def _one_int(text, what) -> int:
    vals = parse_ints(text, what)
    if len(vals) != 1:
        raise ConfigError(f"{what}: expected one integer, got {text!r}")
    return vals[0]
