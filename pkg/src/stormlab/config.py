"""Experiment configuration: a single YAML document per experiment.

Parsing validates everything it can and reports every violation at once, so
a config file can be fixed in one pass.  ``resolve`` turns a validated
config into the concrete objects a run needs (problem, hyperparameters,
starting point) and is the single place defaults are expanded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .problems import PROBLEM_FAMILIES, Problem, make_problem
from .schedules import (
    ALGORITHMS,
    HyperParams,
    default_hyperparams,
    validate_hyperparams,
)

_HYPER_KEYS = ("p", "a0", "b0", "alpha")
_TOP_KEYS = ("problem", "algorithm", "hyperparams", "eta", "T", "seeds",
             "trace_every", "out_dir", "x1")


def default_trace_every(big_t: int) -> int:
    """Default thinning: full traces up to 10^4 iterates, bounded disk after."""
    return max(1, big_t // 10_000)


@dataclass
class RunConfig:
    problem_family: str
    problem_params: dict
    algorithm: str
    hyper_overrides: dict = field(default_factory=dict)
    eta_grid: list = field(default_factory=lambda: [1.0])
    big_t: int = 1000
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    trace_every: int | None = None
    out_dir: str = "results"
    x1: object = None  # None -> problem default; "ones"/"zeros"/list of floats

    def resolved_trace_every(self) -> int:
        return self.trace_every if self.trace_every else default_trace_every(self.big_t)


def parse_config(path) -> RunConfig:
    """Load and validate a YAML experiment config, collecting all violations."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping, got {type(raw).__name__}")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> RunConfig:
    bad = []
    for key in raw:
        if key not in _TOP_KEYS:
            bad.append(f"unknown config key {key!r}")

    problem = raw.get("problem")
    family, params = None, {}
    if not isinstance(problem, dict) or "family" not in problem:
        bad.append("config needs a 'problem' mapping with a 'family' entry")
    else:
        params = dict(problem)
        family = params.pop("family")
        if family not in PROBLEM_FAMILIES:
            bad.append(f"unknown problem family {family!r}; "
                       f"choose from {', '.join(PROBLEM_FAMILIES)}")

    algorithm = raw.get("algorithm")
    if algorithm not in ALGORITHMS:
        bad.append(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")

    overrides = raw.get("hyperparams") or {}
    if not isinstance(overrides, dict):
        bad.append("'hyperparams' must be a mapping")
        overrides = {}
    else:
        for key in overrides:
            if key not in _HYPER_KEYS:
                bad.append(f"unknown hyperparameter {key!r}; allowed: {', '.join(_HYPER_KEYS)}")

    eta = raw.get("eta", [1.0])
    if isinstance(eta, (int, float)):
        eta = [eta]
    if not isinstance(eta, list) or not eta:
        bad.append("'eta' must be a non-empty number or list of numbers")
        eta = [1.0]
    elif any(not isinstance(e, (int, float)) or e <= 0 for e in eta):
        bad.append("every eta must be a positive number")

    big_t = raw.get("T", 1000)
    if not isinstance(big_t, int) or big_t < 1:
        bad.append(f"'T' must be a positive integer, got {big_t!r}")
        big_t = 1000

    seeds = raw.get("seeds", [1, 2, 3, 4, 5])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds or any(not isinstance(s, int) for s in seeds):
        bad.append("'seeds' must be a non-empty integer or list of integers")
        seeds = [1]

    trace_every = raw.get("trace_every")
    if trace_every is not None and (not isinstance(trace_every, int) or trace_every < 1):
        bad.append(f"'trace_every' must be a positive integer, got {trace_every!r}")
        trace_every = None

    x1 = raw.get("x1")
    if x1 is not None and not (x1 in ("ones", "zeros")
                               or (isinstance(x1, list) and all(isinstance(v, (int, float)) for v in x1))):
        bad.append("'x1' must be 'ones', 'zeros', or a list of numbers")
        x1 = None

    cfg = RunConfig(
        problem_family=family or "", problem_params=params,
        algorithm=algorithm or "", hyper_overrides=dict(overrides),
        eta_grid=[float(e) for e in eta], big_t=big_t,
        seeds=list(seeds), trace_every=trace_every,
        out_dir=str(raw.get("out_dir", "results")), x1=x1)

    if not bad:
        # constructing the problem and hyperparameters surfaces the remaining
        # constraint violations (parameter ranges, family parameters)
        try:
            resolve(cfg)
        except ConfigError as err:
            bad.extend(err.violations)
    if bad:
        raise ConfigError(bad)
    return cfg


def resolve(cfg: RunConfig) -> tuple[Problem, HyperParams, np.ndarray]:
    """Build the problem, the (eta-less) hyperparameters, and the start point."""
    bad = []
    problem = None
    try:
        problem = make_problem(cfg.problem_family, cfg.problem_params)
    except ConfigError as err:
        bad.extend(err.violations)
    hp = None
    if problem is not None:
        try:
            hp = default_hyperparams(cfg.algorithm, dimension=problem.dimension,
                                     **cfg.hyper_overrides)
        except (ConfigError, TypeError) as err:
            if isinstance(err, ConfigError):
                bad.extend(err.violations)
            else:
                bad.append(str(err))
    x1 = None
    if problem is not None:
        if cfg.x1 is None:
            x1 = problem.default_start()
        elif cfg.x1 == "ones":
            x1 = np.ones(problem.dimension)
        elif cfg.x1 == "zeros":
            x1 = np.zeros(problem.dimension)
        else:
            x1 = np.asarray(cfg.x1, dtype=np.float64)
            if x1.shape != (problem.dimension,):
                bad.append(f"'x1' must have length {problem.dimension}, got {x1.size}")
    if bad:
        raise ConfigError(bad)
    return problem, hp, x1


def resolved_config_dict(cfg: RunConfig, problem: Problem, hp: HyperParams) -> dict:
    """Fully expanded config (all defaults filled) for the summary document."""
    return {
        "problem": {"family": cfg.problem_family, **cfg.problem_params,
                    "dimension": problem.dimension, "beta": problem.beta,
                    "sigma": problem.sigma, "f_star": problem.f_star},
        "algorithm": cfg.algorithm,
        "hyperparams": {"p": hp.p, "q": hp.q, "a0": hp.a0, "b0": hp.b0,
                        "alpha": hp.alpha},
        "eta": list(cfg.eta_grid),
        "T": cfg.big_t,
        "seeds": list(cfg.seeds),
        "trace_every": cfg.resolved_trace_every(),
        "out_dir": cfg.out_dir,
        "x1": cfg.x1 if cfg.x1 is not None else "problem-default",
    }


def validate_pair(algorithm: str, hp: HyperParams) -> None:
    validate_hyperparams(algorithm, hp)
