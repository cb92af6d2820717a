"""Momentum coefficients and step-size rules for the STORM family.

Every coefficient is a pure function of a running accumulator, so the
optimizers own all state and these formulas stay independently testable.
The momentum exponent is always -2/3 and the step-size exponents (p, q)
satisfy p + 2q = 1; q is derived from p and never set directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

# Algorithm names, used as registry keys everywhere (CLI, configs, presets).
META_STORM = "meta-storm"
META_STORM_SG = "meta-storm-sg"
META_STORM_NA = "meta-storm-na"
STORM_PLUS = "storm-plus"
META_STORM_H = "meta-storm-h"
META_STORM_SG_H = "meta-storm-sg-h"
SGD = "sgd"
ADAGRAD_NORM = "adagrad-norm"
ORACLE_STORM = "oracle-storm"

SCALAR_ADAPTIVE = (META_STORM, META_STORM_SG, META_STORM_NA, STORM_PLUS)
HEURISTIC = (META_STORM_H, META_STORM_SG_H)
BASELINES = (SGD, ADAGRAD_NORM, ORACLE_STORM)
ALGORITHMS = SCALAR_ADAPTIVE + HEURISTIC + BASELINES

NA_A0_FLOOR = math.sqrt(2.0 / 3.0)

# Admissible p per algorithm (inclusive bounds unless noted).
_P_RANGES = {
    META_STORM_SG: (0.25, 0.5),
    META_STORM: ((3.0 - math.sqrt(7.0)) / 2.0, 0.5),
    META_STORM_NA: (0.0, 0.5),  # open below
    META_STORM_SG_H: (0.25, 0.5),
    META_STORM_H: ((3.0 - math.sqrt(7.0)) / 2.0, 0.5),
}


@dataclass(frozen=True)
class HyperParams:
    """Shared hyperparameters; q is derived so that p + 2q = 1 exactly."""

    a0: float = 1.0
    b0: float = 1e-8
    eta: float = 1.0
    p: float = 0.5
    alpha: float = 0.99
    q: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "q", (1.0 - self.p) / 2.0)


# Defaults per algorithm.  storm-plus conventionally sets a0 to the problem
# dimension, so its preset is resolved lazily in default_hyperparams.
_PRESETS = {
    META_STORM: dict(p=0.20, a0=1e8, b0=1e-8),
    META_STORM_SG: dict(p=0.25, a0=1e8, b0=1e-8),
    META_STORM_H: dict(p=0.50, a0=1.0, b0=1e-8, alpha=0.99),
    META_STORM_SG_H: dict(p=0.50, a0=1.0, b0=1e-8, alpha=0.99),
    META_STORM_NA: dict(p=0.25, a0=1.0, b0=1e-8),
    STORM_PLUS: dict(p=1.0 / 3.0, b0=1.0),
    SGD: dict(p=0.5),
    ADAGRAD_NORM: dict(p=0.5, b0=1e-8),
    ORACLE_STORM: dict(p=0.5),
}


def default_hyperparams(algorithm: str, dimension: int | None = None,
                        **overrides) -> HyperParams:
    """Preset hyperparameters for ``algorithm`` with optional overrides."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    kwargs = dict(_PRESETS[algorithm])
    if algorithm == STORM_PLUS and "a0" not in overrides:
        if dimension is None:
            raise ConfigError("storm-plus needs the problem dimension to set its default a0")
        kwargs["a0"] = float(dimension)
    kwargs.update(overrides)
    hp = HyperParams(**kwargs)
    validate_hyperparams(algorithm, hp)
    return hp


def validate_hyperparams(algorithm: str, hp: HyperParams) -> None:
    """Raise ConfigError listing every constraint the pair violates."""
    bad = []
    if algorithm not in ALGORITHMS:
        bad.append(f"unknown algorithm {algorithm!r}")
    if not (hp.a0 > 0 and math.isfinite(hp.a0)):
        bad.append(f"a0 must be positive and finite, got {hp.a0}")
    if not (hp.b0 > 0 and math.isfinite(hp.b0)):
        bad.append(f"b0 must be positive and finite, got {hp.b0}")
    if not (hp.eta > 0 and math.isfinite(hp.eta)):
        bad.append(f"eta must be positive and finite, got {hp.eta}")
    if not (0.0 < hp.p < 1.0):
        bad.append(f"p must lie in (0, 1), got {hp.p}")
    if not (0.0 <= hp.alpha < 1.0):
        bad.append(f"alpha must lie in [0, 1), got {hp.alpha}")
    rng = _P_RANGES.get(algorithm)
    if rng is not None:
        lo, hi = rng
        open_below = algorithm == META_STORM_NA
        ok = (lo < hp.p if open_below else lo <= hp.p) and hp.p <= hi
        if not ok:
            bracket = "(" if open_below else "["
            bad.append(f"{algorithm} requires p in {bracket}{lo:.6g}, {hi:.6g}], got {hp.p}")
    if algorithm == META_STORM_NA and hp.a0 <= NA_A0_FLOOR:
        bad.append(f"{algorithm} requires a0 > sqrt(2/3) ~ {NA_A0_FLOOR:.6g}, got {hp.a0}")
    if bad:
        raise ConfigError(bad)


def with_eta(hp: HyperParams, eta: float) -> HyperParams:
    return replace(hp, eta=eta)


def _inverse_momentum(acc: float, a0: float) -> float:
    if not (acc >= 0.0 and math.isfinite(acc)):
        raise ValueError(f"accumulator must be finite and non-negative, got {acc}")
    if a0 <= 0:
        raise ValueError(f"a0 must be positive, got {a0}")
    return (1.0 + acc / (a0 * a0)) ** (-2.0 / 3.0)


def momentum_sg(grad_sq_sum: float, a0: float) -> float:
    """Momentum from accumulated squared stochastic-gradient norms."""
    return _inverse_momentum(grad_sq_sum, a0)


def momentum_ms(diff_sq_sum: float, a0: float) -> float:
    """Momentum from accumulated squared same-point gradient differences."""
    return _inverse_momentum(diff_sq_sum, a0)


def momentum_na(t: int, a0: float) -> float:
    """Time-only momentum (1 + t/a0^2)^(-2/3); needs a0 > sqrt(2/3)."""
    if a0 <= NA_A0_FLOOR:
        raise ValueError(f"a0 must exceed sqrt(2/3) ~ {NA_A0_FLOOR:.6g}, got {a0}")
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    return (1.0 + t / (a0 * a0)) ** (-2.0 / 3.0)


def stepsize(d_sq_sum: float, a: float, hp: HyperParams) -> float:
    """General step size (b0^(1/p) + sum ||d_i||^2)^p / a^q."""
    if not (d_sq_sum >= 0.0 and math.isfinite(d_sq_sum)):
        raise ValueError(f"d_sq_sum must be finite and non-negative, got {d_sq_sum}")
    if not 0.0 < a <= 1.0:
        raise ValueError(f"momentum coefficient must lie in (0, 1], got {a}")
    return (hp.b0 ** (1.0 / hp.p) + d_sq_sum) ** hp.p / a ** hp.q


def stepsize_stormplus(weighted_d_sq_sum: float) -> float:
    """Cube root of the momentum-weighted estimator-norm sum.

    The caller maintains the sum (each ||d_i||^2 divided by its own a_{i+1});
    zero is legal only before the first move, and the optimizer guards the
    division in that case.
    """
    if weighted_d_sq_sum < 0.0:
        raise ValueError(f"weighted sum must be non-negative, got {weighted_d_sq_sum}")
    return float(np.cbrt(weighted_d_sq_sum))


def oracle_tuned_constants(beta: float, sigma: float, big_t: int,
                           delta_f: float) -> tuple[float, float]:
    """Fixed (a, b) for the oracle-tuned baseline from known problem constants.

    b = 2*sqrt(2)*beta + beta^(2/3) * (sigma^2 * T)^(1/3) / delta_f^(1/3) and
    a = min(1, 8*beta^2 / b^2), so a*b^2 = 8*beta^2 whenever a < 1.
    """
    if delta_f <= 0:
        raise ValueError(f"delta_f must be positive, got {delta_f}")
    if beta < 0 or sigma < 0:
        raise ValueError("beta and sigma must be non-negative")
    if big_t < 1:
        raise ValueError(f"big_t must be at least 1, got {big_t}")
    b = 2.0 * math.sqrt(2.0) * beta
    if sigma > 0.0:
        b += beta ** (2.0 / 3.0) * (sigma * sigma * big_t) ** (1.0 / 3.0) / delta_f ** (1.0 / 3.0)
        a = 1.0 if b == 0.0 else min(1.0, 8.0 * beta * beta / (b * b))
    else:
        # noise-free collapse: b = 2*sqrt(2)*beta makes 8*beta^2/b^2 exactly 1
        a = 1.0
    return a, b
