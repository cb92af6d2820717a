"""State machines executing one iteration of each algorithm, plus baselines.

Indexing discipline matters here and differs between the variants:

* meta-storm-sg computes a_{t+1} from accumulated stochastic-gradient norms
  *before* the step size, and b_t divides by that fresh a_{t+1}.
* meta-storm computes b_t from the momentum already in hand (a_t) and only
  updates the momentum after drawing the new sample, because its accumulator
  needs the same-point gradient difference under the new draw.
* meta-storm-na replaces the accumulator with the step counter.
* storm-plus keeps the gradient-norm momentum but takes the cube root of a
  momentum-weighted estimator-norm sum as its step size.

All STORM-family steps make exactly two oracle calls sharing one SampleKey:
the fresh-point gradient (cached for the next step) and the correction
gradient at the previous point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import CompensatedSum, SampleKey, comp_add, derive_key, sq_norm
from .diagnostics import StateRecord, TraceRecord
from .errors import ConfigError, DivergedError
from .problems import Problem
from .schedules import (
    ADAGRAD_NORM,
    ALGORITHMS,
    HEURISTIC,
    META_STORM,
    META_STORM_H,
    META_STORM_NA,
    META_STORM_SG,
    META_STORM_SG_H,
    ORACLE_STORM,
    SCALAR_ADAPTIVE,
    SGD,
    STORM_PLUS,
    HyperParams,
    momentum_na,
    momentum_ms,
    momentum_sg,
    oracle_tuned_constants,
    stepsize,
    stepsize_stormplus,
    validate_hyperparams,
)

# Algorithms whose steps cost two oracle calls.
TWO_QUERY = SCALAR_ADAPTIVE + HEURISTIC + (ORACLE_STORM,)

# Reserved draw index for the uniform output-iterate draw; data draws use
# consecutive indices from zero and never reach it.
_OUTPUT_DRAW_INDEX = (1 << 64) - 1


@dataclass
class StepReport:
    """Telemetry for one executed step (moving x_t to x_{t+1})."""

    t: int
    a: float | np.ndarray
    b: float | np.ndarray
    d_norm: float
    queries: int
    key: SampleKey | None
    aux_term: float | None = None   # raw term added to the momentum accumulator
    aux_vec: np.ndarray | None = None  # per-coordinate raw term (heuristics)
    grad_sq: float | None = None    # ||grad f(x_t, xi_t)||^2
    diff_sq: float | None = None    # ||grad f(x_t, xi_t) - grad f(x_t, xi_{t+1})||^2


@dataclass
class OptimizerState:
    """Mutable per-run state for the scalar algorithms and baselines."""

    algorithm: str
    run_seed: int
    t: int
    x: np.ndarray
    d: np.ndarray
    g_cached: np.ndarray
    a_current: float
    d_sq_sum: CompensatedSum
    aux_sum: CompensatedSum
    grad_sq_sum: CompensatedSum
    draw_index: int
    queries: int
    oracle_a: float = 1.0
    oracle_b: float = 0.0


@dataclass
class HeuristicState:
    """Per-coordinate EMA state for the heuristic variants."""

    algorithm: str
    run_seed: int
    t: int
    x: np.ndarray
    d: np.ndarray
    g_cached: np.ndarray
    a_current: np.ndarray
    ema_d_sq: np.ndarray
    ema_g_sq: np.ndarray
    draw_index: int
    queries: int


def init(problem: Problem, algorithm: str, hp: HyperParams, x1, run_seed: int,
         big_t: int | None = None) -> OptimizerState | HeuristicState:
    """Initial state: d_1 is the stochastic gradient at x_1 under draw 0."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    validate_hyperparams(algorithm, hp)
    x1 = np.asarray(x1, dtype=np.float64).copy()
    d1 = problem.grad_stochastic(x1, derive_key(run_seed, 0))
    if algorithm in HEURISTIC:
        dim = problem.dimension
        return HeuristicState(
            algorithm=algorithm, run_seed=run_seed, t=1, x=x1, d=d1,
            g_cached=d1, a_current=np.ones(dim), ema_d_sq=np.zeros(dim),
            ema_g_sq=np.zeros(dim), draw_index=1, queries=1)
    state = OptimizerState(
        algorithm=algorithm, run_seed=run_seed, t=1, x=x1, d=d1, g_cached=d1,
        a_current=1.0, d_sq_sum=CompensatedSum(), aux_sum=CompensatedSum(),
        grad_sq_sum=CompensatedSum(), draw_index=1, queries=1)
    if algorithm == ORACLE_STORM:
        if big_t is None:
            raise ConfigError("oracle-storm needs the run horizon to set its constants")
        if problem.f_star is None:
            raise ConfigError("oracle-storm needs a problem with known f_star")
        delta_f = problem.value_true(x1) - problem.f_star
        if delta_f <= 0:
            raise ConfigError("oracle-storm needs a start with F(x1) > f_star")
        a, b = oracle_tuned_constants(problem.beta, problem.sigma, big_t, delta_f)
        if b <= 0:
            raise ConfigError("oracle-storm constants degenerate (beta = 0)")
        state.oracle_a, state.oracle_b = a, b
    return state


def _next_key(state) -> SampleKey:
    key = derive_key(state.run_seed, state.draw_index)
    state.draw_index += 1
    return key


def _advance(state, x_next, d_next, g_next, a_next, b) -> None:
    if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(d_next))
            and np.all(np.isfinite(b))):
        raise DivergedError(state.t)
    state.x = x_next
    state.d = d_next
    state.g_cached = g_next
    state.a_current = a_next
    state.t += 1


def step_meta_storm_sg(state: OptimizerState, problem: Problem,
                       hp: HyperParams) -> StepReport:
    g_sq = sq_norm(state.g_cached)
    state.aux_sum = comp_add(state.aux_sum, g_sq)
    a_next = momentum_sg(state.aux_sum.value, hp.a0)
    d_norm_sq = sq_norm(state.d)
    state.d_sq_sum = comp_add(state.d_sq_sum, d_norm_sq)
    b = stepsize(state.d_sq_sum.value, a_next, hp)
    x_next = state.x - (hp.eta / b) * state.d
    key = _next_key(state)
    g_next = problem.grad_stochastic(x_next, key)
    g_corr = problem.grad_stochastic(state.x, key)
    diff_sq = sq_norm(state.g_cached - g_corr)
    d_next = g_next + (1.0 - a_next) * (state.d - g_corr)
    state.queries += 2
    t = state.t
    _advance(state, x_next, d_next, g_next, a_next, b)
    return StepReport(t=t, a=a_next, b=b, d_norm=np.sqrt(d_norm_sq), queries=2,
                      key=key, aux_term=g_sq, grad_sq=g_sq, diff_sq=diff_sq)


def step_meta_storm(state: OptimizerState, problem: Problem,
                    hp: HyperParams) -> StepReport:
    g_sq = sq_norm(state.g_cached)
    d_norm_sq = sq_norm(state.d)
    state.d_sq_sum = comp_add(state.d_sq_sum, d_norm_sq)
    b = stepsize(state.d_sq_sum.value, state.a_current, hp)  # uses a_t, not a_{t+1}
    x_next = state.x - (hp.eta / b) * state.d
    key = _next_key(state)
    g_corr = problem.grad_stochastic(state.x, key)
    diff_sq = sq_norm(state.g_cached - g_corr)
    state.aux_sum = comp_add(state.aux_sum, diff_sq)
    a_next = momentum_ms(state.aux_sum.value, hp.a0)
    g_next = problem.grad_stochastic(x_next, key)
    d_next = g_next + (1.0 - a_next) * (state.d - g_corr)
    state.queries += 2
    t = state.t
    _advance(state, x_next, d_next, g_next, a_next, b)
    return StepReport(t=t, a=a_next, b=b, d_norm=np.sqrt(d_norm_sq), queries=2,
                      key=key, aux_term=diff_sq, grad_sq=g_sq, diff_sq=diff_sq)


def step_meta_storm_na(state: OptimizerState, problem: Problem,
                       hp: HyperParams) -> StepReport:
    g_sq = sq_norm(state.g_cached)
    a_next = momentum_na(state.t, hp.a0)
    d_norm_sq = sq_norm(state.d)
    state.d_sq_sum = comp_add(state.d_sq_sum, d_norm_sq)
    b = stepsize(state.d_sq_sum.value, a_next, hp)
    x_next = state.x - (hp.eta / b) * state.d
    key = _next_key(state)
    g_next = problem.grad_stochastic(x_next, key)
    g_corr = problem.grad_stochastic(state.x, key)
    diff_sq = sq_norm(state.g_cached - g_corr)
    d_next = g_next + (1.0 - a_next) * (state.d - g_corr)
    state.queries += 2
    t = state.t
    _advance(state, x_next, d_next, g_next, a_next, b)
    return StepReport(t=t, a=a_next, b=b, d_norm=np.sqrt(d_norm_sq), queries=2,
                      key=key, aux_term=1.0, grad_sq=g_sq, diff_sq=diff_sq)


def step_stormplus(state: OptimizerState, problem: Problem,
                   hp: HyperParams) -> StepReport:
    g_sq = sq_norm(state.g_cached)
    state.grad_sq_sum = comp_add(state.grad_sq_sum, g_sq)
    a_next = momentum_sg(state.grad_sq_sum.value, hp.a0)
    d_norm_sq = sq_norm(state.d)
    state.d_sq_sum = comp_add(state.d_sq_sum, d_norm_sq)
    state.aux_sum = comp_add(state.aux_sum, d_norm_sq / a_next)
    b = stepsize_stormplus(state.aux_sum.value)
    if b > 0.0:
        x_next = state.x - (hp.eta / b) * state.d
    else:
        # only possible before any motion (d_1 = 0 at a stationary draw)
        x_next = state.x.copy()
    key = _next_key(state)
    g_next = problem.grad_stochastic(x_next, key)
    g_corr = problem.grad_stochastic(state.x, key)
    diff_sq = sq_norm(state.g_cached - g_corr)
    d_next = g_next + (1.0 - a_next) * (state.d - g_corr)
    state.queries += 2
    t = state.t
    _advance(state, x_next, d_next, g_next, a_next, b)
    return StepReport(t=t, a=a_next, b=b, d_norm=np.sqrt(d_norm_sq), queries=2,
                      key=key, aux_term=g_sq, grad_sq=g_sq, diff_sq=diff_sq)


def step_oracle_storm(state: OptimizerState, problem: Problem,
                      hp: HyperParams) -> StepReport:
    # constants already absorb the learning rate: x_{t+1} = x_t - d_t / b
    a, b = state.oracle_a, state.oracle_b
    g_sq = sq_norm(state.g_cached)
    d_norm_sq = sq_norm(state.d)
    state.d_sq_sum = comp_add(state.d_sq_sum, d_norm_sq)
    x_next = state.x - (1.0 / b) * state.d
    key = _next_key(state)
    g_corr = problem.grad_stochastic(state.x, key)
    diff_sq = sq_norm(state.g_cached - g_corr)
    g_next = problem.grad_stochastic(x_next, key)
    d_next = g_next + (1.0 - a) * (state.d - g_corr)
    state.queries += 2
    t = state.t
    _advance(state, x_next, d_next, g_next, a, b)
    return StepReport(t=t, a=a, b=b, d_norm=np.sqrt(d_norm_sq), queries=2,
                      key=key, grad_sq=g_sq, diff_sq=diff_sq)


def step_sgd(state: OptimizerState, problem: Problem,
             hp: HyperParams) -> StepReport:
    g_sq = sq_norm(state.g_cached)
    d_norm_sq = sq_norm(state.d)
    x_next = state.x - hp.eta * state.g_cached
    key = _next_key(state)
    g_next = problem.grad_stochastic(x_next, key)
    state.queries += 1
    t = state.t
    _advance(state, x_next, g_next, g_next, 1.0, 1.0)
    return StepReport(t=t, a=1.0, b=1.0, d_norm=np.sqrt(d_norm_sq), queries=1,
                      key=key, grad_sq=g_sq)


def step_adagrad_norm(state: OptimizerState, problem: Problem,
                      hp: HyperParams) -> StepReport:
    g_sq = sq_norm(state.g_cached)
    state.d_sq_sum = comp_add(state.d_sq_sum, g_sq)
    b = (hp.b0 ** 2.0 + state.d_sq_sum.value) ** 0.5
    x_next = state.x - (hp.eta / b) * state.d
    key = _next_key(state)
    g_next = problem.grad_stochastic(x_next, key)
    state.queries += 1
    t = state.t
    _advance(state, x_next, g_next, g_next, 1.0, b)
    return StepReport(t=t, a=1.0, b=b, d_norm=np.sqrt(g_sq), queries=1,
                      key=key, grad_sq=g_sq)


def step_heuristic(state: HeuristicState, problem: Problem,
                   hp: HyperParams) -> StepReport:
    """Per-coordinate EMA variant; all vector operations are coordinate-wise."""
    g_sq = sq_norm(state.g_cached)
    d_norm_sq = sq_norm(state.d)
    ema_d = hp.alpha * state.ema_d_sq + (1.0 - hp.alpha) * state.d * state.d
    if state.algorithm == META_STORM_SG_H:
        raw = state.g_cached * state.g_cached
        ema_g = hp.alpha * state.ema_g_sq + (1.0 - hp.alpha) * raw
        a_next = (1.0 + ema_g / (hp.a0 * hp.a0)) ** (-2.0 / 3.0)
        b = (hp.b0 ** (1.0 / hp.p) + ema_d) ** hp.p / a_next ** hp.q
        x_next = state.x - hp.eta * state.d / b
        key = _next_key(state)
        g_next = problem.grad_stochastic(x_next, key)
        g_corr = problem.grad_stochastic(state.x, key)
        diff_sq = sq_norm(state.g_cached - g_corr)
    else:  # meta-storm-h: step size uses the momentum already in hand
        b = (hp.b0 ** (1.0 / hp.p) + ema_d) ** hp.p / state.a_current ** hp.q
        x_next = state.x - hp.eta * state.d / b
        key = _next_key(state)
        g_corr = problem.grad_stochastic(state.x, key)
        diff = state.g_cached - g_corr
        diff_sq = sq_norm(diff)
        raw = diff * diff
        ema_g = hp.alpha * state.ema_g_sq + (1.0 - hp.alpha) * raw
        a_next = (1.0 + ema_g / (hp.a0 * hp.a0)) ** (-2.0 / 3.0)
        g_next = problem.grad_stochastic(x_next, key)
    d_next = g_next + (1.0 - a_next) * (state.d - g_corr)
    state.queries += 2
    if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(d_next))
            and np.all(np.isfinite(b))):
        raise DivergedError(state.t)
    t = state.t
    state.x = x_next
    state.d = d_next
    state.g_cached = g_next
    state.a_current = a_next
    state.ema_d_sq = ema_d
    state.ema_g_sq = ema_g
    state.t += 1
    return StepReport(t=t, a=a_next, b=b, d_norm=np.sqrt(d_norm_sq), queries=2,
                      key=key, aux_vec=raw, grad_sq=g_sq, diff_sq=diff_sq)


_STEP_FUNCS = {
    META_STORM: step_meta_storm,
    META_STORM_SG: step_meta_storm_sg,
    META_STORM_NA: step_meta_storm_na,
    STORM_PLUS: step_stormplus,
    ORACLE_STORM: step_oracle_storm,
    SGD: step_sgd,
    ADAGRAD_NORM: step_adagrad_norm,
    META_STORM_H: step_heuristic,
    META_STORM_SG_H: step_heuristic,
}


def step(state, problem: Problem, hp: HyperParams) -> StepReport:
    """Dispatch one iteration for the state's algorithm."""
    return _STEP_FUNCS[state.algorithm](state, problem, hp)


@dataclass
class RunResult:
    """Everything a run produced: trace, raw accumulator terms, summary."""

    algorithm: str
    run_seed: int
    big_t: int
    out_index: int
    trace: list = field(default_factory=list)
    aux_terms: list = field(default_factory=list)
    grad_sq_terms: list = field(default_factory=list)
    diff_sq_terms: list = field(default_factory=list)
    states: list | None = None
    x_out: np.ndarray | None = None
    grad_norm_out: float | None = None
    f_final: float | None = None
    min_grad_norm: float | None = None
    mean_grad_norm: float | None = None
    queries: int = 0
    wall_time: float = 0.0
    diverged: bool = False
    diverged_at: int | None = None


def _scalar_summary(value, reducer) -> float:
    return float(reducer(value)) if isinstance(value, np.ndarray) else float(value)


def _make_record(problem, t, x, d, a, b, queries) -> TraceRecord:
    d_norm = float(np.sqrt(sq_norm(d)))
    if problem.has_true_oracle:
        g = problem.grad_true(x)
        f_value = problem.value_true(x)
        grad_true_norm = float(np.sqrt(sq_norm(g)))
        eps_norm = float(np.sqrt(sq_norm(d - g)))
    else:
        f_value = grad_true_norm = eps_norm = None
    return TraceRecord(
        t=t, f_value=f_value, grad_true_norm=grad_true_norm, d_norm=d_norm,
        eps_norm=eps_norm, a=_scalar_summary(a, np.min),
        b=None if b is None else _scalar_summary(b, np.max), queries_cum=queries)


def run(problem: Problem, algorithm: str, hp: HyperParams, x1, run_seed: int,
        big_t: int, trace_every: int = 1, log_states: bool = False) -> RunResult:
    """Drive a run through big_t iterates (big_t - 1 steps).

    The output iterate index is drawn uniformly from [1, big_t] before the
    loop so x_out can be captured in O(dimension) memory.  Trace rows are
    written for every trace_every-th iterate plus the first and last; the
    final row has no step size because no step leaves the last iterate.
    """
    if big_t < 1:
        raise ValueError(f"big_t must be at least 1, got {big_t}")
    if trace_every < 1:
        raise ValueError(f"trace_every must be at least 1, got {trace_every}")
    out_rng = np.random.default_rng(
        (run_seed & ((1 << 64) - 1), _OUTPUT_DRAW_INDEX))
    out_index = int(out_rng.integers(1, big_t + 1))
    state = init(problem, algorithm, hp, x1, run_seed, big_t=big_t)
    result = RunResult(algorithm=algorithm, run_seed=run_seed, big_t=big_t,
                       out_index=out_index)
    if log_states:
        result.states = []
    started = time.perf_counter()
    try:
        for t in range(1, big_t):
            if t == out_index:
                result.x_out = state.x
            x_t, d_t, a_t = state.x, state.d, state.a_current
            queries_t = state.queries
            report = step(state, problem, hp)
            if (t - 1) % trace_every == 0:
                result.trace.append(
                    _make_record(problem, t, x_t, d_t, a_t, report.b, queries_t))
            if report.aux_term is not None:
                result.aux_terms.append(report.aux_term)
            if report.grad_sq is not None:
                result.grad_sq_terms.append(report.grad_sq)
            if report.diff_sq is not None:
                result.diff_sq_terms.append(report.diff_sq)
            if result.states is not None:
                result.states.append(StateRecord(
                    t=t, x=x_t, d=d_t, a_next=report.a, key=report.key,
                    aux_vec=report.aux_vec))
    except DivergedError as err:
        result.diverged = True
        result.diverged_at = err.step
    final_t = state.t
    if final_t == out_index:
        result.x_out = state.x
    result.trace.append(_make_record(
        problem, final_t, state.x, state.d, state.a_current, None, state.queries))
    if result.states is not None:
        result.states.append(StateRecord(
            t=final_t, x=state.x, d=state.d, a_next=None, key=None))
    result.wall_time = time.perf_counter() - started
    result.queries = state.queries
    if problem.has_true_oracle:
        norms = [r.grad_true_norm for r in result.trace if r.grad_true_norm is not None]
        result.min_grad_norm = min(norms)
        result.mean_grad_norm = float(np.mean(norms))
        result.f_final = result.trace[-1].f_value
        if result.x_out is not None:
            result.grad_norm_out = float(np.sqrt(sq_norm(problem.grad_true(result.x_out))))
    return result
