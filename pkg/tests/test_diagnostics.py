import random

import numpy as np
import pytest

from stormlab.diagnostics import (
    TraceRecord,
    aggregate,
    slope_estimate,
    verify_momentum_identity,
    verify_recursion,
)
from stormlab.harness import _shift_a_states, _shift_a_trace
from stormlab.optimizers import run
from stormlab.problems import NoisyQuadratic, make_least_squares
from stormlab.schedules import default_hyperparams


def _record(t, d_norm, g_norm, eps_norm, a=1.0, b=1.0):
    return TraceRecord(t=t, f_value=0.0, grad_true_norm=g_norm, d_norm=d_norm,
                       eps_norm=eps_norm, a=a, b=b, queries_cum=2 * t - 1)


def _adaptive_run(algorithm, problem, seed=2024, big_t=500, **overrides):
    overrides.setdefault("eta", 0.1)
    if algorithm in ("meta-storm", "meta-storm-sg"):
        overrides.setdefault("a0", 1.0)
    hp = default_hyperparams(algorithm, dimension=problem.dimension, **overrides)
    return hp, run(problem, algorithm, hp, problem.default_start(), seed,
                   big_t=big_t, trace_every=1, log_states=True)


PROBLEMS = [
    NoisyQuadratic(np.linspace(1.0, 5.0, 10), noise_scale=0.5),
    make_least_squares(dimension=8, n_rows=32, data_seed=7),
]


def test_aggregate_single_record():
    stats = aggregate([_record(1, d_norm=1.0, g_norm=2.0, eps_norm=0.5)])
    assert stats.h_t == 4.0 and stats.d_t == 1.0 and stats.e_t == 0.25


def test_aggregate_zero_noise_run_has_zero_error():
    problem = NoisyQuadratic(np.linspace(1.0, 3.0, 6), noise_scale=0.0)
    hp = default_hyperparams("meta-storm", a0=1.0, b0=1.0)
    res = run(problem, "meta-storm", hp, np.ones(6), 3, big_t=200, trace_every=1)
    stats = aggregate(res.trace)
    assert stats.e_t == 0.0


def test_aggregate_triangle_decomposition():
    rng = np.random.default_rng(1)
    trace = []
    for t in range(1, 101):
        d = rng.standard_normal(5)
        g = rng.standard_normal(5)
        trace.append(_record(t, d_norm=float(np.linalg.norm(d)),
                             g_norm=float(np.linalg.norm(g)),
                             eps_norm=float(np.linalg.norm(d - g))))
    stats = aggregate(trace)
    assert stats.h_t <= 2.0 * stats.d_t + 2.0 * stats.e_t + 1e-9


def test_aggregate_permutation_invariant_and_exact_on_integers():
    trace = [_record(t, d_norm=float(k), g_norm=float(k + 1), eps_norm=float(k + 2))
             for t, k in enumerate([3, 1, 4, 1, 5, 9, 2, 6], start=1)]
    stats = aggregate(trace)
    shuffled = trace[:]
    random.Random(0).shuffle(shuffled)
    stats2 = aggregate(shuffled)
    assert (stats.h_t, stats.d_t, stats.e_t) == (stats2.h_t, stats2.d_t, stats2.e_t)
    assert stats.d_t == sum(k * k for k in [3, 1, 4, 1, 5, 9, 2, 6])


def test_aggregate_rejects_empty_trace():
    with pytest.raises(ValueError):
        aggregate([])


def test_aggregate_term_sums():
    trace = [_record(1, 1.0, 1.0, 0.0)]
    stats = aggregate(trace, grad_sq_terms=[1.0, 2.0], diff_sq_terms=[0.5])
    assert stats.h_hat_t == 3.0 and stats.h_tilde_t == 0.5


@pytest.mark.parametrize("algorithm", ["meta-storm", "meta-storm-sg",
                                       "meta-storm-na", "storm-plus"])
@pytest.mark.parametrize("problem", PROBLEMS, ids=lambda p: p.kind)
def test_momentum_identity_holds(algorithm, problem):
    hp, res = _adaptive_run(algorithm, problem)
    resid = verify_momentum_identity(res.trace, res.aux_terms, hp.a0)
    assert resid < 1e-10


def test_momentum_identity_negative_control():
    problem = PROBLEMS[0]
    hp, res = _adaptive_run("meta-storm", problem)
    resid = verify_momentum_identity(_shift_a_trace(res.trace), res.aux_terms, hp.a0)
    assert resid > 1e-3


def test_momentum_identity_na_exact_increment():
    problem = PROBLEMS[0]
    hp, res = _adaptive_run("meta-storm-na", problem, big_t=100)
    # every raw term is 1, so consecutive a^(-3/2) differ by exactly 1/a0^2
    assert all(term == 1.0 for term in res.aux_terms)
    resid = verify_momentum_identity(res.trace, res.aux_terms, hp.a0)
    assert resid < 1e-12


def test_momentum_identity_rejects_gappy_trace():
    problem = PROBLEMS[0]
    hp, res = _adaptive_run("meta-storm", problem, big_t=50)
    with pytest.raises(ValueError):
        verify_momentum_identity(res.trace[::2], res.aux_terms, hp.a0)


@pytest.mark.parametrize("algorithm", ["meta-storm", "meta-storm-sg",
                                       "meta-storm-na", "storm-plus"])
@pytest.mark.parametrize("problem", PROBLEMS, ids=lambda p: p.kind)
def test_recursion_reexecution(algorithm, problem):
    for seed in (1, 2, 3):
        _, res = _adaptive_run(algorithm, problem, seed=seed, big_t=200)
        resid = verify_recursion(res.states, problem)
        assert resid < 1e-14


def test_recursion_negative_control():
    problem = PROBLEMS[0]
    _, res = _adaptive_run("meta-storm", problem, big_t=200)
    resid = verify_recursion(_shift_a_states(res.states), problem)
    assert resid > 1e-6


def test_recursion_zero_noise_exact():
    problem = NoisyQuadratic(np.linspace(1.0, 3.0, 4), noise_scale=0.0)
    hp = default_hyperparams("meta-storm", a0=1.0, b0=1.0)
    res = run(problem, "meta-storm", hp, np.ones(4), 5, big_t=100,
              trace_every=1, log_states=True)
    assert verify_recursion(res.states, problem) == 0.0


def test_recursion_requires_state_log():
    problem = PROBLEMS[0]
    hp = default_hyperparams("meta-storm", a0=1.0, eta=0.1)
    res = run(problem, "meta-storm", hp, problem.default_start(), 1, big_t=50)
    with pytest.raises(ValueError):
        verify_recursion(res.states, problem)


def test_slope_estimate_exact_power_law():
    points = [(t, t ** (-1.0 / 3.0)) for t in (10**3, 10**4, 10**5)]
    slope, r2 = slope_estimate(points)
    assert slope == pytest.approx(-1.0 / 3.0, abs=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_slope_estimate_constant_metric():
    slope, _ = slope_estimate([(10, 2.5), (100, 2.5), (1000, 2.5)])
    assert slope == pytest.approx(0.0, abs=1e-12)


def test_slope_estimate_noisy_power_law():
    rng = np.random.default_rng(0)
    for _ in range(20):
        points = [(t, t ** (-1.0 / 3.0) * (1.0 + 0.05 * rng.standard_normal()))
                  for t in (10**3, 10**4, 10**5)]
        slope, _ = slope_estimate(points)
        assert -0.40 <= slope <= -0.27


def test_slope_estimate_input_validation():
    with pytest.raises(ValueError):
        slope_estimate([(10, 1.0), (100, 0.5)])
    with pytest.raises(ValueError):
        slope_estimate([(10, 1.0), (100, 0.5), (100, 0.2)])
    with pytest.raises(ValueError):
        slope_estimate([(10, 1.0), (100, -0.5), (1000, 0.2)])
