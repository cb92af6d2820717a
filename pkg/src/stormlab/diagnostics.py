"""Trace-level analysis quantities and algebraic-identity verifiers.

Everything here is read-only: verifiers recompute quantities from logged
traces (re-querying the oracle only through logged keys, which are pure) and
never touch optimizer state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CompensatedSum, SampleKey, comp_add, sq_norm


@dataclass
class TraceRecord:
    """One telemetry row for iterate t.

    grad_true_norm, eps_norm and f_value are None when the problem offers no
    exact oracle; b is None on the final iterate of a run (no step was taken
    from it).  Per-coordinate algorithms log the coordinate minimum of the
    momentum and the maximum of the step size as conservative summaries.
    """

    t: int
    f_value: float | None
    grad_true_norm: float | None
    d_norm: float
    eps_norm: float | None
    a: float
    b: float | None
    queries_cum: int


@dataclass
class StateRecord:
    """Full per-iterate state, logged on demand for re-execution checks.

    a_next and key describe the step that left iterate t (None on the final
    record); aux_vec carries the raw per-coordinate momentum term for the
    heuristic variants.
    """

    t: int
    x: np.ndarray
    d: np.ndarray
    a_next: float | np.ndarray | None
    key: SampleKey | None
    aux_vec: np.ndarray | None = None


@dataclass
class AggregateStats:
    """Accumulated squared norms over a trace.

    h_t     sum ||grad F(x_i)||^2
    d_t     sum ||d_i||^2
    e_t     sum ||d_i - grad F(x_i)||^2
    h_hat_t   sum ||grad f(x_i, xi_i)||^2            (needs logged terms)
    h_tilde_t sum ||grad f(x_i,xi_i)-grad f(x_i,xi_{i+1})||^2  (ditto)
    e_half_t  sum a_{i+1}^(1/2) ||eps_i||^2 over i < T (optional diagnostic)
    """

    h_t: float | None
    d_t: float
    e_t: float | None
    h_hat_t: float | None
    h_tilde_t: float | None
    e_half_t: float | None


def aggregate(trace, grad_sq_terms=None, diff_sq_terms=None) -> AggregateStats:
    """Compensated sums of the squared trace quantities.

    The optional term sequences supply the stochastic-gradient summands that
    the trace rows themselves do not carry.
    """
    if not trace:
        raise ValueError("trace must be non-empty")
    d_acc = CompensatedSum()
    h_acc = CompensatedSum()
    e_acc = CompensatedSum()
    eh_acc = CompensatedSum()
    have_true = all(r.grad_true_norm is not None and r.eps_norm is not None for r in trace)
    for i, r in enumerate(trace):
        d_acc = comp_add(d_acc, r.d_norm * r.d_norm)
        if have_true:
            h_acc = comp_add(h_acc, r.grad_true_norm * r.grad_true_norm)
            e_acc = comp_add(e_acc, r.eps_norm * r.eps_norm)
            if i + 1 < len(trace):
                eh_acc = comp_add(eh_acc, math.sqrt(trace[i + 1].a) * r.eps_norm * r.eps_norm)

    def term_sum(terms):
        if terms is None:
            return None
        acc = CompensatedSum()
        for s in terms:
            acc = comp_add(acc, s)
        return acc.value

    return AggregateStats(
        h_t=h_acc.value if have_true else None,
        d_t=d_acc.value,
        e_t=e_acc.value if have_true else None,
        h_hat_t=term_sum(grad_sq_terms),
        h_tilde_t=term_sum(diff_sq_terms),
        e_half_t=eh_acc.value if have_true and len(trace) > 1 else None,
    )


def verify_momentum_identity(trace, raw_terms, a0: float) -> float:
    """Max residual of the one-step momentum accumulator identity.

    For the adaptive schedules, a_{t+1}^{-3/2} - a_t^{-3/2} equals the raw
    accumulator term divided by a0^2 in exact arithmetic.  raw_terms[t-1]
    must be the term added by the step leaving iterate t, and the trace must
    be gapless (trace_every = 1).
    """
    if len(trace) < 2:
        raise ValueError("need at least two trace rows")
    ts = [r.t for r in trace]
    if ts != list(range(ts[0], ts[0] + len(ts))):
        raise ValueError("trace has gaps; rerun with trace_every=1")
    n_steps = len(trace) - 1
    if len(raw_terms) < n_steps:
        raise ValueError(f"need {n_steps} raw terms, got {len(raw_terms)}")
    worst = 0.0
    inv_a0_sq = 1.0 / (a0 * a0)
    for i in range(n_steps):
        lhs = trace[i + 1].a ** -1.5 - trace[i].a ** -1.5
        resid = abs(lhs - raw_terms[i] * inv_a0_sq) / (1.0 + trace[i].a ** -1.5)
        worst = max(worst, resid)
    return worst


def verify_recursion(states, problem) -> float:
    """Max relative deviation of the logged estimator recursion.

    Replays every step from the logged (x_t, x_{t+1}, d_t, a_{t+1}, key)
    with fresh oracle calls and compares against the logged d_{t+1}.
    """
    if not states or len(states) < 2:
        raise ValueError("state logging required: rerun with log_states=True")
    worst = 0.0
    for rec, nxt in zip(states[:-1], states[1:]):
        if rec.a_next is None or rec.key is None:
            raise ValueError(f"state record at t={rec.t} is missing step fields")
        g_corr = problem.grad_stochastic(rec.x, rec.key)
        g_next = problem.grad_stochastic(nxt.x, rec.key)
        d_pred = g_next + (1.0 - rec.a_next) * (rec.d - g_corr)
        resid = math.sqrt(sq_norm(nxt.d - d_pred)) / (1.0 + math.sqrt(sq_norm(nxt.d)))
        worst = max(worst, resid)
    return worst


def slope_estimate(points) -> tuple[float, float]:
    """Least-squares slope of log(metric) against log(T), with R^2."""
    pts = list(points)
    if len(pts) < 3:
        raise ValueError("need at least 3 (T, metric) points")
    ts = np.array([float(t) for t, _ in pts])
    ms = np.array([float(m) for _, m in pts])
    if np.any(ts <= 0) or np.any(ms <= 0):
        raise ValueError("T values and metrics must be positive")
    if len(set(ts.tolist())) != len(ts):
        raise ValueError("T values must be distinct")
    lx = np.log(ts)
    ly = np.log(ms)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((ly - ly.mean()) @ (ly - ly.mean())))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(slope), r2
