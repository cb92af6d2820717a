import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stormlab.errors import ConfigError
from stormlab.schedules import (
    ALGORITHMS,
    META_STORM,
    META_STORM_NA,
    META_STORM_SG,
    NA_A0_FLOOR,
    STORM_PLUS,
    HyperParams,
    default_hyperparams,
    momentum_ms,
    momentum_na,
    momentum_sg,
    oracle_tuned_constants,
    stepsize,
    stepsize_stormplus,
    validate_hyperparams,
)


def test_momentum_sg_values():
    assert momentum_sg(0.0, 1.0) == 1.0
    assert momentum_sg(7.0, 1.0) == pytest.approx(0.25, rel=1e-15)       # 8^(-2/3)
    assert momentum_sg(63.0, 1.0) == pytest.approx(0.0625, rel=1e-15)    # 64^(-2/3)


def test_momentum_sg_rejects_negative_sum():
    with pytest.raises(ValueError):
        momentum_sg(-1.0, 1.0)


def test_momentum_ms_values():
    assert momentum_ms(0.0, 1.0) == 1.0   # empty accumulator gives a_1 = 1
    assert momentum_ms(7.0, 1.0) == pytest.approx(0.25, rel=1e-15)


def test_momentum_na_values_and_constraint():
    assert momentum_na(0, 1.0) == 1.0
    assert momentum_na(7, 1.0) == pytest.approx(0.25, rel=1e-15)
    with pytest.raises(ValueError):
        momentum_na(3, 0.5)  # 0.5 < sqrt(2/3)
    with pytest.raises(ValueError):
        momentum_na(3, NA_A0_FLOOR)


def test_stepsize_values():
    hp_half = HyperParams(b0=1.0, p=0.5)
    assert stepsize(0.0, 1.0, hp_half) == 1.0
    assert stepsize(3.0, 1.0 / 16.0, hp_half) == pytest.approx(4.0, rel=1e-14)
    hp_quarter = HyperParams(b0=1.0, p=0.25)
    assert stepsize(15.0, 1.0, hp_quarter) == pytest.approx(2.0, rel=1e-14)
    with pytest.raises(ValueError):
        stepsize(1.0, 0.0, hp_half)
    with pytest.raises(ValueError):
        stepsize(-1.0, 1.0, hp_half)


def test_stepsize_is_adagrad_norm_at_p_half_full_momentum():
    hp = HyperParams(b0=0.37, p=0.5)
    for d_sq in (0.0, 1.5, 100.0, 1e8):
        assert stepsize(d_sq, 1.0, hp) == (0.37 ** 2.0 + d_sq) ** 0.5


def test_stepsize_stormplus_values():
    assert stepsize_stormplus(0.0) == 0.0
    assert stepsize_stormplus(8.0) == pytest.approx(2.0, rel=1e-15)
    assert stepsize_stormplus(27.0) == pytest.approx(3.0, rel=1e-15)
    with pytest.raises(ValueError):
        stepsize_stormplus(-1.0)


def test_oracle_tuned_constants_zero_noise():
    a, b = oracle_tuned_constants(3.0, 0.0, 1000, 1.0)
    assert b == pytest.approx(2.0 * math.sqrt(2.0) * 3.0, rel=1e-15)
    assert a == 1.0


def test_oracle_tuned_constants_arithmetic():
    a, b = oracle_tuned_constants(1.0, 1.0, 10**6, 1.0)
    b_expected = 2.0 * math.sqrt(2.0) + 100.0  # (sigma^2 T)^(1/3) = 100
    assert b == pytest.approx(b_expected, rel=1e-14)
    assert a == pytest.approx(8.0 / b_expected**2, rel=1e-14)


@given(st.floats(0.01, 100.0), st.floats(0.0, 50.0),
       st.integers(1, 10**7), st.floats(1e-3, 1e3))
def test_oracle_tuned_identity_when_a_below_one(beta, sigma, big_t, delta_f):
    a, b = oracle_tuned_constants(beta, sigma, big_t, delta_f)
    assert 0.0 < a <= 1.0
    if a < 1.0:
        assert a == 8.0 * beta * beta / (b * b)


def test_oracle_tuned_rejects_nonpositive_delta():
    with pytest.raises(ValueError):
        oracle_tuned_constants(1.0, 1.0, 10, 0.0)


@given(st.floats(0.01, 0.99))
def test_p_plus_two_q_exact(p):
    hp = HyperParams(p=p)
    assert hp.p + 2.0 * hp.q == 1.0


@given(st.lists(st.floats(0.0, 1e8, allow_nan=False), min_size=1, max_size=50),
       st.floats(0.1, 100.0))
def test_momentum_monotone_in_accumulator(terms, a0):
    total = 0.0
    prev = momentum_sg(0.0, a0)
    assert prev == 1.0
    for term in terms:
        total += term
        cur = momentum_sg(total, a0)
        assert 0.0 < cur <= prev <= 1.0
        prev = cur


@given(st.lists(st.floats(1e-6, 1e3), min_size=2, max_size=40),
       st.floats(0.5, 30.0))
def test_momentum_accumulator_identity(terms, a0):
    # a_{t+1}^(-3/2) - a_t^(-3/2) == s_t / a0^2, the one-step bookkeeping
    # the adaptive schedules rely on; term scale bounded so the pow
    # round-trip error stays well inside the 1e-10 budget
    running = 0.0
    prev_inv = momentum_sg(running, a0) ** -1.5
    for term in terms:
        running += term
        inv = momentum_sg(running, a0) ** -1.5
        resid = abs(inv - prev_inv - term / (a0 * a0)) / (1.0 + prev_inv)
        assert resid < 1e-10
        prev_inv = inv


def test_p_range_enforced_per_algorithm():
    with pytest.raises(ConfigError):
        validate_hyperparams(META_STORM_SG, HyperParams(p=0.1))
    with pytest.raises(ConfigError):
        validate_hyperparams(META_STORM, HyperParams(p=0.15))
    # lower boundary of the meta-storm range is inclusive
    validate_hyperparams(META_STORM, HyperParams(p=(3.0 - math.sqrt(7.0)) / 2.0))
    with pytest.raises(ConfigError):
        validate_hyperparams(META_STORM_NA, HyperParams(p=0.6))
    with pytest.raises(ConfigError):
        validate_hyperparams(META_STORM_NA, HyperParams(p=0.25, a0=0.5))
    validate_hyperparams(META_STORM_NA, HyperParams(p=0.25, a0=1.0))


def test_validation_reports_all_violations():
    try:
        validate_hyperparams(META_STORM_SG, HyperParams(p=0.1, a0=-1.0, eta=0.0))
    except ConfigError as err:
        assert len(err.violations) >= 3
    else:
        pytest.fail("expected ConfigError")


def test_default_presets():
    hp = default_hyperparams(META_STORM)
    assert (hp.p, hp.a0, hp.b0) == (0.20, 1e8, 1e-8)
    hp = default_hyperparams(META_STORM_SG)
    assert (hp.p, hp.a0, hp.b0) == (0.25, 1e8, 1e-8)
    hp = default_hyperparams("meta-storm-h")
    assert (hp.p, hp.a0, hp.b0, hp.alpha) == (0.50, 1.0, 1e-8, 0.99)
    hp = default_hyperparams(STORM_PLUS, dimension=123)
    assert (hp.a0, hp.b0) == (123.0, 1.0)
    with pytest.raises(ConfigError):
        default_hyperparams(STORM_PLUS)  # needs the dimension
    with pytest.raises(ConfigError):
        default_hyperparams("no-such-algorithm")
    for algorithm in ALGORITHMS:
        hp = default_hyperparams(algorithm, dimension=4)
        validate_hyperparams(algorithm, hp)
