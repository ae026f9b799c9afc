import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lamp.errors import ConfigError
from lamp.schedule import (
    Schedule,
    build_linear_schedule,
    exp_mh_identity_check,
    phi_coeffs,
    respace,
    step_coeffs,
)


def test_two_step_hand_schedule():
    s = Schedule.from_betas([0.5, 0.5])
    np.testing.assert_allclose(s.alphas, [math.sqrt(0.5), 0.5], rtol=0, atol=1e-15)
    np.testing.assert_allclose(s.sigmas, [math.sqrt(0.5), math.sqrt(0.75)], rtol=0, atol=1e-15)
    assert s.lambdas[0] == pytest.approx(0.0, abs=1e-15)
    assert s.noise_level(1) == pytest.approx(math.sqrt(3.0))


def test_linear_schedule_invariants(schedule):
    schedule.validate()
    assert schedule.n_train_steps == 1000
    assert schedule.betas[0] == 1e-4 and schedule.betas[-1] == pytest.approx(0.02)
    assert schedule.alphas[0] == pytest.approx(math.sqrt(1 - 1e-4))
    assert np.all(np.diff(schedule.lambdas) < 0)


def test_validate_rejects_broken_schedule(schedule):
    bad = Schedule(schedule.betas, schedule.alphas * 1.001, schedule.sigmas)
    with pytest.raises(ConfigError):
        bad.validate()


@pytest.mark.parametrize(
    "args",
    [(1, 1e-4, 0.02), (1000, 0.0, 0.02), (1000, 0.02, 0.01), (1000, 1e-4, 1.0)],
)
def test_linear_schedule_rejects_bad_arguments(args):
    with pytest.raises(ConfigError):
        build_linear_schedule(*args)


def test_from_betas_rejects_zero():
    with pytest.raises(ConfigError):
        Schedule.from_betas([0.0, 0.1])


def test_phi_coeffs_hand_values():
    e, a0, a1 = phi_coeffs(math.log(2.0))
    assert e == pytest.approx(0.5, abs=1e-15)
    assert a0 == pytest.approx(0.5, abs=1e-15)
    assert a1 == pytest.approx(1 - 0.5 / math.log(2.0), abs=1e-15)
    # A1(1) = 1 - (1 - 1/e) = 1/e
    assert phi_coeffs(1.0)[2] == pytest.approx(math.exp(-1.0), abs=1e-15)


def test_phi_coeffs_clean_boundary():
    assert phi_coeffs(math.inf) == (0.0, 1.0, 1.0)


def _a1_decimal(h: float) -> Decimal:
    getcontext().prec = 60
    hd = Decimal(h)
    return 1 - (1 - (-hd).exp()) / hd


@pytest.mark.parametrize("h", [1e-12, 1e-10, 3e-9, 9.9e-9, 1.01e-8, 1e-6, 1e-3])
def test_a1_small_h_against_high_precision(h):
    got = phi_coeffs(h)[2]
    want = float(_a1_decimal(h))
    assert abs(got - want) <= 1e-7 * want


@given(st.floats(min_value=1e-6, max_value=50.0))
def test_a0_plus_exp_is_one(h):
    e, a0, a1 = phi_coeffs(h)
    assert abs(a0 + e - 1) <= 1e-15
    assert 0 < a1 < 1


def test_respace_strides(schedule):
    plan = respace(schedule, 100)
    assert plan.nfe == len(plan) == 100
    np.testing.assert_array_equal(plan.timesteps, np.arange(990, -1, -10))
    np.testing.assert_array_equal(plan.alphas, schedule.alphas[plan.timesteps])
    assert np.all(np.diff(plan.lambdas) > 0)
    full = respace(schedule, 1000)
    np.testing.assert_array_equal(full.timesteps, np.arange(999, -1, -1))


@pytest.mark.parametrize("nfe", [1, 0, 1001, 2.5])
def test_respace_rejects_bad_nfe(schedule, nfe):
    with pytest.raises(ConfigError):
        respace(schedule, nfe)


def test_step_coeffs_interior_and_final(schedule):
    plan = respace(schedule, 20)
    c = step_coeffs(plan, 3)
    assert c.h == pytest.approx(plan.lambdas[4] - plan.lambdas[3])
    assert c.h_prev == pytest.approx(plan.lambdas[3] - plan.lambdas[2])
    assert c.sigma_ratio == pytest.approx(plan.sigmas[4] / plan.sigmas[3])
    assert step_coeffs(plan, 0).h_prev is None
    last = step_coeffs(plan, 19)
    assert last.t_next is None and last.alpha_next == 1.0 and last.sigma_next == 0.0
    assert last.e_mh == 0.0 and last.A0 == 1.0
    with pytest.raises(IndexError):
        step_coeffs(plan, 20)


def test_exp_mh_identity_hand_case():
    s = Schedule.from_alphas([0.9, 0.6])
    # exp(-h) = alpha_t sigma_next / (alpha_next sigma_t) with t=1, next=0
    assert exp_mh_identity_check(s, 1, 0) <= 1e-15
    h = s.lambdas[0] - s.lambdas[1]
    assert math.exp(-h) == pytest.approx(0.6 * math.sqrt(1 - 0.81) / (0.9 * 0.8), rel=1e-14)


def test_to_config(schedule):
    assert schedule.to_config() == {"n_train_steps": 1000, "beta_start": 1e-4, "beta_end": 0.02}
