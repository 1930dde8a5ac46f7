from fractions import Fraction

import numpy as np
import pytest

from perimlab.controllers import (PIState, cordon_queue_distribution, feedback_gate,
                                  fixed_plan, kkt_check, metering_to_signal, pi_update,
                                  plan_slot, uniform_metering)
from oracles import enumerate_optimum


def test_pi_update_clamps_at_zero():
    st = PIState(2.0, 0.5, 17000.0, q_g_prev=2000.0, ttt_prev=17000.0)
    assert pi_update(st, 18000.0) == 0.0
    assert st.q_g_prev == 0.0 and st.ttt_prev == 18000.0


def test_pi_update_equilibrium():
    st = PIState(2.0, 0.5, 17000.0, q_g_prev=1234.5, ttt_prev=17000.0)
    for _ in range(5):
        assert pi_update(st, 17000.0) == 1234.5


def test_pi_update_increases_below_critical():
    st = PIState(2.0, 0.5, 17000.0, q_g_prev=1000.0, ttt_prev=16000.0)
    assert pi_update(st, 15000.0) > 1000.0


def test_pi_update_respects_upper_clamp():
    st = PIState(2.0, 0.5, 17000.0, q_g_prev=1000.0, ttt_prev=0.0, q_max=1500.0)
    assert pi_update(st, 0.0) == 1500.0


def test_pi_gains_must_be_positive():
    with pytest.raises(ValueError):
        PIState(0.0, 0.5)


def test_uniform_metering_examples():
    gates = [f"g{i}" for i in range(20)]
    assert set(uniform_metering(7200, gates, 60).values()) == {6}
    assert set(uniform_metering(0, gates, 60).values()) == {0}
    carry = {}
    total = sum(sum(uniform_metering(1000, gates, 60, carry).values()) for _ in range(10))
    assert Fraction(total) + sum(carry.values()) == Fraction(1000 * 600, 3600)
    with pytest.raises(ValueError):
        uniform_metering(100, [], 60)


def test_distribution_examples():
    assert cordon_queue_distribution(40, [80, 20], [100, 100], [100, 100]) == [40, 0]
    assert cordon_queue_distribution(30, [10, 10, 10], [20, 20, 20], [50, 50, 50]) == [10, 10, 10]
    # infeasible total is truncated to the available queue
    assert cordon_queue_distribution(100, [5, 3], [10, 10], [20, 20]) == [5, 3]
    assert cordon_queue_distribution(0, [5, 3], [10, 10], [20, 20]) == [0, 0]


def test_distribution_matches_enumeration_sample():
    rng = np.random.default_rng(3)
    for _ in range(60):
        n = int(rng.integers(1, 5))
        queues = rng.integers(0, 15, n).tolist()
        caps = rng.integers(0, 12, n).tolist()
        storage = rng.integers(1, 30, n).tolist()
        q = int(rng.integers(0, 31))
        x = cordon_queue_distribution(q, queues, caps, storage)
        assert x == enumerate_optimum(q, queues, caps, storage)
        assert kkt_check(x, queues, caps, storage)


def test_kkt_detects_suboptimal():
    assert not kkt_check([0, 40], [80, 20], [100, 100], [100, 100])


def test_feedback_gate():
    assert feedback_gate(17500, 17000) == "close_all"
    assert feedback_gate(16000, 17000) == "open_all"
    assert feedback_gate(17000, 17000) == "open_all"


def test_fixed_plan_timetable():
    assert fixed_plan(10, (30, 30)) == 0
    assert fixed_plan(32, (30, 30)) is None
    assert fixed_plan(40, (30, 30)) == 1
    seq = [fixed_plan(t, (30, 30)) for t in range(140)]
    assert seq[:70] == seq[70:140]
    assert seq[:70] != seq[1:71]
    assert plan_slot(32, (30, 30)) == 1
    assert plan_slot(67, (30, 30)) == 0


def test_metering_to_signal():
    plan = (30, 30)
    assert metering_to_signal(10, admitted=0, budget=0, plan=plan) == 2
    assert metering_to_signal(40, admitted=0, budget=0, plan=plan) == 1
    assert metering_to_signal(10, admitted=3, budget=5, plan=plan) == 0
