import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from perimlab.config import ConfigError
from perimlab.network import movement_sets
from perimlab.pc import (PcFeedback, decide, modify_q, penalty_factor, phase_penalties)

finite = st.floats(-50, 50, allow_nan=False)


def test_penalty_factor_examples():
    assert penalty_factor(PcFeedback(18500, 17000, 750)) == 2.0
    assert penalty_factor(PcFeedback(16000, 17000, 750)) == 0.0
    assert penalty_factor(PcFeedback(17000, 17000, 750)) == 0.0
    assert penalty_factor(PcFeedback(18500, 17000, 1500)) == 1.0
    with pytest.raises(ConfigError):
        penalty_factor(PcFeedback(1, 0, 0))
    with pytest.raises(ConfigError):
        penalty_factor(PcFeedback(1, 0, -5))


def test_modify_q_examples():
    q = np.array([5.0, 4.0, 3.0])
    assert np.array_equal(modify_q(q, [0.7, 0.3, 0.0], 0.0, 2), q)
    assert modify_q(q, [0.6, 0.0, 0.0], 2.0, 2)[0] == pytest.approx(5.0 - 1.2, abs=1e-12)


def test_decide_regime_flip():
    a, q_mod = decide([5.0, 4.0, 3.0], [2.4, 1.2, 0.0], 1.0, 2)
    np.testing.assert_allclose(q_mod, [2.6, 2.8, 3.0], atol=1e-12)
    assert a == 2
    a, _ = decide([5.0, 4.0, 3.0], [2.4, 1.2, 0.0], 0.0, 2)
    assert a == 0
    a, _ = decide([1.0, 2.0, 9.0], [0.1, 0.1, 0.0], 100.0, 2)
    assert a == 2


def test_phase_penalties_follow_movement_sets(net5):
    sid = net5.cordon_signals[0]
    nd = net5.intersections[sid]
    m_in, m_out = movement_sets(net5, sid)
    rng = np.random.default_rng(0)
    occ = {m.key: float(rng.uniform(0, 0.3)) for m in nd.movements}
    p0, p1, p2 = phase_penalties(net5, sid, occ)
    assert p2 == 0.0
    green0 = nd.phases[0].green_movements
    green1 = nd.phases[1].green_movements
    assert p0 == pytest.approx(sum(occ[m] for m in m_out - green0) + sum(occ[m] for m in m_in & green0))
    assert p1 == pytest.approx(sum(occ[m] for m in m_out - green1) + sum(occ[m] for m in m_in & green1))


def test_straight_only_reduction(net5):
    """With turning occupancies at zero, the transfer phase is penalized by the
    inflow leg occupancy and the parallel phase by the outflow leg occupancy."""
    rng = np.random.default_rng(1)
    for sid in net5.cordon_signals:
        nd = net5.intersections[sid]
        outward, pn_leg = nd.legs_in[0], nd.legs_in[1]
        for _ in range(20):
            o_in, o_out = rng.uniform(0, 1, 2)
            occ = {}
            for m in nd.movements:
                if m.kind != "through":
                    occ[m.key] = 0.0
                elif m.from_link == outward:
                    occ[m.key] = o_in
                elif m.from_link == pn_leg:
                    occ[m.key] = o_out
                else:
                    occ[m.key] = float(rng.uniform(0, 1))
            pens = phase_penalties(net5, sid, occ)
            assert pens[0] == pytest.approx(o_in, abs=1e-12)
            assert pens[1] == pytest.approx(o_out, abs=1e-12)
            factor = float(rng.uniform(0, 3))
            q = rng.normal(size=3)
            np.testing.assert_allclose(modify_q(q, pens, factor, 2),
                                       [q[0] - o_in * factor, q[1] - o_out * factor, q[2]], atol=1e-12)


@given(st.lists(finite, min_size=3, max_size=3), st.lists(st.floats(0, 3), min_size=3, max_size=3),
       st.floats(0, 100))
def test_pc_value_untouched(q, pens, factor):
    pens[2] = 0.0
    assert modify_q(q, pens, factor, 2)[2] == q[2]


@given(st.lists(finite, min_size=3, max_size=3), st.lists(st.floats(0, 3), min_size=3, max_size=3),
       st.floats(0, 50), st.floats(0, 50))
def test_pc_choice_monotone_in_factor(q, pens, f, extra):
    pens[2] = 0.0
    if decide(q, pens, f, 2)[0] == 2:
        assert decide(q, pens, f + extra, 2)[0] == 2


@given(st.lists(finite, min_size=3, max_size=3), st.floats(0, 100))
def test_zero_occupancy_is_identity(q, factor):
    assert np.array_equal(modify_q(q, [0.0, 0.0, 0.0], factor, 2), np.asarray(q, dtype=float))
