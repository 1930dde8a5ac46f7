import math

import numpy as np
import pytest

from perimlab.demand import generate_demand, make_schedule
from perimlab.metrics import (EventLog, MetricsLog, emission_step, gate_delay,
                              integrate_queue_trace, interval_ttt_ttd, link_count_stddev,
                              read_csv, read_summary, replay)
from perimlab.sim import Simulation


def test_interval_examples():
    assert interval_ttt_ttd([1] * 20, [10.0] * 20) == (20.0, 200.0)
    assert interval_ttt_ttd([0] * 20, [0.0] * 20) == (0.0, 0.0)
    assert interval_ttt_ttd([3] * 20, [0.0] * 20) == (60.0, 0.0)


def test_queue_integration():
    assert integrate_queue_trace([10] * 100) == 1000.0
    assert integrate_queue_trace([0] * 50) == 0.0
    trace = [0, 2, 2, 5, 1, 1, 0]
    assert integrate_queue_trace(trace) == sum(trace)


def test_gate_delay_examples():
    fft = 1000 / 13.9
    assert gate_delay([(0.0, fft)], fft) == [(0.0, 0.0)]
    (_, d), = gate_delay([(0.0, 172.0)], fft)
    assert d == pytest.approx(100.1, abs=0.05)


def test_link_count_stddev():
    assert link_count_stddev([4, 4, 4]) == 0.0
    assert link_count_stddev([0, 0, 10, 10]) == 5.0
    assert link_count_stddev([10, 0, 10, 0]) == link_count_stddev([0, 10, 0, 10])


def test_emission_step():
    assert emission_step(100, 10, alpha=1, beta=1) == 110
    assert emission_step(100, 10, alpha=0, beta=0) == 0


@pytest.fixture(scope="module")
def short_run(net5):
    sched = make_schedule(net5, "demand1", horizon=900, scale=2.2)
    trips = generate_demand(net5, sched, 15000)
    events = EventLog()
    sim = Simulation(net5, trips, observers=[events])
    sim.run_until(1200)
    sim.close()
    return sim, events


def test_interval_sum_matches_vehicle_accumulation(short_run):
    sim, _ = short_run
    m = sim.metrics
    total = math.fsum(r.pn_ttt for r in m.records)
    assert total == pytest.approx(m.pn_vehicle_seconds, rel=1e-6)
    assert total == pytest.approx(m.pn_ttt, rel=1e-12)


def test_interval_bounds(short_run, net5):
    sim, _ = short_run
    for r in sim.metrics.records:
        assert 0 <= r.pn_ttt <= r.en_ttt
        assert r.pn_ttd <= r.pn_ttt * 13.9 + 1e-6  # count x speed x seconds
    assert np.all(np.diff(sim.metrics.emission_trace) >= 0)


def test_gate_delays_nonnegative(short_run):
    sim, _ = short_run
    for g, events in sim.metrics.gate_events.items():
        for t_in, t_out in events:
            assert t_out - t_in >= sim.links[g].fft - 1e-9


def test_replay_reproduces_csvs(short_run, net5, tmp_path):
    sim, events = short_run
    events.save(tmp_path / "events.log")
    fresh = MetricsLog(pn_links=net5.pn_links, gate_links=list(net5.gate_links),
                       gate_free_flow={g: net5.links[g].free_flow_time for g in net5.gate_links})
    replay(tmp_path / "events.log", fresh)
    sim.metrics.write_csvs(tmp_path / "a")
    fresh.write_csvs(tmp_path / "b")
    for name in ("mfd.csv", "intervals.csv", "gates.csv", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_schemas(short_run, tmp_path):
    sim, _ = short_run
    sim.metrics.write_csvs(tmp_path)
    assert (tmp_path / "mfd.csv").read_text().startswith("# schema: mfd v1\n")
    rows = read_csv(tmp_path / "gates.csv")
    assert set(rows[0]) == {"t", "gate_id", "queue", "avg_delay"}
    summary = read_summary(tmp_path / "summary.txt")
    assert {"pn_ttt", "pn_ttd", "en_ttt", "cordon_queue", "emission"} <= set(summary)


def test_cordon_queue_time_sums_gates(short_run):
    sim, _ = short_run
    total, per_gate = sim.metrics.cordon_queue_time()
    assert total == sum(per_gate.values())
    assert per_gate == {g: float(sum(tr)) for g, tr in sim.metrics.gate_queue_trace.items()}
