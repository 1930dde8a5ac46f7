import pytest

from perimlab.controllers import fixed_plan
from perimlab.demand import generate_demand, make_schedule
from perimlab.network import GridSpec, build_grid
from perimlab.sim import QUEUED, ControlError, SimConfig, Simulation


@pytest.fixture(scope="module")
def slow_net():
    return build_grid(3, 3, GridSpec(free_flow_speed=10.0))


def test_single_vehicle_queue_then_first_green(slow_net):
    # n1_0 is the west cordon signal; n0_0>n1_0 is its 300 m parallel leg
    o, d = "n0_0>n1_0", "n1_0>n1_1"
    sim = Simulation(slow_net, [(0.0, o, d)])
    sim.apply_control("n1_0", 0)  # transfer phase: red for the parallel leg o
    sim.run_until(1)
    v = next(iter(sim.vehicles.values()))
    assert v.link == o and v.link_entry_time == 1.0
    sim.run_until(30)
    assert v.state != QUEUED
    sim.run_until(31)  # 300 m at 10 m/s after entry at t=1
    assert v.state == QUEUED and v.queue_time == 31
    sim.run_until(60)
    assert v.link == o  # held by red
    sim.apply_control("n1_0", 1)
    sim.run_until(65)  # 5 s interlock
    assert v.link == o
    sim.run_until(66)
    assert v.link == d and v.link_entry_time == 66


def test_full_receiving_link_blocks_discharge(slow_net):
    o, d = "n0_0>n1_0", "n1_0>n1_1"
    sim = Simulation(slow_net, [(0.0, o, d)])
    sim.apply_control("n1_0", 1)
    sim.run_until(10)
    sim.links[d].count = sim.links[d].storage  # pretend the PN leg is full
    assert sim.links[d].storage == 80
    sim.run_until(40)
    v = next(iter(sim.vehicles.values()))
    assert v.link == o and v.state == QUEUED
    sim.links[d].count = 0
    sim.run_until(41)
    assert v.link == d


def test_same_command_keeps_green(slow_net):
    sim = Simulation(slow_net, [])
    assert sim.apply_control("n1_0", 0) is False  # already the target
    sim.step()
    assert sim.signals["n1_0"].green
    assert sim.apply_control("n1_0", 0) is False
    sim.step()
    assert sim.signals["n1_0"].green


def test_switch_runs_five_second_interlock(slow_net):
    sim = Simulation(slow_net, [])
    sim.apply_control("n1_0", 0)
    sim.step()
    assert sim.apply_control("n1_0", 1) is True
    for _ in range(5):
        assert not sim.signals["n1_0"].green
        sim.step()
    assert sim.signals["n1_0"].green == sim.net.intersections["n1_0"].phases[1].green_movements


def test_alternating_every_action_step_never_green(slow_net):
    sim = Simulation(slow_net, [])
    for k in range(20):
        sim.apply_control("n1_0", k % 2 + 1 if k else 1)
        for _ in range(5):
            assert not sim.signals["n1_0"].green
            sim.step()


def test_yellow_count_counts_triggered_interlocks(slow_net):
    sim = Simulation(slow_net, [])
    for a in (0, 0, 1, 1, 2, 0, 0, 0, 0, 0, 0):
        sim.apply_control("n1_0", a)
    assert sim.signals["n1_0"].yellow_count == 3  # 0->1, 1->2, 2->0 within the last ten


def test_invalid_phase_rejected(slow_net):
    sim = Simulation(slow_net, [])
    with pytest.raises(ControlError):
        sim.apply_control("n1_0", 3)
    with pytest.raises(ControlError):
        sim.apply_control("n0_0", 0)  # unsignalized corner


def test_fifo_within_movement(slow_net):
    o, d = "n0_0>n1_0", "n1_0>n1_1"
    trips = [(float(t), o, d) for t in range(0, 20, 2)]
    sim = Simulation(slow_net, trips)
    sim.apply_control("n1_0", 0)
    order = []
    sim.observers.append(type("Obs", (), {
        "on_step": lambda *a, **k: None, "on_trip_end": lambda *a: None,
        "on_presence_end": lambda *a: None,
        "on_link_exit": lambda self, link, t_in, t_out: order.append((link, t_in, t_out)),
    })())
    sim.run_until(80)
    assert sim.queued(o) == 10
    sim.apply_control("n1_0", 1)
    sim.run_until(200)
    entries = [t_in for link, t_in, _ in order if link == o]
    assert len(entries) == 10 and entries == sorted(entries)


def test_conservation_and_occupancy_every_step(net5):
    sched = make_schedule(net5, "demand1", horizon=900, scale=2.2)
    trips = generate_demand(net5, sched, 15000)
    sim = Simulation(net5, trips, SimConfig(check_invariants=True))
    sim.run_until(1100)
    assert sim.entered > 1000
    assert sim.entered == sim.exited + sim.present
    assert sim.spillback_violations == 0


def test_runs_are_deterministic(net5):
    sched = make_schedule(net5, "demand2", horizon=600, scale=2.0)
    trips = generate_demand(net5, sched, 7)
    a = Simulation(net5, trips)
    b = Simulation(net5, trips)
    a.run_until(700)
    b.run_until(700)
    assert a.metrics.records == b.metrics.records
    assert [(v.id, v.path, v.path_cursor) for v in a.vehicles.values()] == \
        [(v.id, v.path, v.path_cursor) for v in b.vehicles.values()]


def test_unreachable_trip_discarded_with_diagnostic(net5):
    sim = Simulation(net5, [(0.0, "n4_2>x5_2", "xm1_2>n0_2")])
    sim.run_until(5)
    assert sim.discarded == 1 and sim.entered == 0
    assert "discard" in sim.diagnostics[0]


def test_plan_mode_follows_timetable(slow_net):
    sim = Simulation(slow_net, [])
    for t in range(200):
        sim.step()
        assert sim.signals["n1_1"].phase == fixed_plan(t, (30, 30), 5)


def test_step_resolution_fixed(slow_net):
    with pytest.raises(ValueError):
        Simulation(slow_net, []).step(2)
