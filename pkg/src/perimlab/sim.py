"""Mesoscopic point-queue simulation on a signalized grid.

Each link is a free-flow section followed by vertical queues, one FIFO per
outgoing movement.  A vehicle entering a link at time ``t`` reaches the
queue at ``t + length / speed``.  Queue heads whose movement is green are
discharged at the saturation flow of the approach, unless the receiving link
is at storage capacity (spillback).  The clock advances in 1 s steps.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

from .controllers import fixed_plan
from .metrics import MetricsLog
from .network import CORDON, EXTERNAL, UNSIGNALIZED, VEHICLE_FOOTPRINT, Network
from .routing import RoutingError, route, to_ticks

log = logging.getLogger(__name__)

TRAVERSING, QUEUED = "traversing", "queued"


class ControlError(ValueError):
    pass


@dataclass
class SimConfig:
    saturation_flow: float = 0.5  # veh/s/lane
    yellow: int = 5               # s of yellow + all-red at every switch
    footprint: float = VEHICLE_FOOTPRINT
    plan: tuple[int, ...] = (30, 30)         # interior PN signals
    cordon_plan: tuple[int, ...] = (40, 20)  # transfer / parallel at cordon signals
    duration: int = 6000
    check_invariants: bool = False


@dataclass
class Vehicle:
    id: int
    origin_link: str
    destination_link: str
    path: list[str]
    departure: float
    path_cursor: int = 0
    link_entry_time: float = 0.0
    arrive_time: float = 0.0
    queue_time: float = 0.0
    state: str = TRAVERSING

    @property
    def link(self) -> str:
        return self.path[self.path_cursor]

    @property
    def next_link(self) -> str | None:
        if self.path_cursor + 1 < len(self.path):
            return self.path[self.path_cursor + 1]
        return None


class LinkState:
    __slots__ = ("link", "storage", "speed", "fft", "rate", "traversing", "queues",
                 "count", "n_queued", "credit", "stop_cum", "next_counts")

    def __init__(self, link, footprint, sat):
        self.link = link
        self.storage = link.storage_capacity(footprint)
        self.speed = link.free_flow_speed
        self.fft = link.free_flow_time
        self.rate = link.lanes * sat
        self.traversing: deque[Vehicle] = deque()
        self.queues: dict[str, deque[Vehicle]] = {}
        self.count = 0
        self.n_queued = 0
        self.credit = 0.0
        self.stop_cum = 0.0  # cumulative queued veh*s
        self.next_counts: dict[str | None, int] = {}


class Signal:
    """Signal head.  In ``plan`` mode it follows a fixed timetable; in
    ``command`` mode it is driven by :meth:`Simulation.apply_control`."""

    def __init__(self, node, yellow: int, plan: tuple[int, ...]):
        self.node = node
        self.yellow = yellow
        self.plan = plan
        self.mode = "plan"
        self.phase: int | None = 0
        self.target = 0
        self.yellow_left = 0
        self.history: deque[bool] = deque(maxlen=10)
        self.actions: deque[int] = deque(maxlen=1)

    @property
    def green(self) -> frozenset:
        if self.phase is None or self.yellow_left > 0:
            return frozenset()
        return self.node.phases[self.phase].green_movements

    def command(self, k: int) -> bool:
        if not 0 <= k < len(self.node.phases):
            raise ControlError(f"invalid phase {k} for {self.node.id}")
        switched = k != self.target
        if switched:
            self.target = k
            self.phase = None
            self.yellow_left = self.yellow
        self.history.append(switched)
        self.actions.append(k)
        return switched

    @property
    def yellow_count(self) -> int:
        return sum(self.history)

    @property
    def last_action(self) -> int | None:
        return self.actions[-1] if self.actions else None

    def follow_plan(self, t: int):
        self.phase = fixed_plan(t, self.plan, self.yellow)

    def tick(self):
        if self.yellow_left > 0:
            self.yellow_left -= 1
            if self.yellow_left == 0:
                self.phase = self.target


class Simulation:
    def __init__(self, net: Network, trips, config: SimConfig | None = None,
                 metrics: MetricsLog | None = None, observers=()):
        self.net = net
        self.cfg = config or SimConfig()
        self.t = 0
        self.links = {lid: LinkState(ln, self.cfg.footprint, self.cfg.saturation_flow)
                      for lid, ln in sorted(net.links.items())}
        self.nodes = [nd for _, nd in sorted(net.intersections.items()) if nd.kind != EXTERNAL]
        self.signals = {
            nd.id: Signal(nd, self.cfg.yellow,
                          self.cfg.cordon_plan if nd.kind == CORDON else self.cfg.plan)
            for nd in self.nodes if nd.is_signalized}
        self.metrics = metrics or MetricsLog(
            pn_links=net.pn_links, gate_links=list(net.gate_links),
            gate_free_flow={g: net.links[g].free_flow_time for g in net.gate_links})
        self.observers = [self.metrics, *observers]
        self.pending = deque(sorted(trips))
        self.backlog: dict[str, deque] = {}
        self.insert_credit: dict[str, float] = {}
        self.vehicles: dict[int, Vehicle] = {}
        self.next_id = 0
        self.entered = 0
        self.exited = 0
        self.discarded = 0
        self.diagnostics: list[str] = []
        self.inflow_cap: dict[str, int | None] = {g: None for g in net.gate_links}
        self.admitted: dict[str, int] = {g: 0 for g in net.gate_links}
        self.inflow_moves = {m.key for m in net.movement_index.values()
                             if m.crosses_cordon == "inflow" and m.from_link in self.inflow_cap}
        self.spillback_violations = 0

    # -- control ------------------------------------------------------------

    def apply_control(self, signal: str, phase: int) -> bool:
        """Command a phase; a change starts a yellow/all-red interlock first."""
        sig = self.signals.get(signal)
        if sig is None:
            raise ControlError(f"{signal} is not signalized")
        sig.mode = "command"
        return sig.command(phase)

    def set_plan_mode(self, signal: str):
        self.signals[signal].mode = "plan"

    # -- state queries --------------------------------------------------------

    def occupancy(self, lid: str) -> float:
        ls = self.links[lid]
        return ls.count * self.cfg.footprint / (ls.link.length * ls.link.lanes)

    def movement_occupancy(self, from_link: str, to_link: str) -> float:
        ls = self.links[from_link]
        n = ls.next_counts.get(to_link, 0)
        return n * self.cfg.footprint / (ls.link.length * ls.link.lanes)

    def queued(self, lid: str) -> int:
        return self.links[lid].n_queued

    def stop_time(self, lid: str) -> float:
        return self.links[lid].stop_cum

    def link_costs(self) -> dict[str, float]:
        return {lid: ls.fft + ls.n_queued / ls.rate for lid, ls in self.links.items()}

    @property
    def present(self) -> int:
        return sum(ls.count for ls in self.links.values())

    @property
    def waiting(self) -> int:
        return sum(len(b) for b in self.backlog.values())

    # -- dynamics -------------------------------------------------------------

    def step(self, dt: int = 1):
        if dt != 1:
            raise ValueError("the simulation resolution is fixed at 1 s")
        t = self.t
        for sig in self.signals.values():
            if sig.mode == "plan":
                sig.follow_plan(t)
        self._observe(t)
        self._discharge(t)
        self._arrive(t)
        self._insert(t)
        for sig in self.signals.values():
            if sig.mode == "command":
                sig.tick()
        self.t = t + 1
        if self.cfg.check_invariants:
            self.check_invariants()

    def run_until(self, t_end: int, before_step=None):
        while self.t < t_end:
            if before_step is not None:
                before_step(self, self.t)
            self.step()

    def _observe(self, t: int):
        counts, queued, dist = {}, {}, {}
        for lid, ls in self.links.items():
            counts[lid] = ls.count
            queued[lid] = ls.n_queued
            d = 0.0
            for v in ls.traversing:
                remaining = v.arrive_time - t
                if remaining >= 1.0:
                    d += ls.speed
                elif remaining > 0.0:
                    d += ls.speed * remaining
            dist[lid] = d
            ls.stop_cum += ls.n_queued
        for obs in self.observers:
            obs.on_step(t, counts, queued, dist, self.waiting)

    def _enter(self, v: Vehicle, lid: str, t_enter: float):
        ls = self.links[lid]
        v.link_entry_time = t_enter
        v.arrive_time = t_enter + ls.fft
        v.state = TRAVERSING
        ls.traversing.append(v)
        ls.count += 1
        nxt = v.next_link
        ls.next_counts[nxt] = ls.next_counts.get(nxt, 0) + 1

    def _leave(self, v: Vehicle, ls: LinkState, t_exit: float):
        ls.count -= 1
        nxt = v.next_link
        ls.next_counts[nxt] -= 1
        for obs in self.observers:
            obs.on_link_exit(ls.link.id, v.link_entry_time, t_exit)

    def _discharge(self, t: int):
        links = self.links
        for nd in self.nodes:
            green = None if nd.kind == UNSIGNALIZED else self.signals[nd.id].green
            for lid in nd.incoming:
                ls = links[lid]
                ls.credit = min(ls.credit + ls.rate, max(ls.rate, 1.0))
                if ls.n_queued == 0:
                    continue
                while ls.credit >= 1.0:
                    best = None
                    for nxt, q in ls.queues.items():
                        if not q:
                            continue
                        if green is not None and (lid, nxt) not in green:
                            continue
                        down = links[nxt]
                        if down.count >= down.storage:
                            continue
                        if (lid, nxt) in self.inflow_moves:
                            cap = self.inflow_cap[lid]
                            if cap is not None and self.admitted[lid] >= cap:
                                continue
                        head = q[0]
                        if best is None or (head.queue_time, head.id) < (best[1].queue_time, best[1].id):
                            best = (nxt, head)
                    if best is None:
                        break
                    nxt, v = best
                    ls.queues[nxt].popleft()
                    ls.n_queued -= 1
                    ls.credit -= 1.0
                    self._leave(v, ls, t + 1)
                    if (lid, nxt) in self.inflow_moves:
                        self.admitted[lid] += 1
                    v.path_cursor += 1
                    self._enter(v, nxt, t + 1)

    def _arrive(self, t: int):
        horizon = t + 1
        for ls in self.links.values():
            tr = ls.traversing
            while tr and tr[0].arrive_time <= horizon + 1e-9:
                v = tr.popleft()
                nxt = v.next_link
                if nxt is None:
                    self._leave(v, ls, horizon)
                    del self.vehicles[v.id]
                    self.exited += 1
                    for obs in self.observers:
                        obs.on_trip_end(v.departure, horizon)
                    continue
                v.state = QUEUED
                v.queue_time = horizon
                ls.queues.setdefault(nxt, deque()).append(v)
                ls.n_queued += 1

    def _insert(self, t: int):
        horizon = t + 1
        while self.pending and self.pending[0][0] <= horizon:
            dep, origin, dest = self.pending.popleft()
            self.backlog.setdefault(origin, deque()).append((dep, origin, dest))
        costs = None
        for origin in sorted(self.backlog):
            queue = self.backlog[origin]
            if not queue:
                continue
            ls = self.links[origin]
            credit = min(self.insert_credit.get(origin, 0.0) + ls.rate, max(ls.rate, 1.0))
            while queue and credit >= 1.0 and ls.count < ls.storage:
                dep, _, dest = queue.popleft()
                if costs is None:
                    costs = self.link_costs()
                    ticks = to_ticks(costs)
                try:
                    path = route(self.net, origin, dest, costs, ticks)
                except RoutingError as exc:
                    self.discarded += 1
                    self.diagnostics.append(f"t={horizon} discard {origin}->{dest}: {exc}")
                    log.debug("discarded trip %s->%s", origin, dest)
                    continue
                v = Vehicle(self.next_id, origin, dest, path, dep)
                self.next_id += 1
                self.vehicles[v.id] = v
                self.entered += 1
                self._enter(v, origin, horizon)
                credit -= 1.0
            self.insert_credit[origin] = credit

    # -- checks ---------------------------------------------------------------

    def check_invariants(self):
        present = 0
        for lid, ls in self.links.items():
            n = len(ls.traversing) + sum(len(q) for q in ls.queues.values())
            assert n == ls.count, f"count mismatch on {lid}"
            assert ls.n_queued == sum(len(q) for q in ls.queues.values())
            assert ls.count <= ls.storage, f"storage exceeded on {lid}"
            occ = self.occupancy(lid)
            assert 0.0 <= occ <= 1.0, f"occupancy {occ} on {lid}"
            present += ls.count
        assert self.entered == self.exited + present, "vehicle conservation violated"
        assert present == len(self.vehicles)

    def close(self):
        """Flush per-vehicle PN time for vehicles still in the network."""
        for ls in self.links.values():
            for v in ls.traversing:
                self._flush_presence(v, ls)
            for q in ls.queues.values():
                for v in q:
                    self._flush_presence(v, ls)

    def _flush_presence(self, v, ls):
        for obs in self.observers:
            obs.on_presence_end(ls.link.id, v.link_entry_time, self.t)
