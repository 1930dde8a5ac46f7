"""Gate demand schedules and trip-table generation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import EDGE_ORDER, Network

# demand 1: rate ranges (veh/h) per window for each cordon direction
DEMAND1 = {
    "N": [(1200, 1440), (1080, 1320), (960, 1140), (810, 990)],
    "S": [(810, 990), (960, 1140), (1080, 1320), (1200, 1440)],
    "W": [(960, 1140), (1200, 1440), (810, 990), (1080, 1320)],
    "E": [(1080, 1320), (810, 990), (1200, 1440), (960, 1140)],
}

# demand 2: each direction's five ranges are reshuffled over its gates every window
DEMAND2 = {
    "N": [(680, 820), (810, 990), (960, 1140), (1080, 1320), (1200, 1440)],
    "S": [(810, 990), (680, 820), (1080, 1320), (1200, 1440), (960, 1140)],
    "W": [(960, 1140), (1080, 1320), (1200, 1440), (680, 820), (810, 990)],
    "E": [(1080, 1320), (1200, 1440), (680, 820), (810, 990), (960, 1140)],
}

SPLIT_DEFAULT = (0.27, 0.63, 0.10)


class DemandError(ValueError):
    pass


@dataclass
class DemandSchedule:
    """Per-gate rate windows.

    ``windows[gate]`` is a list of ``(start, end, lo, hi)`` in seconds and
    veh/h.  ``shuffle`` holds, per edge, the pool of ranges redrawn over the
    edge's gates every window (demand 2); when set it overrides ``windows``
    ranges at generation time.
    """

    windows: dict[str, list[tuple[float, float, float, float]]]
    split: tuple[float, float, float] = SPLIT_DEFAULT
    turning_share: float = 1.0 / 3.0
    shuffle: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    scale: float = 1.0

    def validate(self):
        if not self.windows:
            raise DemandError("empty demand schedule")
        if abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise DemandError(f"destination split {self.split} must sum to 1")
        for gate, wins in self.windows.items():
            prev_end = 0.0
            for start, end, lo, hi in wins:
                if start != prev_end or end <= start:
                    raise DemandError(f"windows for {gate} must tile the horizon")
                if lo < 0 or hi < lo:
                    raise DemandError(f"bad rate range ({lo}, {hi}) for {gate}")
                prev_end = end

    @property
    def horizon(self) -> float:
        return max(w[-1][1] for w in self.windows.values())


def make_schedule(net: Network, profile: str, horizon: float = 4800.0,
                  scale: float = 1.0, n_windows: int = 4,
                  custom_range: tuple[float, float] = (0.0, 0.0)) -> DemandSchedule:
    """Instantiate ``demand1``, ``demand2`` or ``custom`` on a network."""
    width = horizon / n_windows
    edges = net.cordon_by_edge()
    windows: dict[str, list] = {}
    shuffle: dict[str, list] = {}
    for edge in EDGE_ORDER:
        for sid in edges[edge]:
            gate = net.intersections[sid].gate_link
            wins = []
            for k in range(n_windows):
                if profile == "demand1":
                    lo, hi = DEMAND1[edge][k % 4]
                elif profile == "demand2":
                    lo, hi = 0.0, 0.0  # drawn from the shuffle pool
                elif profile == "custom":
                    lo, hi = custom_range
                else:
                    raise DemandError(f"unknown demand profile {profile!r}")
                wins.append((k * width, (k + 1) * width, lo, hi))
            windows[gate] = wins
        if profile == "demand2":
            shuffle[edge] = list(DEMAND2[edge])
    return DemandSchedule(windows=windows, shuffle=shuffle, scale=scale)


def _gate_ranges(net: Network, schedule: DemandSchedule, rng) -> dict[str, list]:
    """Resolve shuffled ranges per gate and window."""
    if not schedule.shuffle:
        return {g: [w[2:] for w in wins] for g, wins in schedule.windows.items()}
    n_win = len(next(iter(schedule.windows.values())))
    out = {g: [None] * n_win for g in schedule.windows}
    edges = net.cordon_by_edge()
    for k in range(n_win):
        for edge in EDGE_ORDER:
            pool = list(schedule.shuffle[edge])
            order = rng.permutation(len(pool))
            gates = [net.intersections[s].gate_link for s in edges[edge]]
            for i, gate in enumerate(gates):
                if gate in out:
                    out[gate][k] = pool[order[i % len(pool)]]
    return out


def generate_demand(net: Network, schedule: DemandSchedule, seed: int):
    """Trip table ``[(departure_s, origin_link, destination_link), ...]``.

    Per window each gate draws one rate uniformly from its range and emits
    evenly spaced departures at that rate (random phase offset).  Each trip
    then draws its destination class: into the PN, across to the outside,
    or an internal PN trip starting on the gate's downstream link.
    """
    schedule.validate()
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    ranges = _gate_ranges(net, schedule, rng)
    pn_links = sorted(net.pn_links)
    exits = net.exit_links()
    p_in, p_cross, _ = schedule.split
    trips = []
    for gate in sorted(schedule.windows):
        sid = net.links[gate].to_node
        node = net.intersections[sid]
        own_exit = node.legs_out[0]
        downstream = node.legs_out[1]
        across = net.opposite_exit(gate)
        for (start, end, _, _), (lo, hi) in zip(schedule.windows[gate], ranges[gate]):
            rate = rng.uniform(lo, hi) * schedule.scale if hi > lo else lo * schedule.scale
            if rate <= 0:
                continue
            headway = 3600.0 / rate
            t = start + rng.uniform(0.0, headway)
            while t < end:
                u = rng.random()
                if u < p_in:
                    trips.append((t, gate, pn_links[rng.integers(len(pn_links))]))
                elif u < p_in + p_cross:
                    if across is not None and rng.random() >= schedule.turning_share:
                        dest = across
                    else:
                        choices = [e for e in exits if e != own_exit]
                        dest = choices[rng.integers(len(choices))]
                    trips.append((t, gate, dest))
                else:
                    choices = [l for l in pn_links if l != downstream]
                    trips.append((t, downstream, choices[rng.integers(len(choices))]))
                t += headway
    trips.sort(key=lambda tr: (tr[0], tr[1], tr[2]))
    return [(round(t, 6), o, d) for t, o, d in trips]


def write_trips(trips, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["departure_s", "origin_link", "destination_link"])
        for t, o, d in trips:
            w.writerow([repr(float(t)), o, d])


def read_trips(path: str | Path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(float(r["departure_s"]), r["origin_link"], r["destination_link"]) for r in rows]
