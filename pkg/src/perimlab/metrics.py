"""KPIs: interval TTT/TTD (MFD points), cordon queue time, gate delay,
PN link-count dispersion and a linear emission proxy."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1"
INTERVAL = 20  # s, MFD measurement interval

# Linear emission proxy, NOT an HBEFA/SUMO equivalent.
EMISSION_ALPHA = 0.16  # g per vehicle-metre driven
EMISSION_BETA = 1.2    # g per vehicle-second idling in a queue


@dataclass
class IntervalRecord:
    interval_start: int
    pn_ttt: float
    pn_ttd: float
    en_ttt: float
    per_gate_queue: dict[str, float]
    per_link_count: dict[str, int]
    emission: float


def interval_ttt_ttd(counts, distances, dt: float = 1.0) -> tuple[float, float]:
    """TTT (veh*s) and TTD (veh*m) from per-step PN counts and moved distances."""
    return float(math.fsum(c * dt for c in counts)), float(math.fsum(distances))


def integrate_queue_trace(trace, dt: float = 1.0) -> float:
    """Step (left-Riemann) integral of a piecewise-constant queue trace."""
    return float(sum(q for q in trace) * dt)


def gate_delay(events, free_flow_time: float, bin_s: float = 300.0):
    """Average gate delay per reporting bin.

    ``events`` are ``(t_entry, t_exit)`` pairs for vehicles leaving the gate
    link; delay = actual travel time - free-flow time, binned by exit time.
    """
    bins: dict[int, list[float]] = {}
    for t_in, t_out in events:
        bins.setdefault(int(t_out // bin_s), []).append((t_out - t_in) - free_flow_time)
    return [(k * bin_s, sum(v) / len(v)) for k, v in sorted(bins.items())]


def link_count_stddev(counts) -> float:
    """Population standard deviation of per-link vehicle counts."""
    arr = np.asarray(list(counts), dtype=float)
    if arr.size == 0:
        return 0.0
    return float(arr.std())


def emission_step(moving_distance: float, idle_veh_s: float,
                  alpha: float = EMISSION_ALPHA, beta: float = EMISSION_BETA) -> float:
    return alpha * moving_distance + beta * idle_veh_s


@dataclass
class MetricsLog:
    """Accumulates KPIs from the per-step observation stream of one run."""

    pn_links: frozenset
    gate_links: list[str]
    gate_free_flow: dict[str, float]
    interval: int = INTERVAL
    alpha: float = EMISSION_ALPHA
    beta: float = EMISSION_BETA
    gate_bin: float = 300.0

    records: list[IntervalRecord] = field(default_factory=list)
    gate_queue_trace: dict[str, list[int]] = field(default_factory=dict)
    gate_events: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    link_count_std: list[tuple[int, float]] = field(default_factory=list)
    emission_trace: list[float] = field(default_factory=list)
    pn_vehicle_seconds: float = 0.0  # vehicle-by-vehicle accumulation
    en_ttt: float = 0.0
    pn_ttt: float = 0.0
    pn_ttd: float = 0.0
    emission: float = 0.0
    trips_completed: int = 0
    trip_time_total: float = 0.0

    def __post_init__(self):
        for g in self.gate_links:
            self.gate_queue_trace.setdefault(g, [])
            self.gate_events.setdefault(g, [])
        self._reset_interval(0)

    def _reset_interval(self, start: int):
        self._start = start
        self._ttt = 0.0
        self._ttd = 0.0
        self._en = 0.0
        self._em = 0.0
        self._gq = {g: 0 for g in self.gate_links}
        self._steps = 0

    @property
    def last_pn_ttt(self) -> float:
        """PN-TTT of the most recent completed interval (0 before the first)."""
        return self.records[-1].pn_ttt if self.records else 0.0

    def on_step(self, t: int, counts: dict[str, int], queued: dict[str, int],
                dist: dict[str, float], backlog: int = 0, dt: float = 1.0):
        pn_count = 0
        pn_dist = 0.0
        all_count = 0
        all_dist = 0.0
        all_queued = 0
        for lid, c in counts.items():
            all_count += c
            all_queued += queued[lid]
            d = dist[lid]
            all_dist += d
            if lid in self.pn_links:
                pn_count += c
                pn_dist += d
        step_em = emission_step(all_dist, all_queued * dt, self.alpha, self.beta)
        self.emission += step_em
        self.emission_trace.append(self.emission)
        self._ttt += pn_count * dt
        self._ttd += pn_dist
        self._en += (all_count + backlog) * dt
        self._em += step_em
        self.en_ttt += (all_count + backlog) * dt
        self.pn_ttt += pn_count * dt
        self.pn_ttd += pn_dist
        for g in self.gate_links:
            q = queued[g]
            self.gate_queue_trace[g].append(q)
            self._gq[g] += q
        self._steps += 1
        if (t + 1) % self.interval == 0:
            pn_counts = {l: counts[l] for l in sorted(self.pn_links)}
            self.records.append(IntervalRecord(
                interval_start=self._start, pn_ttt=self._ttt, pn_ttd=self._ttd,
                en_ttt=self._en,
                per_gate_queue={g: self._gq[g] / self._steps for g in self.gate_links},
                per_link_count=pn_counts, emission=self._em,
            ))
            self.link_count_std.append((self._start, link_count_stddev(pn_counts.values())))
            self._reset_interval(t + 1)

    def on_link_exit(self, link: str, t_entry: float, t_exit: float):
        if link in self.pn_links:
            self.pn_vehicle_seconds += t_exit - t_entry
        if link in self.gate_events:
            self.gate_events[link].append((t_entry, t_exit))

    def on_presence_end(self, link: str, t_entry: float, t_end: float):
        if link in self.pn_links:
            self.pn_vehicle_seconds += t_end - t_entry

    def on_trip_end(self, t_departure: float, t_exit: float):
        self.trips_completed += 1
        self.trip_time_total += t_exit - t_departure

    # -- derived KPIs -------------------------------------------------------

    def cordon_queue_time(self) -> tuple[float, dict[str, float]]:
        per_gate = {g: float(sum(tr)) for g, tr in self.gate_queue_trace.items()}
        return float(sum(per_gate.values())), per_gate

    def gate_delays(self, gate: str):
        return gate_delay(self.gate_events[gate], self.gate_free_flow[gate], self.gate_bin)

    def summary(self) -> dict[str, float]:
        total_q, _ = self.cordon_queue_time()
        return {
            "pn_ttt": self.pn_ttt,
            "pn_ttd": self.pn_ttd,
            "en_ttt": self.en_ttt,
            "cordon_queue": total_q,
            "emission": self.emission,
        }

    # -- export -------------------------------------------------------------

    def write_csvs(self, outdir: str | Path, extra: dict | None = None):
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "mfd.csv", "w", newline="") as fh:
            fh.write(f"# schema: mfd v{SCHEMA_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(["interval_start", "ttt", "ttd"])
            for r in self.records:
                w.writerow([r.interval_start, _fmt(r.pn_ttt), _fmt(r.pn_ttd)])
        with open(outdir / "intervals.csv", "w", newline="") as fh:
            fh.write(f"# schema: intervals v{SCHEMA_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(["interval_start", "pn_ttt", "pn_ttd", "en_ttt", "pn_count_std", "emission"])
            for r, (_, sd) in zip(self.records, self.link_count_std):
                w.writerow([r.interval_start, _fmt(r.pn_ttt), _fmt(r.pn_ttd), _fmt(r.en_ttt),
                            _fmt(sd), _fmt(r.emission)])
        delays = {g: dict(self._interval_delays(g)) for g in self.gate_links}
        with open(outdir / "gates.csv", "w", newline="") as fh:
            fh.write(f"# schema: gates v{SCHEMA_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(["t", "gate_id", "queue", "avg_delay"])
            for r in self.records:
                for g in self.gate_links:
                    d = delays[g].get(r.interval_start)
                    w.writerow([r.interval_start, g, _fmt(r.per_gate_queue[g]),
                                "" if d is None else _fmt(d)])
        summary = self.summary()
        if extra:
            summary.update(extra)
        write_summary(summary, outdir / "summary.txt")

    def _interval_delays(self, gate: str):
        return gate_delay(self.gate_events[gate], self.gate_free_flow[gate], self.interval)


def _fmt(x: float) -> str:
    return repr(round(float(x), 9))


def write_summary(summary: dict, path: str | Path):
    with open(path, "w") as fh:
        fh.write(f"# schema: summary v{SCHEMA_VERSION}\n")
        for k, v in summary.items():
            fh.write(f"{k} = {_fmt(v) if isinstance(v, float) else v}\n")


def read_summary(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        lines = [l for l in fh if not l.startswith("#")]
    return list(csv.DictReader(lines))


# -- event log --------------------------------------------------------------

class EventLog:
    """Line-oriented record of everything MetricsLog consumes.

    ``S t backlog`` opens a step, ``L link count queued dist`` lines follow,
    ``X link t_entry t_exit`` records a link exit, ``P link t_entry t_end``
    a vehicle still present at the end and ``T t_dep t_exit`` a completed
    trip.
    """

    def __init__(self):
        self.lines: list[str] = []

    def on_step(self, t, counts, queued, dist, backlog=0, dt=1.0):
        self.lines.append(f"S {t} {backlog}")
        for lid in counts:
            self.lines.append(f"L {lid} {counts[lid]} {queued[lid]} {dist[lid]!r}")

    def on_link_exit(self, link, t_entry, t_exit):
        self.lines.append(f"X {link} {t_entry!r} {t_exit!r}")

    def on_trip_end(self, t_departure, t_exit):
        self.lines.append(f"T {t_departure!r} {t_exit!r}")

    def on_presence_end(self, link, t_entry, t_end):
        self.lines.append(f"P {link} {t_entry!r} {t_end!r}")

    def save(self, path: str | Path):
        Path(path).write_text("\n".join(self.lines) + "\n")


def replay(path: str | Path, metrics: MetricsLog) -> MetricsLog:
    """Feed a saved event log through a fresh MetricsLog."""
    step = None

    def flush():
        if step is not None:
            t, backlog, counts, queued, dist = step
            metrics.on_step(t, counts, queued, dist, backlog)

    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "S":
            flush()
            step = (int(parts[1]), int(parts[2]), {}, {}, {})
        elif tag == "L":
            _, counts, queued, dist = step[1], step[2], step[3], step[4]
            counts[parts[1]] = int(parts[2])
            queued[parts[1]] = int(parts[3])
            dist[parts[1]] = float(parts[4])
        elif tag == "X":
            flush()
            step = None
            metrics.on_link_exit(parts[1], float(parts[2]), float(parts[3]))
        elif tag == "P":
            flush()
            step = None
            metrics.on_presence_end(parts[1], float(parts[2]), float(parts[3]))
        elif tag == "T":
            flush()
            step = None
            metrics.on_trip_end(float(parts[1]), float(parts[2]))
    flush()
    return metrics
