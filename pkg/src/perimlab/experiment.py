"""Scenario assembly, single runs, training, comparison and sweeps.

Every run directory holds ``manifest.txt`` (resolved config, code version,
seed), the metrics CSVs, ``summary.txt`` and a command or decision log.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ScenarioConfig
from .controllers import (FeedbackControl, FixedControl, PIControl,
                          PICordonQueueControl)
from .demand import generate_demand, make_schedule
from .marl import STATE_VERSION, TrainConfig, load_trained, train, transfer
from .metrics import SCHEMA_VERSION, read_summary, write_summary
from .network import GridSpec, Network, build_grid
from .pc import SemiModelControl
from .sim import SimConfig, Simulation

log = logging.getLogger(__name__)

OUTPUT_ENV = "PERIMLAB_OUTPUT_ROOT"
KPI_KEYS = ("pn_ttt", "pn_ttd", "en_ttt", "cordon_queue", "emission")
# manifest keys that must agree for two runs to be comparable
PAIRED_KEYS = ("profile", "rows", "cols", "pn", "link_length", "gate_length", "lanes",
               "free_flow_speed", "demand", "horizon", "clearance", "scale", "custom_range",
               "seed", "cordon_plan", "plan")


class RunError(RuntimeError):
    pass


def output_root(cfg: ScenarioConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def build_network(cfg: ScenarioConfig) -> Network:
    spec = GridSpec(cfg.link_length, cfg.gate_length, cfg.lanes, cfg.free_flow_speed)
    return build_grid(cfg.rows, cfg.cols, spec, tuple(cfg.pn))


def make_trips(cfg: ScenarioConfig, net: Network, seed: int | None = None, profile: str | None = None):
    sched = make_schedule(net, profile or cfg.demand, horizon=cfg.horizon, scale=cfg.scale,
                          custom_range=tuple(cfg.custom_range))
    return generate_demand(net, sched, cfg.seed if seed is None else seed)


def sim_config(cfg: ScenarioConfig, check_invariants: bool = False) -> SimConfig:
    return SimConfig(plan=tuple(cfg.plan), cordon_plan=tuple(cfg.cordon_plan),
                     duration=cfg.duration, check_invariants=check_invariants)


def train_config(cfg: ScenarioConfig) -> TrainConfig:
    return TrainConfig(
        episodes=cfg.episodes, decay_episodes=cfg.decay_episodes, hidden=tuple(cfg.hidden),
        learning_rate=cfg.learning_rate, optimizer=cfg.optimizer, gamma=cfg.gamma,
        batch_size=cfg.batch_size, replay_capacity=cfg.replay_capacity,
        updates_per_episode=cfg.updates_per_episode, target_every=cfg.target_every,
        seed=cfg.train_seed)


def make_controller(cfg: ScenarioConfig, net: Network, agents=None):
    c = cfg.controller
    if c == "fixed":
        return FixedControl()
    if c == "feedback":
        return FeedbackControl(ttt_crit=cfg.ttt_crit)
    if c == "pi":
        return PIControl(k_p=cfg.k_p, k_i=cfg.k_i, ttt_crit=cfg.ttt_crit, period=cfg.period)
    if c == "pi_cordon_queue":
        return PICordonQueueControl(k_p=cfg.k_p, k_i=cfg.k_i, ttt_crit=cfg.ttt_crit,
                                    period=cfg.period)
    if c == "rl_semi_model":
        if agents is None:
            donors = load_trained(cfg.weights_dir)
            if not donors:
                raise ConfigError(f"weights_dir: no .weights files in {cfg.weights_dir}")
            agents = transfer(net, donors)
        return SemiModelControl(agents, cfg.ttt_crit, cfg.k_s)
    raise ConfigError(f"controller: unknown {c!r}")


def simulate(cfg: ScenarioConfig, trips=None, agents=None, check_invariants: bool = False):
    """Run one scenario in memory; returns ``(sim, controller)``."""
    net = build_network(cfg)
    if trips is None:
        trips = make_trips(cfg, net)
    ctl = make_controller(cfg, net, agents)
    sim = Simulation(net, trips, sim_config(cfg, check_invariants))
    ctl.setup(sim)
    sim.run_until(cfg.duration, ctl.act)
    sim.close()
    return sim, ctl


def manifest_text(cfg: ScenarioConfig, extra: dict | None = None) -> str:
    lines = [f"# schema: manifest v{SCHEMA_VERSION}", f"code_version = {__version__}",
             f"state_version = {STATE_VERSION}"]
    for k, v in cfg.resolved().items():
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def run(cfg: ScenarioConfig, outdir: str | Path | None = None, plot: bool = False,
        agents=None) -> Path:
    """Run one controller and write its full output directory."""
    outdir = Path(outdir) if outdir else output_root(cfg) / f"{cfg.controller}_seed{cfg.seed}"
    sim, ctl = simulate(cfg, agents=agents)
    outdir.mkdir(parents=True, exist_ok=True)
    extra = {"controller": cfg.controller, "seed": cfg.seed,
             "vehicles_entered": sim.entered, "vehicles_exited": sim.exited,
             "trips_discarded": sim.discarded}
    sim.metrics.write_csvs(outdir, extra=extra)
    (outdir / "manifest.txt").write_text(manifest_text(cfg, {"optimizer_used": cfg.optimizer}))
    if isinstance(ctl, SemiModelControl):
        ctl.write_decisions(outdir / "decisions.csv")
    with open(outdir / "commands.csv", "w", newline="") as fh:
        fh.write(f"# schema: commands v{SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(["t", "signal", "phase"])
        w.writerows(ctl.commands)
    if sim.diagnostics:
        (outdir / "diagnostics.txt").write_text("\n".join(sim.diagnostics) + "\n")
    if plot:
        from .plots import plot_run
        plot_run(outdir)
    return outdir


def train_agents(cfg: ScenarioConfig, outdir: str | Path | None = None):
    """Train the north-edge agents on the training demand profile."""
    net = build_network(cfg)
    outdir = Path(outdir) if outdir else output_root(cfg) / "weights"

    def episode_trips(e):
        return make_trips(cfg, net, seed=cfg.train_seed * 100_003 + e, profile=cfg.train_demand)

    agents, curve = train(net, episode_trips, sim_config(cfg), train_config(cfg),
                          cfg.duration, outdir=outdir)
    return outdir, agents, curve


def read_manifest(path: str | Path) -> dict[str, str]:
    return read_summary(path)


def compare(run_dirs) -> list[dict]:
    """One row per run with the five KPIs and the improvement of the
    semi-model run (if present) over the best benchmark, per KPI."""
    run_dirs = [Path(d) for d in run_dirs]
    if len(run_dirs) < 2:
        raise RunError("compare needs at least two run directories")
    manifests = []
    for d in run_dirs:
        m = d / "manifest.txt"
        if not m.exists():
            raise RunError(f"{d}: missing manifest.txt")
        manifests.append(read_manifest(m))
    ref = manifests[0]
    for d, m in zip(run_dirs[1:], manifests[1:]):
        diff = [k for k in PAIRED_KEYS if m.get(k) != ref.get(k)]
        if diff:
            raise RunError(f"{d} is not paired with {run_dirs[0]}: differs in {', '.join(diff)}")
    rows = []
    for d, m in zip(run_dirs, manifests):
        s = read_summary(d / "summary.txt")
        rows.append({"controller": m["controller"], "run": str(d),
                     **{k: float(s[k]) for k in KPI_KEYS}})
    rl = [r for r in rows if r["controller"] == "rl_semi_model"]
    bench = [r for r in rows if r["controller"] != "rl_semi_model"]
    for r in rows:
        for k in KPI_KEYS:
            r[f"{k}_delta"] = ""
    if rl and bench:
        for k in KPI_KEYS:
            if k == "pn_ttd":
                continue  # higher production is not "better" in the same sense
            best = min(b[k] for b in bench)
            for r in rl:
                r[f"{k}_delta"] = (best - r[k]) / best if best else 0.0
    return rows


def write_table(rows, path: str | Path | None = None) -> str:
    cols = ["controller", *KPI_KEYS, *(f"{k}_delta" for k in KPI_KEYS)]
    lines = [",".join(cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r[c]
            cells.append(f"{v:.6g}" if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    text = f"# schema: compare v{SCHEMA_VERSION}\n" + "\n".join(lines) + "\n"
    if path:
        Path(path).write_text(text)
    return text


def sweep(cfg: ScenarioConfig, param: str, values, outdir: str | Path | None = None,
          agents=None):
    """One run per value; selects the value with the lowest EN-TTT
    (ties go to the smallest value)."""
    if param not in ("k_s", "seed"):
        raise ConfigError(f"sweep parameter must be k_s or seed, got {param!r}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    outdir = Path(outdir) if outdir else output_root(cfg) / f"sweep_{param}"
    results = []
    for v in values:
        v = int(v) if param == "seed" else float(v)
        c = dataclasses.replace(cfg, **{param: v})
        d = run(c, outdir / f"{param}_{v:g}", agents=agents)
        s = read_summary(d / "summary.txt")
        results.append((v, float(s["en_ttt"]), float(s["pn_ttt"])))
    best = min(results, key=lambda r: (r[1], r[0]))[0]
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "sweep.csv", "w", newline="") as fh:
        fh.write(f"# schema: sweep v{SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow([param, "en_ttt", "pn_ttt", "selected"])
        for v, en, pn in results:
            w.writerow([v, repr(en), repr(pn), int(v == best)])
    return best, results


def calibrate_ttt(cfg: ScenarioConfig, scales=(0.8, 1.2, 1.6, 2.0, 2.4, 2.8),
                  bin_width: float = 2000.0, plateau: float = 0.95):
    """Critical PN-TTT from fixed-control MFD points over a range of demand scales.

    Points are binned by TTT; the critical value is the centre of the first
    bin whose mean TTD reaches ``plateau`` times the highest bin mean.
    Returns ``(ttt_crit, points)``.
    """
    points = []
    for sc in scales:
        c = dataclasses.replace(cfg, controller="fixed", scale=float(sc))
        sim, _ = simulate(c)
        points += [(r.pn_ttt, r.pn_ttd) for r in sim.metrics.records]
    return critical_ttt(points, bin_width, plateau), points


def critical_ttt(points, bin_width: float = 2000.0, plateau: float = 0.95,
                 min_count: int = 3) -> float:
    bins: dict[int, list[float]] = {}
    for ttt, ttd in points:
        bins.setdefault(int(ttt // bin_width), []).append(ttd)
    means = {k: float(np.mean(v)) for k, v in bins.items() if len(v) >= min_count}
    if not means:
        raise RunError("not enough MFD points to calibrate")
    top = max(means.values())
    first = min(k for k, m in means.items() if m >= plateau * top)
    return (first + 0.5) * bin_width


def write_calibration(ttt_crit: float, points, outdir: str | Path) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "mfd_points.csv", "w", newline="") as fh:
        fh.write(f"# schema: mfd v{SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(["ttt", "ttd"])
        for a, b in points:
            w.writerow([repr(float(a)), repr(float(b))])
    write_summary({"ttt_crit": float(ttt_crit), "points": len(points)},
                  outdir / "calibration.txt")
    return outdir


def late_horizon_ttt(records, horizon: float, fraction: float = 0.5) -> list[float]:
    """PN-TTT of intervals in the last ``fraction`` of the demand horizon."""
    start = horizon * (1.0 - fraction)
    return [r.pn_ttt for r in records if start <= r.interval_start < horizon]


def is_finite_summary(summary: dict) -> bool:
    return all(math.isfinite(float(v)) for v in summary.values())
