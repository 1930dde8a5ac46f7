"""Semi-model-dependent perimeter control.

At test time each cordon agent's Q-values are penalized by a PN-wide
feedback term.  For every non-PC phase ``a`` the penalty is

    (sum of O_m over M_out not green in a  +  sum of O_m over M_in green in a)
    * max((TTT - TTT_crit) / K_s, 0)

while the PC phase keeps its raw Q-value.  The agent nets are never updated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .config import ConfigError
from .controllers import ACTION_STEP, Controller
from .marl import StateTracker
from .network import phase_overlap


@dataclass
class PcFeedback:
    ttt_now: float
    ttt_crit: float
    k_s: float


def penalty_factor(fb: PcFeedback) -> float:
    if not fb.k_s > 0:
        raise ConfigError(f"K_s must be positive, got {fb.k_s}")
    return max((fb.ttt_now - fb.ttt_crit) / fb.k_s, 0.0)


def phase_penalties(net, signal: str, occ) -> list[float]:
    """Unscaled per-phase penalty; ``occ`` maps movement key -> occupancy."""
    nd = net.intersections[signal]
    out = []
    for ph in nd.phases:
        if ph.is_pc_phase:
            out.append(0.0)
            continue
        _, out_com, in_overlap, _ = phase_overlap(net, ph, signal)
        out.append(math.fsum(occ.get(m, 0.0) for m in sorted(out_com))
                   + math.fsum(occ.get(m, 0.0) for m in sorted(in_overlap)))
    return out


def movement_occupancies(sim, signal: str) -> dict[tuple[str, str], float]:
    nd = sim.net.intersections[signal]
    return {m.key: sim.movement_occupancy(*m.key) for m in nd.movements}


def modify_q(q, penalties, factor: float, pc_phase: int) -> np.ndarray:
    """Penalized action values; the PC phase entry is passed through untouched."""
    q = np.asarray(q, dtype=float)
    out = q - np.asarray(penalties, dtype=float) * factor
    out[pc_phase] = q[pc_phase]
    return out


@dataclass
class Decision:
    t: int
    signal: str
    q: np.ndarray
    penalties: list[float]
    factor: float
    q_mod: np.ndarray
    action: int
    greedy: int


def decide(q, penalties, factor: float, pc_phase: int) -> tuple[int, np.ndarray]:
    q_mod = modify_q(q, penalties, factor, pc_phase)
    return int(np.argmax(q_mod)), q_mod


class SemiModelControl(Controller):
    """Trained local agents with the PN feedback penalty applied at decision time."""

    def __init__(self, agents: dict[str, nn.Mlp], ttt_crit: float, k_s: float):
        super().__init__(name="rl_semi_model")
        if not k_s > 0:
            raise ConfigError(f"K_s must be positive, got {k_s}")
        self.agents = agents
        self.ttt_crit = ttt_crit
        self.k_s = k_s
        self.decisions: list[Decision] = []

    def setup(self, sim):
        missing = [s for s in sim.net.cordon_signals if s not in self.agents]
        if missing:
            raise ConfigError(f"no trained agent for cordon signals {missing}")
        self.trackers = {s: StateTracker(sim, s) for s in sim.net.cordon_signals}

    def act(self, sim, t):
        if t % ACTION_STEP:
            return
        fb = PcFeedback(sim.metrics.last_pn_ttt, self.ttt_crit, self.k_s)
        factor = penalty_factor(fb)
        net = sim.net
        chosen = []
        for s in net.cordon_signals:
            x = self.trackers[s].observe().vector
            q = nn.forward(self.agents[s], x)
            pens = phase_penalties(net, s, movement_occupancies(sim, s))
            pc = net.intersections[s].pc_phase
            a, q_mod = decide(q, pens, factor, pc)
            self.decisions.append(Decision(t, s, q, pens, factor, q_mod, a, int(np.argmax(q))))
            chosen.append((s, a))
        for s, a in chosen:  # apply after every signal has observed
            self._command(sim, t, s, a)

    def write_decisions(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            fh.write("# schema: decisions v1\n")
            w = csv.writer(fh)
            w.writerow(["t", "signal", "factor", "q", "penalties", "q_mod", "action", "greedy"])
            for d in self.decisions:
                w.writerow([d.t, d.signal, repr(d.factor),
                            " ".join(repr(float(v)) for v in d.q),
                            " ".join(repr(float(v)) for v in d.penalties),
                            " ".join(repr(float(v)) for v in d.q_mod),
                            d.action, d.greedy])


def read_decisions(path: str | Path) -> list[dict]:
    from .metrics import read_csv

    rows = []
    for r in read_csv(path):
        rows.append({
            "t": int(r["t"]), "signal": r["signal"], "factor": float(r["factor"]),
            "q": [float(v) for v in r["q"].split()],
            "penalties": [float(v) for v in r["penalties"].split()],
            "q_mod": [float(v) for v in r["q_mod"].split()],
            "action": int(r["action"]), "greedy": int(r["greedy"]),
        })
    return rows
