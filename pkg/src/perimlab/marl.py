"""Decentralized DDQN agents for cordon signals.

State encoding (``STATE_VERSION`` 1), all legs in the facing-the-PN frame
(outward, pn, left, right)::

    [ D / (5 * sum storage),  O_outward, O_pn, O_left, O_right,  y / 10,
      onehot(own last action), onehot(left neighbour), onehot(right neighbour) ]

Each one-hot block has ``n_phases + 1`` slots; the last slot means "none".
Because the legs are expressed relative to the PN, a state observed on any
edge is already rotated into the frame of the north edge, which is what makes
agent transfer between edges possible.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .controllers import ACTION_STEP, Controller

log = logging.getLogger(__name__)

STATE_VERSION = 1
N_PHASES = 3
CRIT_OCCUPANCY = 0.75
CRIT_SWITCHES = 2
GAMMA = 0.95
EPS_FLOOR = 0.02


class TrainingError(RuntimeError):
    pass


def state_size(n_phases: int = N_PHASES) -> int:
    return 6 + 3 * (n_phases + 1)


def encode_state(d: float, d_norm: float, occ, y: int, actions,
                 n_phases: int = N_PHASES) -> np.ndarray:
    """Flatten one observation; ``actions`` = (own, left, right), None = none."""
    x = np.zeros(state_size(n_phases))
    x[0] = d / d_norm if d_norm > 0 else 0.0
    x[1:5] = occ
    x[5] = y / 10.0
    for k, a in enumerate(actions):
        x[6 + k * (n_phases + 1) + (n_phases if a is None else a)] = 1.0
    return x


def neighbours(net, signal: str) -> tuple[str | None, str | None]:
    """Adjacent cordon signals on the same edge: (left, right) facing the PN."""
    nd = net.intersections[signal]
    row = net.cordon_by_edge()[nd.edge]
    pos = nd.edge_position
    left = row[pos - 1] if pos > 0 else None
    right = row[pos + 1] if pos + 1 < len(row) else None
    return left, right


@dataclass
class Observation:
    d: float
    occ: tuple[float, float, float, float]
    y: int
    vector: np.ndarray


class StateTracker:
    """Per-signal bookkeeping of cumulative stop time between action steps."""

    def __init__(self, sim, signal: str):
        self.sim = sim
        self.signal = signal
        nd = sim.net.intersections[signal]
        self.legs = nd.legs_in
        self.d_norm = ACTION_STEP * sum(sim.links[l].storage for l in self.legs)
        self.nbrs = neighbours(sim.net, signal)
        self._stop_mark = self._stop_total()

    def _stop_total(self) -> float:
        return sum(self.sim.stop_time(l) for l in self.legs)

    def observe(self) -> Observation:
        """Build the state at an action-step boundary (advances the D window)."""
        sim = self.sim
        now = self._stop_total()
        d = now - self._stop_mark
        self._stop_mark = now
        occ = tuple(sim.occupancy(l) for l in self.legs)
        sig = sim.signals[self.signal]
        acts = [sig.last_action]
        for nb in self.nbrs:
            acts.append(None if nb is None else sim.signals[nb].last_action)
        y = sig.yellow_count
        return Observation(d, occ, y, encode_state(d, self.d_norm, occ, y, acts))


def build_state(tracker: StateTracker) -> np.ndarray:
    return tracker.observe().vector


def compute_reward(d_now: float, d_prev: float, occ, y: int,
                   o_crit: float = CRIT_OCCUPANCY, y_crit: int = CRIT_SWITCHES) -> int:
    """Stop-time trend + occupancy penalty + switching penalty."""
    r1 = 1 if d_now < d_prev else -1
    r2 = -sum(1 for o in occ if o >= o_crit)
    r3 = -1 if y > y_crit else 0
    return r1 + r2 + r3


def epsilon(episode: int, decay_episodes: int = 50, floor: float = EPS_FLOOR) -> float:
    """Linear decay from 1 to ``floor`` over ``decay_episodes`` episodes."""
    if decay_episodes <= 0:
        return floor
    return max(floor, 1.0 - (1.0 - floor) / decay_episodes * episode)


def select_action(q, eps: float, rng: np.random.Generator) -> int:
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"epsilon {eps} outside [0, 1]")
    q = np.asarray(q)
    if eps > 0.0 and rng.random() < eps:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))  # first maximum wins


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool = False


class ReplayBuffer:
    """FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self):
        return len(self.items)

    def push(self, tr: Transition):
        if not math.isfinite(tr.r):
            raise ValueError("non-finite reward")
        self.items.append(tr)

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        if n > len(self.items):
            raise ValueError(f"cannot sample {n} from {len(self.items)} transitions")
        idx = rng.choice(len(self.items), size=n, replace=False)
        return [self.items[i] for i in idx]


def ddqn_target_values(r: float, q_next_online, q_next_target, gamma: float = GAMMA,
                       terminal: bool = False) -> float:
    """Bootstrap target: online net picks the action, target net scores it."""
    if terminal:
        return float(r)
    a_star = int(np.argmax(q_next_online))
    return float(r + gamma * q_next_target[a_star])


def ddqn_target(tr: Transition, online: nn.Mlp, target: nn.Mlp, gamma: float = GAMMA) -> float:
    if tr.terminal:
        return float(tr.r)
    return ddqn_target_values(tr.r, nn.forward(online, tr.s_next),
                              nn.forward(target, tr.s_next), gamma)


def ddqn_targets(batch, online: nn.Mlp, target: nn.Mlp, gamma: float = GAMMA) -> np.ndarray:
    """Vectorized :func:`ddqn_target` over a batch."""
    s_next = np.stack([tr.s_next for tr in batch])
    r = np.array([tr.r for tr in batch], dtype=float)
    done = np.array([tr.terminal for tr in batch])
    q_on = nn.forward(online, s_next)
    q_tg = nn.forward(target, s_next)
    a_star = np.argmax(q_on, axis=1)
    boot = q_tg[np.arange(len(batch)), a_star]
    return np.where(done, r, r + gamma * boot)


# -- agents -------------------------------------------------------------------

@dataclass
class Agent:
    signal: str
    online: nn.Mlp
    target: nn.Mlp
    buffer: ReplayBuffer
    opt: nn.Optimizer
    updates: int = 0
    target_copies: int = 0
    losses: list[float] = field(default_factory=list)

    def update(self, batch_size: int, rng, gamma: float = GAMMA, copy_every: int = 100) -> float:
        batch = self.buffer.sample(min(batch_size, len(self.buffer)), rng)
        y = ddqn_targets(batch, self.online, self.target, gamma)
        if not np.all(np.isfinite(y)):
            raise TrainingError(f"{self.signal}: non-finite target after {self.updates} updates")
        s = np.stack([tr.s for tr in batch])
        a = np.array([tr.a for tr in batch])
        loss = nn.train_batch(self.online, s, a, y, self.opt)
        if not math.isfinite(loss):
            raise TrainingError(f"{self.signal}: non-finite loss after {self.updates} updates")
        self.losses.append(loss)
        self.updates += 1
        if self.updates % copy_every == 0:
            nn.copy_into(self.online, self.target)
            self.target_copies += 1
        return loss


@dataclass
class TrainConfig:
    episodes: int = 20
    decay_episodes: int = 14
    hidden: tuple[int, ...] = (64, 64)
    learning_rate: float = 0.001
    optimizer: str = "sgd"
    gamma: float = GAMMA
    batch_size: int = 64
    replay_capacity: int = 50_000
    updates_per_episode: int = 800
    target_every: int = 100
    seed: int = 15000


class LearningControl(Controller):
    """Runs a set of agents epsilon-greedily and records transitions."""

    def __init__(self, agents: dict[str, Agent], eps: float, rng, record: bool = True):
        super().__init__(name="learning")
        self.agents = agents
        self.eps = eps
        self.rng = rng
        self.record = record
        self.rewards: dict[str, list[float]] = {s: [] for s in agents}
        self._prev: dict[str, tuple] = {}

    def setup(self, sim):
        self.trackers = {s: StateTracker(sim, s) for s in self.agents}

    def act(self, sim, t):
        if t % ACTION_STEP:
            return
        obs = {s: self.trackers[s].observe() for s in self.agents}
        for s, ag in self.agents.items():
            o = obs[s]
            prev = self._prev.get(s)
            if prev is not None:
                r = compute_reward(o.d, prev[2], o.occ, o.y)
                self.rewards[s].append(r)
                if self.record:
                    ag.buffer.push(Transition(prev[0], prev[1], r, o.vector))
            a = select_action(nn.forward(ag.online, o.vector), self.eps, self.rng)
            self._prev[s] = (o.vector, a, o.d)
            self._command(sim, t, s, a)

    def finish(self, sim):
        """Close the episode with a terminal transition per agent."""
        obs = {s: self.trackers[s].observe() for s in self.agents}
        for s, ag in self.agents.items():
            prev = self._prev.get(s)
            if prev is None:
                continue
            o = obs[s]
            r = compute_reward(o.d, prev[2], o.occ, o.y)
            self.rewards[s].append(r)
            if self.record:
                ag.buffer.push(Transition(prev[0], prev[1], r, o.vector, terminal=True))


def make_agents(signals, cfg: TrainConfig, rng) -> dict[str, Agent]:
    dims = [state_size(), *cfg.hidden, N_PHASES]
    agents = {}
    for s in signals:
        online = nn.Mlp.init(dims, rng)
        agents[s] = Agent(s, online, online.copy(), ReplayBuffer(cfg.replay_capacity),
                          nn.Optimizer(cfg.learning_rate, cfg.optimizer))
    return agents


def train(net, episode_trips, sim_config, cfg: TrainConfig, duration: int,
          signals=None, outdir: str | Path | None = None):
    """Offline training of the chosen cordon agents (north edge by default).

    ``episode_trips(e)`` returns the trip table for episode ``e``.  All other
    signals follow their fixed timetables and no perimeter feedback is used.
    Returns ``(agents, curve)`` where ``curve`` rows are
    ``(episode, signal, mean_reward)``.
    """
    from .sim import Simulation

    if signals is None:
        signals = net.cordon_by_edge()["N"]
    rng = np.random.default_rng(cfg.seed)
    agents = make_agents(signals, cfg, rng)
    curve: list[tuple[int, str, float]] = []
    for e in range(cfg.episodes):
        eps = epsilon(e, cfg.decay_episodes)
        ctl = LearningControl(agents, eps, rng)
        sim = Simulation(net, episode_trips(e), sim_config)
        ctl.setup(sim)
        sim.run_until(duration, ctl.act)
        ctl.finish(sim)
        for s in signals:
            rs = ctl.rewards[s]
            curve.append((e, s, float(np.mean(rs)) if rs else 0.0))
        for s in signals:
            ag = agents[s]
            for _ in range(cfg.updates_per_episode):
                ag.update(cfg.batch_size, rng, cfg.gamma, cfg.target_every)
        log.info("episode %d eps=%.3f mean reward %s", e, eps,
                 {s: round(r, 3) for _, s, r in curve[-len(signals):]})
    if outdir is not None:
        save_training(agents, curve, cfg, outdir)
    return agents, curve


def save_training(agents: dict[str, Agent], curve, cfg: TrainConfig, outdir: str | Path):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "rewards.csv", "w", newline="") as fh:
        fh.write("# schema: rewards v1\n")
        w = csv.writer(fh)
        w.writerow(["episode", "agent", "mean_reward"])
        for e, s, r in curve:
            w.writerow([e, s, repr(round(r, 9))])
    for s, ag in agents.items():
        nn.save_weights(ag.online, outdir / f"{s}.weights")
    lines = [f"state_version = {STATE_VERSION}"]
    lines += [f"{k} = {v}" for k, v in vars(cfg).items()]
    for s, ag in agents.items():
        lines.append(f"agent {s} updates={ag.updates} target_copies={ag.target_copies}")
    (outdir / "training_manifest.txt").write_text("\n".join(lines) + "\n")


def load_trained(weights_dir: str | Path) -> dict[str, nn.Mlp]:
    return {p.stem: nn.load_weights(p) for p in sorted(Path(weights_dir).glob("*.weights"))}


def transfer(net, donors: dict[str, nn.Mlp], signals=None) -> dict[str, nn.Mlp]:
    """Assign a trained net to every cordon signal by edge position.

    Donors are identified by their signal id on one edge; a recipient takes
    the donor with the same position from the left (facing the PN), or the
    nearest end donor if its edge is longer.  Legs are already encoded in the
    facing frame, so no further rotation of the state is needed.
    """
    if not donors:
        raise ValueError("no donor agents")
    dims = {tuple(m.layer_dims) for m in donors.values()}
    if len(dims) != 1:
        raise ValueError(f"donor nets disagree on dims: {sorted(dims)}")
    d = next(iter(dims))
    if d[0] != state_size() or d[-1] != N_PHASES:
        raise ValueError(f"donor dims {list(d)} do not fit state {state_size()} / actions {N_PHASES}")
    by_pos = sorted(donors, key=lambda s: net.intersections[s].edge_position)
    signals = net.cordon_signals if signals is None else signals
    out = {}
    for s in signals:
        pos = net.intersections[s].edge_position
        out[s] = donors[by_pos[min(pos, len(by_pos) - 1)]]
    return out
