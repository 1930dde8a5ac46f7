"""Baseline perimeter-control strategies.

* fixed timetables everywhere (no perimeter control),
* bang-bang feedback gating on PN-TTT,
* classical PI perimeter control with a uniform metering rate,
* PI with queue-balancing inflow distribution over the gates.

Controllers are driven by the run loop: ``setup(sim)`` once, then
``act(sim, t)`` before every simulation step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

ACTION_STEP = 5  # s between cordon-signal decisions


def fixed_plan(t: int, plan, yellow: int = 5, offset: int = 0) -> int | None:
    """Phase index active at ``t`` for a cyclic plan, ``None`` during yellow.

    Each phase's green is followed by ``yellow`` seconds of interlock, so the
    cycle length is ``sum(plan) + len(plan) * yellow``.
    """
    cycle = sum(plan) + len(plan) * yellow
    s = (t - offset) % cycle
    for k, g in enumerate(plan):
        if s < g:
            return k
        s -= g
        if s < yellow:
            return None
        s -= yellow
    raise AssertionError("unreachable")


def plan_slot(t: int, plan, yellow: int = 5, offset: int = 0) -> int:
    """Like :func:`fixed_plan` but resolves yellow to the upcoming phase."""
    k = fixed_plan(t, plan, yellow, offset)
    if k is not None:
        return k
    cycle = sum(plan) + len(plan) * yellow
    s = (t - offset) % cycle
    acc = 0
    for k, g in enumerate(plan):
        acc += g + yellow
        if s < acc:
            return (k + 1) % len(plan)
    return 0


@dataclass
class PIState:
    k_p: float = 2.0
    k_i: float = 0.5
    ttt_crit: float = 17000.0
    q_g_prev: float = 0.0
    ttt_prev: float | None = None
    control_period: int = 60
    q_max: float | None = None

    def __post_init__(self):
        if self.k_p <= 0 or self.k_i <= 0:
            raise ValueError("PI gains must be positive")


def pi_update(state: PIState, ttt_now: float) -> float:
    """One PI step on the total PN inflow (veh/h); mutates ``state``."""
    ttt_prev = ttt_now if state.ttt_prev is None else state.ttt_prev
    q = (state.q_g_prev - state.k_p * (ttt_now - ttt_prev)
         + state.k_i * (state.ttt_crit - ttt_now))
    q = max(0.0, q)
    if state.q_max is not None:
        q = min(q, state.q_max)
    state.q_g_prev = q
    state.ttt_prev = ttt_now
    return q


def uniform_metering(q_g: float, gates, period: float, carry: dict | None = None) -> dict[str, int]:
    """Split a total inflow (veh/h) evenly over gates as integer budgets.

    Fractional remainders are carried per gate in ``carry`` so the issued
    total over many periods is exact.
    """
    gates = list(gates)
    if not gates:
        raise ValueError("no gates to meter")
    if q_g < 0:
        raise ValueError("negative inflow")
    share = Fraction(q_g).limit_denominator(10**9) * Fraction(period) / 3600 / len(gates)
    carry = {} if carry is None else carry
    out = {}
    for g in gates:
        acc = carry.get(g, Fraction(0)) + share
        whole = int(acc)
        carry[g] = acc - whole
        out[g] = whole
    return out


def cordon_queue_distribution(q_total, queues, q_max, storage) -> list[int]:
    """Integer inflows minimizing the sum of squared relative gate queues.

    minimize sum_i ((w_i - x_i) / C_i)^2
    s.t.     sum_i x_i = min(q_total, sum_i u_i),  0 <= x_i <= u_i = min(w_i, q_max_i)

    The objective is separable and convex, so handing out units one at a
    time to the largest marginal decrease (2 (w_i - x_i) - 1) / C_i^2 is
    exactly optimal.  Ties go to the lowest gate index.
    """
    n = len(queues)
    upper = [max(0, min(int(w), int(m))) for w, m in zip(queues, q_max)]
    total = min(int(q_total), sum(upper))
    x = [0] * n
    for _ in range(total):
        best, best_gain = -1, None
        for i in range(n):
            if x[i] >= upper[i]:
                continue
            gain = Fraction(2 * (int(queues[i]) - x[i]) - 1, int(storage[i]) ** 2)
            if best_gain is None or gain > best_gain:
                best, best_gain = i, gain
        x[best] += 1
    return x


def relative_queue_objective(x, queues, storage) -> Fraction:
    return sum((Fraction(int(w) - xi, int(c)) ** 2 for xi, w, c in zip(x, queues, storage)),
               Fraction(0))


def kkt_check(x, queues, q_max, storage) -> bool:
    """Discrete optimality certificate: no unit transfer between two gates
    lowers the objective."""
    upper = [max(0, min(int(w), int(m))) for w, m in zip(queues, q_max)]
    n = len(x)
    for i in range(n):
        if x[i] <= 0:
            continue
        loss = Fraction(2 * (int(queues[i]) - x[i]) + 1, int(storage[i]) ** 2)
        for j in range(n):
            if j == i or x[j] >= upper[j]:
                continue
            gain = Fraction(2 * (int(queues[j]) - x[j]) - 1, int(storage[j]) ** 2)
            if gain > loss:
                return False
    return True


def feedback_gate(ttt_now: float, ttt_crit: float) -> str:
    """``close_all`` when PN-TTT is strictly above critical, else ``open_all``."""
    return "close_all" if ttt_now > ttt_crit else "open_all"


def metering_to_signal(t: int, admitted: int, budget: int, plan=(30, 30),
                       yellow: int = 5, pc_phase: int = 2) -> int:
    """Phase command for a metered cordon signal.

    The local timetable alternates the transfer (0) and parallel (1) phases;
    during transfer slots the signal holds the PC phase once the gate has
    used its budget.
    """
    slot = plan_slot(t, plan, yellow)
    if slot == 0 and admitted >= budget:
        return pc_phase
    return slot


# -- controller objects -------------------------------------------------------

@dataclass
class Controller:
    name: str = "base"
    commands: list[tuple[int, str, int]] = field(default_factory=list)

    def setup(self, sim):
        pass

    def act(self, sim, t: int):
        pass

    def _command(self, sim, t, sid, phase):
        sim.apply_control(sid, phase)
        self.commands.append((t, sid, phase))


@dataclass
class FixedControl(Controller):
    name: str = "fixed"

    def act(self, sim, t):
        if t % ACTION_STEP == 0:
            for sid in sim.net.cordon_signals:
                ph = sim.signals[sid].phase
                self.commands.append((t, sid, -1 if ph is None else ph))


@dataclass
class FeedbackControl(Controller):
    name: str = "feedback"
    ttt_crit: float = 17000.0

    def act(self, sim, t):
        if t % ACTION_STEP:
            return
        decision = feedback_gate(sim.metrics.last_pn_ttt, self.ttt_crit)
        for sid in sim.net.cordon_signals:
            nd = sim.net.intersections[sid]
            if decision == "close_all":
                phase = nd.pc_phase
            else:
                phase = plan_slot(t, sim.cfg.cordon_plan, sim.cfg.yellow)
            self._command(sim, t, sid, phase)


@dataclass
class PIControl(Controller):
    """Classical PI perimeter control with uniform gate budgets."""

    name: str = "pi"
    k_p: float = 2.0
    k_i: float = 0.5
    ttt_crit: float = 17000.0
    period: int = 60
    q_init: float | None = None
    state: PIState | None = None
    budgets: dict[str, int] = field(default_factory=dict)
    q_trace: list[tuple[int, float]] = field(default_factory=list)

    def setup(self, sim):
        q_max = sum(sim.links[g].rate * 3600.0 for g in sim.net.gate_links)
        q0 = q_max if self.q_init is None else self.q_init
        self.state = PIState(self.k_p, self.k_i, self.ttt_crit, q_g_prev=q0,
                             control_period=self.period, q_max=q_max)
        self._carry: dict = {}

    def _allocate(self, sim, q_g) -> dict[str, int]:
        return uniform_metering(q_g, sim.net.gate_links, self.period, self._carry)

    def act(self, sim, t):
        if t % self.period == 0:
            q_g = pi_update(self.state, sim.metrics.last_pn_ttt) if t > 0 else self.state.q_g_prev
            self.q_trace.append((t, q_g))
            self.budgets = self._allocate(sim, q_g)
            for g in sim.net.gate_links:
                sim.inflow_cap[g] = self.budgets[g]
                sim.admitted[g] = 0
        if t % ACTION_STEP == 0:
            for sid in sim.net.cordon_signals:
                nd = sim.net.intersections[sid]
                g = nd.gate_link
                phase = metering_to_signal(t, sim.admitted[g], self.budgets[g],
                                           sim.cfg.cordon_plan, sim.cfg.yellow, nd.pc_phase)
                self._command(sim, t, sid, phase)


@dataclass
class PICordonQueueControl(PIControl):
    """PI total inflow distributed to balance relative gate queues."""

    name: str = "pi_cordon_queue"

    def _allocate(self, sim, q_g) -> dict[str, int]:
        gates = sim.net.gate_links
        acc = self._carry.get("total", Fraction(0)) + \
            Fraction(q_g).limit_denominator(10**9) * self.period / 3600
        q_total = int(acc)
        self._carry["total"] = acc - q_total
        plan = sim.cfg.cordon_plan
        green_share = plan[0] / (sum(plan) + len(plan) * sim.cfg.yellow)
        queues = [sim.queued(g) for g in gates]
        caps = [int(sim.links[g].rate * self.period * green_share) for g in gates]
        storage = [sim.links[g].storage for g in gates]
        x = cordon_queue_distribution(q_total, queues, caps, storage)
        return dict(zip(gates, x))
