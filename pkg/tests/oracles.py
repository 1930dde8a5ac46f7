"""Independent brute-force oracles shared by unit and acceptance tests."""

import itertools
import math
from fractions import Fraction

import numpy as np

from perimlab import nn


def enumerate_optimum(q_total, queues, caps, storage):
    """Exhaustive integer search for the relative-queue QP.

    Among optimal allocations the lexicographically largest wins, i.e. the
    lowest-index gates take tied units.
    """
    upper = [max(0, min(w, m)) for w, m in zip(queues, caps)]
    total = min(q_total, sum(upper))
    best = None
    for x in itertools.product(*(range(u + 1) for u in upper)):
        if sum(x) != total:
            continue
        f = sum(Fraction(w - v, s) ** 2 for v, w, s in zip(x, queues, storage))
        key = (f, tuple(-v for v in x))
        if best is None or key < best[0]:
            best = (key, list(x))
    return best[1]


def remaining_cost_bound(net, dest, ticks):
    """Bellman-Ford lower bound on the cost still to pay after each link."""
    succ = net.successor_map
    h = {l: math.inf for l in succ}
    h[dest] = 0
    changed = True
    while changed:
        changed = False
        for l, nxt in succ.items():
            best = min((ticks[n] + h[n] for n in nxt), default=math.inf)
            if best < h[l]:
                h[l] = best
                changed = True
    return h


def brute_force(net, origin, dest, ticks):
    """Exhaustive link-simple path enumeration.

    Branches are dropped only when their cost plus an admissible bound
    strictly exceeds the best cost found, so every optimal path (including
    ties) is visited.  Returns ``(cost, n_links, path)`` or None.
    """
    succ = net.successor_map
    h = remaining_cost_bound(net, dest, ticks)
    best = None
    stack = [(ticks[origin], (origin,), {origin})]
    while stack:
        cost, path, used = stack.pop()
        if cost + h[path[-1]] == math.inf or (best is not None and cost + h[path[-1]] > best[0]):
            continue
        if path[-1] == dest:
            label = (cost, len(path), path)
            if best is None or label < best:
                best = label
            continue
        for n in succ[path[-1]]:
            if n not in used:
                stack.append((cost + ticks[n], path + (n,), used | {n}))
    return best


def gradient_relative_errors(rng, dims, probes, h=1e-5):
    net = nn.Mlp.init(dims, rng)
    for b in net.biases:
        b += rng.normal(scale=0.1, size=b.shape)
    n = 6
    s = rng.normal(size=(n, dims[0]))
    a = rng.integers(0, dims[-1], n)
    y = rng.normal(size=n)
    _, gw, gb = nn.loss_and_grads(net, s, a, y)
    analytic = []
    for w, b in zip(gw, gb):
        analytic += [w, b]
    errs = []
    params = net.params()
    for _ in range(probes):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(d)) for d in params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + h
        lp = nn.loss_and_grads(net, s, a, y)[0]
        params[k][idx] = old - h
        lm = nn.loss_and_grads(net, s, a, y)[0]
        params[k][idx] = old
        fd = (lp - lm) / (2 * h)
        g = analytic[k][idx]
        errs.append(abs(g - fd) / max(abs(g), abs(fd), 1e-7))
    return errs


