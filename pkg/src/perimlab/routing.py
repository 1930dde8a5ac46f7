"""Fastest-path routing at network entry."""

from __future__ import annotations

import heapq
import math

from .network import Network

COST_RESOLUTION = 1e-6  # seconds; costs are compared as exact integers


class RoutingError(RuntimeError):
    pass


def _ticks(cost: float) -> int:
    return int(round(cost / COST_RESOLUTION))


def to_ticks(costs: dict[str, float]) -> dict[str, int]:
    return {lid: _ticks(c) for lid, c in costs.items()}


def route(net: Network, origin: str, destination: str, costs: dict[str, float],
          ticks: dict[str, int] | None = None) -> list[str]:
    """Least-cost link path from ``origin`` to ``destination`` (both included).

    Ties go to fewer links, then to the lexicographically smaller sequence of
    link ids.  Costs are non-negative per-link travel-time estimates; pass
    ``ticks`` (from :func:`to_ticks`) to reuse one conversion across calls.
    """
    if origin not in net.links or destination not in net.links:
        raise RoutingError(f"unknown link in ({origin}, {destination})")
    if ticks is None:
        ticks = to_ticks(costs)
    succ = net.successor_map
    start = (ticks[origin], 1, (origin,))
    best: dict[str, tuple] = {origin: start}
    heap = [start]
    while heap:
        label = heapq.heappop(heap)
        cost, hops, path = label
        link = path[-1]
        if best.get(link) != label:
            continue
        if link == destination:
            return list(path)
        for nxt in succ[link]:
            cand = (cost + ticks[nxt], hops + 1, path + (nxt,))
            old = best.get(nxt)
            if old is None or cand < old:
                best[nxt] = cand
                heapq.heappush(heap, cand)
    raise RoutingError(f"{destination} unreachable from {origin}")


def path_cost(path, costs: dict[str, float]) -> float:
    return math.fsum(costs[l] for l in path)
