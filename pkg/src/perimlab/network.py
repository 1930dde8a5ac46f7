"""Grid network topology, turning movements, signal phases and cordon geometry.

Intersections sit on a ``rows x cols`` lattice, node ``(r, c)`` with row 0 at
the north edge.  The protected network (PN) is a rectangle of lattice nodes
strictly inside the lattice.  Every non-PN node orthogonally adjacent to the
PN is a cordon signal; it has four legs: the outward leg (gate link in, exit
link out), the PN leg, and two parallel legs running along the cordon.
Cordon signals on the lattice edge get external stub links (gate/exit) to
source and sink nodes; deeper cordon signals use the lattice link from their
outward neighbour as the gate link.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

VEHICLE_LENGTH = 5.0
MIN_GAP = 2.5
VEHICLE_FOOTPRINT = VEHICLE_LENGTH + MIN_GAP

THROUGH, LEFT, RIGHT = "through", "left", "right"
INFLOW, OUTFLOW, NONE = "inflow", "outflow", "none"

CORDON, PN, UNSIGNALIZED, EXTERNAL = "cordon", "pn", "unsignalized", "external"

# edge name -> unit step from the cordon signal towards the PN, (drow, dcol)
EDGE_FACING = {"N": (1, 0), "S": (-1, 0), "W": (0, 1), "E": (0, -1)}
EDGE_ORDER = ("N", "S", "W", "E")


class GeometryError(ValueError):
    """Invalid grid or PN rectangle."""


class DomainError(ValueError):
    """Operation applied to an intersection of the wrong kind."""


@dataclass(frozen=True)
class Link:
    id: str
    from_node: str
    to_node: str
    length: float
    lanes: int
    free_flow_speed: float
    is_gate: bool = False
    is_inside_pn: bool = False
    is_exit: bool = False

    def __post_init__(self):
        if self.length <= 0 or self.lanes < 1 or self.free_flow_speed <= 0:
            raise GeometryError(f"bad link parameters for {self.id}")
        if self.storage_capacity() < 1:
            raise GeometryError(f"link {self.id} cannot store one vehicle")

    def storage_capacity(self, footprint: float = VEHICLE_FOOTPRINT) -> int:
        return int(math.floor(self.length * self.lanes / footprint + 1e-9))

    @property
    def free_flow_time(self) -> float:
        return self.length / self.free_flow_speed


@dataclass(frozen=True, order=True)
class Movement:
    from_link: str
    to_link: str
    kind: str
    crosses_cordon: str = NONE

    @property
    def key(self) -> tuple[str, str]:
        return (self.from_link, self.to_link)


@dataclass(frozen=True)
class Phase:
    id: int
    green_movements: frozenset  # of (from_link, to_link) keys
    is_pc_phase: bool = False


@dataclass
class Intersection:
    id: str
    row: int
    col: int
    kind: str
    incoming: list[str] = field(default_factory=list)
    outgoing: list[str] = field(default_factory=list)
    movements: list[Movement] = field(default_factory=list)
    phases: list[Phase] = field(default_factory=list)
    # cordon signals only
    edge: str | None = None
    edge_position: int | None = None
    # incoming legs in the facing-the-PN frame: outward, pn, left, right
    legs_in: tuple[str, ...] = ()
    legs_out: tuple[str, ...] = ()
    gate_link: str | None = None

    @property
    def is_signalized(self) -> bool:
        return self.kind in (CORDON, PN)

    @property
    def pc_phase(self) -> int | None:
        for ph in self.phases:
            if ph.is_pc_phase:
                return ph.id
        return None


@dataclass
class GridSpec:
    """Link and lane parameters for :func:`build_grid`."""

    link_length: float = 300.0
    gate_length: float = 1000.0
    lanes: int = 2
    free_flow_speed: float = 13.9


@dataclass
class Network:
    rows: int
    cols: int
    pn_rect: tuple[int, int, int, int]
    links: dict[str, Link]
    intersections: dict[str, Intersection]
    cordon_signals: list[str]
    pn_links: frozenset
    gate_links: list[str]
    movement_index: dict[tuple[str, str], Movement]

    def link(self, link_id: str) -> Link:
        return self.links[link_id]

    def node_of(self, link_id: str) -> Intersection:
        """Downstream intersection of a link (None for sink ends)."""
        return self.intersections.get(self.links[link_id].to_node)

    def exit_links(self) -> list[str]:
        return [lid for lid in sorted(self.links) if self.links[lid].is_exit]

    def successors(self, link_id: str) -> list[str]:
        return list(self.successor_map[link_id])

    @functools.cached_property
    def successor_map(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {lid: [] for lid in self.links}
        for a, b in self.movement_index:
            out[a].append(b)
        return {lid: tuple(sorted(v)) for lid, v in out.items()}

    def cordon_by_edge(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {e: [] for e in EDGE_ORDER}
        for sid in self.cordon_signals:
            out[self.intersections[sid].edge].append(sid)
        for e in out:
            out[e].sort(key=lambda s: self.intersections[s].edge_position)
        return out

    def opposite_exit(self, gate_link: str) -> str | None:
        """Exit link on the far side of the PN along the gate's axis."""
        node = self.intersections[self.links[gate_link].to_node]
        dr, dc = EDGE_FACING[node.edge]
        r, c = node.row, node.col
        while True:
            r, c = r + dr, c + dc
            nid = node_id(r, c)
            other = self.intersections.get(nid)
            if other is None:
                return None
            if other.kind == CORDON and other.edge != node.edge:
                return other.legs_out[0]

    def to_text(self) -> str:
        """Deterministic human-readable serialization (used for golden tests)."""
        lines = [f"network v1 rows={self.rows} cols={self.cols} "
                 f"pn={','.join(map(str, self.pn_rect))}"]
        for lid in sorted(self.links):
            ln = self.links[lid]
            flags = "".join(f for f, on in (("G", ln.is_gate), ("P", ln.is_inside_pn),
                                             ("X", ln.is_exit)) if on) or "-"
            lines.append(f"link {lid} {ln.from_node} {ln.to_node} {ln.length:g} "
                         f"{ln.lanes} {ln.free_flow_speed:g} {flags}")
        for nid in sorted(self.intersections):
            nd = self.intersections[nid]
            extra = ""
            if nd.kind == CORDON:
                extra = f" edge={nd.edge}{nd.edge_position} gate={nd.gate_link}"
            lines.append(f"node {nid} {nd.kind} {nd.row} {nd.col}{extra}")
            for m in nd.movements:
                lines.append(f"  move {m.from_link} {m.to_link} {m.kind} {m.crosses_cordon}")
            for ph in nd.phases:
                greens = " ".join(f"{a}>{b}" for a, b in sorted(ph.green_movements))
                lines.append(f"  phase {ph.id}{' PC' if ph.is_pc_phase else ''}: {greens}")
        lines.append("cordon " + " ".join(self.cordon_signals))
        lines.append("gates " + " ".join(self.gate_links))
        return "\n".join(lines) + "\n"


def node_id(r: int, c: int) -> str:
    return f"n{r}_{c}"


def ext_id(r: int, c: int) -> str:
    return f"x{r}_{c}".replace("-", "m")


def link_id(a: str, b: str) -> str:
    return f"{a}>{b}"


def _turn_kind(h_in: tuple[int, int], h_out: tuple[int, int]) -> str | None:
    # headings as (drow, dcol); rows grow southwards
    if h_in == h_out:
        return THROUGH
    if h_out == (-h_in[0], -h_in[1]):
        return None
    # left of heading (dr, dc) in a south-growing frame is (-dc, dr)
    if h_out == (-h_in[1], h_in[0]):
        return LEFT
    return RIGHT


def build_grid(rows: int, cols: int, spec: GridSpec | None = None,
               pn_rect: tuple[int, int, int, int] | None = None) -> Network:
    """Build a lattice network.

    ``pn_rect`` is ``(row0, col0, n_rows, n_cols)`` in lattice coordinates.
    The default is the full interior of the lattice.
    """
    spec = spec or GridSpec()
    if rows < 3 or cols < 3:
        raise GeometryError("grid needs at least 3 rows and 3 columns")
    if pn_rect is None:
        pn_rect = (1, 1, rows - 2, cols - 2)
    r0, c0, nr, nc = pn_rect
    if nr < 1 or nc < 1 or r0 < 1 or c0 < 1 or r0 + nr > rows - 1 or c0 + nc > cols - 1:
        raise GeometryError(f"PN rectangle {pn_rect} must lie strictly inside the grid")

    def in_pn(r, c):
        return r0 <= r < r0 + nr and c0 <= c < c0 + nc

    coords: dict[str, tuple[int, int]] = {}
    kinds: dict[str, str] = {}
    for r in range(rows):
        for c in range(cols):
            nid = node_id(r, c)
            coords[nid] = (r, c)
            kinds[nid] = PN if in_pn(r, c) else UNSIGNALIZED

    # cordon signals and their edge / facing
    edge_of: dict[str, str] = {}
    for edge, (dr, dc) in EDGE_FACING.items():
        if edge in ("N", "S"):
            r = r0 - 1 if edge == "N" else r0 + nr
            cells = [(r, c) for c in range(c0, c0 + nc)]
        else:
            c = c0 - 1 if edge == "W" else c0 + nc
            cells = [(r, c) for r in range(r0, r0 + nr)]
        for r, c in cells:
            nid = node_id(r, c)
            kinds[nid] = CORDON
            edge_of[nid] = edge

    # directed lattice links plus external stubs at edge cordon signals
    raw_links: list[tuple[str, str, tuple[int, int], tuple[int, int]]] = []
    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    raw_links.append((node_id(r, c), node_id(rr, cc), (r, c), (rr, cc)))
    externals: dict[str, tuple[int, int]] = {}
    for nid, edge in edge_of.items():
        r, c = coords[nid]
        dr, dc = EDGE_FACING[edge]
        rr, cc = r - dr, c - dc
        if not (0 <= rr < rows and 0 <= cc < cols):
            xid = ext_id(rr, cc)
            externals[xid] = (rr, cc)
            raw_links.append((xid, nid, (rr, cc), (r, c)))
            raw_links.append((nid, xid, (r, c), (rr, cc)))
    coords.update(externals)
    for xid in externals:
        kinds[xid] = EXTERNAL

    gate_ids: dict[str, str] = {}
    for nid, edge in edge_of.items():
        r, c = coords[nid]
        dr, dc = EDGE_FACING[edge]
        up = (r - dr, c - dc)
        up_id = next(k for k, v in coords.items() if v == up)
        gate_ids[nid] = link_id(up_id, nid)
    gate_set = set(gate_ids.values())
    exit_set = {link_id(b, a) for a, b in (lid.split(">") for lid in gate_set)}

    links: dict[str, Link] = {}
    for a, b, ca, cb in raw_links:
        lid = link_id(a, b)
        inside = in_pn(*ca) or in_pn(*cb)
        long_ = lid in gate_set or lid in exit_set
        links[lid] = Link(
            id=lid, from_node=a, to_node=b,
            length=spec.gate_length if long_ else spec.link_length,
            lanes=spec.lanes, free_flow_speed=spec.free_flow_speed,
            is_gate=lid in gate_set, is_inside_pn=inside,
            is_exit=lid in exit_set or kinds[b] == EXTERNAL,
        )

    intersections: dict[str, Intersection] = {}
    for nid, (r, c) in coords.items():
        intersections[nid] = Intersection(id=nid, row=r, col=c, kind=kinds[nid])
    for lid in sorted(links):
        ln = links[lid]
        intersections[ln.to_node].incoming.append(lid)
        intersections[ln.from_node].outgoing.append(lid)

    movement_index: dict[tuple[str, str], Movement] = {}
    for nid in sorted(intersections):
        nd = intersections[nid]
        if nd.kind == EXTERNAL:
            continue
        for lin in nd.incoming:
            a = coords[links[lin].from_node]
            h_in = (nd.row - a[0], nd.col - a[1])
            for lout in nd.outgoing:
                b = coords[links[lout].to_node]
                h_out = (b[0] - nd.row, b[1] - nd.col)
                kind = _turn_kind(h_in, h_out)
                if kind is None:
                    continue
                fi, ti = links[lin].is_inside_pn, links[lout].is_inside_pn
                cross = INFLOW if (not fi and ti) else OUTFLOW if (fi and not ti) else NONE
                mv = Movement(lin, lout, kind, cross)
                nd.movements.append(mv)
                movement_index[mv.key] = mv
        nd.movements.sort()

    for nid, nd in intersections.items():
        if nd.kind == CORDON:
            _setup_cordon(nd, edge_of[nid], coords, links, gate_ids[nid])
        elif nd.kind == PN:
            _setup_two_phase(nd, coords, links)

    # edge positions, ordered left-to-right as seen facing the PN
    cordon_signals: list[str] = []
    for edge in EDGE_ORDER:
        members = [n for n, e in edge_of.items() if e == edge]
        dr, dc = EDGE_FACING[edge]
        left = (-dc, dr)
        members.sort(key=lambda n: -(coords[n][0] * left[0] + coords[n][1] * left[1]))
        for pos, n in enumerate(members):
            intersections[n].edge_position = pos
        # signal numbering runs west->east on N/S edges and north->south on W/E edges
        cordon_signals.extend(sorted(members, key=lambda n: coords[n]))
    gate_links = [gate_ids[n] for n in cordon_signals]

    return Network(
        rows=rows, cols=cols, pn_rect=tuple(pn_rect), links=links,
        intersections=intersections, cordon_signals=cordon_signals,
        pn_links=frozenset(l for l, ln in links.items() if ln.is_inside_pn),
        gate_links=gate_links, movement_index=movement_index,
    )


def _setup_cordon(nd: Intersection, edge: str, coords, links, gate: str) -> None:
    dr, dc = EDGE_FACING[edge]
    left = (-dc, dr)
    right = (dc, -dr)
    offsets = {"outward": (-dr, -dc), "pn": (dr, dc), "left": left, "right": right}

    def leg(direction, incoming: bool):
        target = (nd.row + offsets[direction][0], nd.col + offsets[direction][1])
        pool = nd.incoming if incoming else nd.outgoing
        for lid in pool:
            other = links[lid].from_node if incoming else links[lid].to_node
            if coords[other] == target:
                return lid
        raise GeometryError(f"cordon signal {nd.id} missing {direction} leg")

    order = ("outward", "pn", "left", "right")
    nd.legs_in = tuple(leg(d, True) for d in order)
    nd.legs_out = tuple(leg(d, False) for d in order)
    nd.edge = edge
    nd.gate_link = gate
    transfer = {nd.legs_in[0], nd.legs_in[1]}
    parallel = {nd.legs_in[2], nd.legs_in[3]}
    nd.phases = [
        Phase(0, frozenset(m.key for m in nd.movements if m.from_link in transfer)),
        Phase(1, frozenset(m.key for m in nd.movements if m.from_link in parallel)),
        Phase(2, frozenset(m.key for m in nd.movements if m.crosses_cordon == OUTFLOW),
              is_pc_phase=True),
    ]


def _setup_two_phase(nd: Intersection, coords, links) -> None:
    ns, ew = set(), set()
    for lid in nd.incoming:
        r, c = coords[links[lid].from_node]
        (ns if c == nd.col else ew).add(lid)
    nd.phases = [
        Phase(0, frozenset(m.key for m in nd.movements if m.from_link in ns)),
        Phase(1, frozenset(m.key for m in nd.movements if m.from_link in ew)),
    ]


def movement_sets(net: Network, signal: str) -> tuple[frozenset, frozenset]:
    """Movements entering (M_in) and leaving (M_out) the PN at a cordon signal."""
    nd = net.intersections.get(signal)
    if nd is None or nd.kind != CORDON:
        raise DomainError(f"{signal} is not a cordon signal")
    m_in = frozenset(m.key for m in nd.movements if m.crosses_cordon == INFLOW)
    m_out = frozenset(m.key for m in nd.movements if m.crosses_cordon == OUTFLOW)
    return m_in, m_out


def phase_overlap(net: Network, phase: Phase, signal: str):
    """Split M_out and M_in by whether ``phase`` gives them green.

    Returns ``(out_overlap, out_com, in_overlap, in_com)``.
    """
    nd = net.intersections[signal]
    if phase not in nd.phases:
        raise DomainError(f"phase {phase.id} does not belong to {signal}")
    m_in, m_out = movement_sets(net, signal)
    green = phase.green_movements
    return m_out & green, m_out - green, m_in & green, m_in - green
