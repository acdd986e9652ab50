"""Immutable water-network description and a strict INP-subset parser.

The accepted text format is a restricted EPANET-INP dialect:

* section headers in brackets, ``;`` starts a comment, columns are
  whitespace-separated and column counts are strict;
* ``[JUNCTIONS]``  id  elevation_m  base_demand_Lps
* ``[RESERVOIRS]`` id  head_m
* ``[TANKS]``      id  head_m            (fixed head for one snapshot)
* ``[PIPES]``      id  from  to  length_m  diameter_mm  roughness_C
* ``[PUMPS]``      id  from  to  head_curve_id  eff_curve_id  n_identical
* ``[CURVES]``     curve_id  x  y         (one point per line)
* ``[DEMANDS]``    node_id  demand_Lps    (overrides the junction base demand)

Anything else is ignored with a warning.  Internally demands are L/s,
heads and lengths are m (pipe diameters are converted from mm on the way
in and back to mm on the way out).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources

__all__ = [
    "Junction", "Reservoir", "Tank", "Pipe", "PumpGroup", "Network",
    "NetworkError", "MalformedLine", "DanglingReference", "DisconnectedGraph",
    "MissingCurve", "InvalidCurve", "MissingShutoffPoint",
    "parse_network", "serialize_network", "shutoff_head_max",
    "bundled_network_path", "load_bundled",
]

KNOWN_SECTIONS = ("JUNCTIONS", "RESERVOIRS", "TANKS", "PIPES", "PUMPS", "CURVES", "DEMANDS")

BUNDLED = {
    "anytown-mod": "anytown_mod.inp",
    "dtown-mod": "dtown_mod.inp",
}


class NetworkError(Exception):
    """Base for all network parsing/validation failures."""


class MalformedLine(NetworkError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class DanglingReference(NetworkError):
    def __init__(self, node_id: str, referenced_by: str = ""):
        where = f" (referenced by {referenced_by})" if referenced_by else ""
        super().__init__(f"unknown node {node_id!r}{where}")
        self.node_id = node_id


class DisconnectedGraph(NetworkError):
    def __init__(self, unreachable):
        super().__init__(f"network graph is not connected; unreachable: {sorted(unreachable)}")
        self.unreachable = frozenset(unreachable)


class MissingCurve(NetworkError):
    def __init__(self, curve_id: str):
        super().__init__(f"curve {curve_id!r} is referenced but never defined")
        self.curve_id = curve_id


class InvalidCurve(NetworkError):
    def __init__(self, curve_id: str, message: str):
        super().__init__(f"curve {curve_id!r}: {message}")
        self.curve_id = curve_id


class MissingShutoffPoint(NetworkError):
    def __init__(self, group_id: str):
        super().__init__(f"pump group {group_id!r} has no Q=0 head-curve point")
        self.group_id = group_id


@dataclass(frozen=True)
class Junction:
    id: str
    elevation: float          # m
    base_demand: float        # L/s, >= 0


@dataclass(frozen=True)
class Reservoir:
    id: str
    head: float               # m, fixed


@dataclass(frozen=True)
class Tank:
    id: str
    head: float               # m, fixed for one snapshot


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    length: float             # m
    diameter: float           # m
    roughness: float          # Hazen-Williams C


@dataclass(frozen=True)
class PumpGroup:
    """A station of ``n_identical`` parallel pumps sharing one speed ratio.

    Curves describe a single pump at nominal speed: ``head_curve`` points are
    (Q [L/s], H [m]) strictly decreasing in H, ``efficiency_curve`` points are
    (Q [L/s], eta in (0, 1]).  ``peak_efficiency`` is the maximum curve eta.
    """

    id: str
    from_node: str
    to_node: str
    n_identical: int
    head_curve: tuple[tuple[float, float], ...]
    efficiency_curve: tuple[tuple[float, float], ...]
    peak_efficiency: float


@dataclass(frozen=True)
class Network:
    junctions: tuple[Junction, ...]
    reservoirs: tuple[Reservoir, ...]
    tanks: tuple[Tank, ...]
    pipes: tuple[Pipe, ...]
    pump_groups: tuple[PumpGroup, ...]
    node_index: tuple[str, ...]          # junction ids, file order of first appearance
    warnings: tuple[str, ...] = ()

    @property
    def n_nodes(self) -> int:
        return len(self.junctions)

    @property
    def n_groups(self) -> int:
        return len(self.pump_groups)

    def junction_position(self, node_id: str) -> int:
        return self.node_index.index(node_id)


def _tokens(line: str) -> list[str]:
    return line.split(";", 1)[0].split()


def _number(tok: str, lineno: int, what: str) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise MalformedLine(lineno, f"{what} is not a number: {tok!r}") from None
    if value != value or value in (float("inf"), float("-inf")):
        raise MalformedLine(lineno, f"{what} is not finite: {tok!r}")
    return value


def parse_network(text: str) -> Network:
    """Parse an INP-subset document into a validated :class:`Network`.

    Node ordering (and hence every observation-vector position downstream)
    is the file order of first appearance, so identical input bytes always
    produce the identical index assignment.
    """
    section = None
    warnings: list[str] = []
    junctions: list[Junction] = []
    reservoirs: list[Reservoir] = []
    tanks: list[Tank] = []
    pipe_rows: list[tuple[int, list[str]]] = []
    pump_rows: list[tuple[int, list[str]]] = []
    demand_rows: list[tuple[int, list[str]]] = []
    curves: dict[str, list[tuple[float, float]]] = {}
    node_ids: set[str] = set()
    link_ids: set[str] = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _tokens(raw)
        if not toks:
            continue
        if toks[0].startswith("["):
            header = " ".join(toks)
            if not header.endswith("]"):
                raise MalformedLine(lineno, f"unterminated section header {header!r}")
            name = header[1:-1].strip().upper()
            if name in KNOWN_SECTIONS:
                section = name
            else:
                section = None
                warnings.append(f"line {lineno}: ignoring unknown section [{name}]")
            continue
        if section is None:
            continue

        if section == "JUNCTIONS":
            if len(toks) != 3:
                raise MalformedLine(lineno, f"[JUNCTIONS] expects 3 columns, got {len(toks)}")
            jid = toks[0]
            if jid in node_ids:
                raise MalformedLine(lineno, f"duplicate node id {jid!r}")
            elevation = _number(toks[1], lineno, "elevation")
            demand = _number(toks[2], lineno, "base demand")
            if demand < 0:
                raise MalformedLine(lineno, f"base demand must be >= 0, got {demand}")
            node_ids.add(jid)
            junctions.append(Junction(jid, elevation, demand))
        elif section == "RESERVOIRS":
            if len(toks) != 2:
                raise MalformedLine(lineno, f"[RESERVOIRS] expects 2 columns, got {len(toks)}")
            rid = toks[0]
            if rid in node_ids:
                raise MalformedLine(lineno, f"duplicate node id {rid!r}")
            node_ids.add(rid)
            reservoirs.append(Reservoir(rid, _number(toks[1], lineno, "head")))
        elif section == "TANKS":
            if len(toks) != 2:
                raise MalformedLine(lineno, f"[TANKS] expects 2 columns, got {len(toks)}")
            tid = toks[0]
            if tid in node_ids:
                raise MalformedLine(lineno, f"duplicate node id {tid!r}")
            node_ids.add(tid)
            tanks.append(Tank(tid, _number(toks[1], lineno, "head")))
        elif section == "PIPES":
            if len(toks) != 6:
                raise MalformedLine(lineno, f"[PIPES] expects 6 columns, got {len(toks)}")
            pipe_rows.append((lineno, toks))
        elif section == "PUMPS":
            if len(toks) != 6:
                raise MalformedLine(lineno, f"[PUMPS] expects 6 columns, got {len(toks)}")
            pump_rows.append((lineno, toks))
        elif section == "CURVES":
            if len(toks) != 3:
                raise MalformedLine(lineno, f"[CURVES] expects 3 columns, got {len(toks)}")
            x = _number(toks[1], lineno, "curve x")
            y = _number(toks[2], lineno, "curve y")
            curves.setdefault(toks[0], []).append((x, y))
        elif section == "DEMANDS":
            if len(toks) != 2:
                raise MalformedLine(lineno, f"[DEMANDS] expects 2 columns, got {len(toks)}")
            demand_rows.append((lineno, toks))

    junction_by_id = {j.id: i for i, j in enumerate(junctions)}
    for lineno, toks in demand_rows:
        if toks[0] not in junction_by_id:
            raise DanglingReference(toks[0], "[DEMANDS]")
        demand = _number(toks[1], lineno, "demand")
        if demand < 0:
            raise MalformedLine(lineno, f"demand must be >= 0, got {demand}")
        i = junction_by_id[toks[0]]
        junctions[i] = replace(junctions[i], base_demand=demand)

    pipes: list[Pipe] = []
    for lineno, toks in pipe_rows:
        pid, from_node, to_node = toks[0], toks[1], toks[2]
        if pid in link_ids:
            raise MalformedLine(lineno, f"duplicate link id {pid!r}")
        link_ids.add(pid)
        length = _number(toks[3], lineno, "length")
        diameter_mm = _number(toks[4], lineno, "diameter")
        roughness = _number(toks[5], lineno, "roughness")
        if length <= 0 or diameter_mm <= 0 or roughness <= 0:
            raise MalformedLine(lineno, "pipe length, diameter and roughness must be > 0")
        for node in (from_node, to_node):
            if node not in node_ids:
                raise DanglingReference(node, f"pipe {pid!r}")
        pipes.append(Pipe(pid, from_node, to_node, length, diameter_mm / 1000.0, roughness))

    groups: list[PumpGroup] = []
    for lineno, toks in pump_rows:
        gid, from_node, to_node, hcid, ecid = toks[0], toks[1], toks[2], toks[3], toks[4]
        if gid in link_ids:
            raise MalformedLine(lineno, f"duplicate link id {gid!r}")
        link_ids.add(gid)
        try:
            n_identical = int(toks[5])
        except ValueError:
            raise MalformedLine(lineno, f"n_identical is not an integer: {toks[5]!r}") from None
        if n_identical < 1:
            raise MalformedLine(lineno, f"n_identical must be >= 1, got {n_identical}")
        for node in (from_node, to_node):
            if node not in node_ids:
                raise DanglingReference(node, f"pump group {gid!r}")
        for cid in (hcid, ecid):
            if cid not in curves:
                raise MissingCurve(cid)
        head_curve = _validated_head_curve(hcid, curves[hcid])
        eff_curve = _validated_efficiency_curve(ecid, curves[ecid])
        peak = max(eta for _, eta in eff_curve)
        groups.append(PumpGroup(gid, from_node, to_node, n_identical, head_curve, eff_curve, peak))

    net = Network(
        junctions=tuple(junctions),
        reservoirs=tuple(reservoirs),
        tanks=tuple(tanks),
        pipes=tuple(pipes),
        pump_groups=tuple(groups),
        node_index=tuple(j.id for j in junctions),
        warnings=tuple(warnings),
    )
    _validate_topology(net)
    return net


def _validated_head_curve(cid, points) -> tuple[tuple[float, float], ...]:
    pts = tuple(sorted(points))
    if len(pts) < 2:
        raise InvalidCurve(cid, "head curve needs at least two points")
    qs = [q for q, _ in pts]
    if len(set(qs)) != len(qs):
        raise InvalidCurve(cid, "duplicate flow values")
    heads = [h for _, h in pts]
    if any(h2 >= h1 for h1, h2 in zip(heads, heads[1:])):
        raise InvalidCurve(cid, "head must be strictly decreasing in flow")
    if any(q < 0 for q in qs) or any(h <= 0 for h in heads[:-1]) or heads[-1] < 0:
        raise InvalidCurve(cid, "head-curve points must have Q >= 0 and H >= 0")
    return pts


def _validated_efficiency_curve(cid, points) -> tuple[tuple[float, float], ...]:
    pts = tuple(sorted(points))
    if len(pts) < 2:
        raise InvalidCurve(cid, "efficiency curve needs at least two points")
    qs = [q for q, _ in pts]
    if len(set(qs)) != len(qs):
        raise InvalidCurve(cid, "duplicate flow values")
    if any(not (0.0 < eta <= 1.0) for _, eta in pts):
        raise InvalidCurve(cid, "efficiency values must lie in (0, 1]")
    return pts


def _validate_topology(net: Network) -> None:
    all_nodes = (
        [j.id for j in net.junctions]
        + [r.id for r in net.reservoirs]
        + [t.id for t in net.tanks]
    )
    if not net.reservoirs and not net.tanks:
        raise NetworkError("network needs at least one reservoir or tank as a head reference")
    adjacency: dict[str, list[str]] = {n: [] for n in all_nodes}
    for link in list(net.pipes) + list(net.pump_groups):
        adjacency[link.from_node].append(link.to_node)
        adjacency[link.to_node].append(link.from_node)
    seen = {all_nodes[0]}
    frontier = [all_nodes[0]]
    while frontier:
        node = frontier.pop()
        for other in adjacency[node]:
            if other not in seen:
                seen.add(other)
                frontier.append(other)
    if len(seen) != len(all_nodes):
        raise DisconnectedGraph(set(all_nodes) - seen)


def serialize_network(net: Network) -> str:
    """Canonical INP text; ``parse_network`` on the output reproduces ``net``."""
    out: list[str] = []
    out.append("[JUNCTIONS]")
    for j in net.junctions:
        out.append(f"{j.id} {j.elevation!r} {j.base_demand!r}")
    out.append("[RESERVOIRS]")
    for r in net.reservoirs:
        out.append(f"{r.id} {r.head!r}")
    out.append("[TANKS]")
    for t in net.tanks:
        out.append(f"{t.id} {t.head!r}")
    out.append("[PIPES]")
    for p in net.pipes:
        out.append(f"{p.id} {p.from_node} {p.to_node} {p.length!r} {p.diameter * 1000.0!r} {p.roughness!r}")
    out.append("[PUMPS]")
    for g in net.pump_groups:
        out.append(f"{g.id} {g.from_node} {g.to_node} HC_{g.id} EC_{g.id} {g.n_identical}")
    out.append("[CURVES]")
    for g in net.pump_groups:
        for q, h in g.head_curve:
            out.append(f"HC_{g.id} {q!r} {h!r}")
        for q, eta in g.efficiency_curve:
            out.append(f"EC_{g.id} {q!r} {eta!r}")
    return "\n".join(out) + "\n"


def shutoff_head_max(net: Network, s_hi: float = 1.0) -> float:
    """Highest shut-off head over the pump groups, scaled to speed ``s_hi``.

    The affinity laws scale the Q=0 head by the squared speed ratio, so the
    ceiling any pump can produce is ``H(0) * s_hi**2``.
    """
    best = None
    for group in net.pump_groups:
        h0 = next((h for q, h in group.head_curve if q == 0.0), None)
        if h0 is None:
            raise MissingShutoffPoint(group.id)
        value = h0 * s_hi * s_hi
        best = value if best is None or value > best else best
    if best is None:
        raise MissingShutoffPoint("<no pump groups>")
    return best


def bundled_network_path(name: str):
    """Filesystem path of a bundled network ('anytown-mod' or 'dtown-mod')."""
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled network {name!r}; known: {sorted(BUNDLED)}")
    return resources.files("pumpsurge.data") / BUNDLED[name]


def load_bundled(name: str) -> Network:
    return parse_network(bundled_network_path(name).read_text())
