"""Graph model of the deployed network and per-slot lightpath resolution.

The topology (nodes, devices, spans, wiring) is immutable after build.
Everything that can change at runtime lives in :class:`NetworkState`:
MEMS switch states, WSS routing tables, and span up/failed status. State
objects are small immutable values, so what-if evaluation is cheap and
safe to run in parallel.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Iterator, Mapping

from .grid import FrequencySlot, GridError, slot_from_key

MAX_HOPS = 64

PASS = "pass"
CROSS = "cross"


class TopologyError(ValueError):
    """Raised for malformed topology documents or unknown element references."""

    def __init__(self, diagnostics: list[str] | str):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = diagnostics
        super().__init__("; ".join(diagnostics))


@dataclass(frozen=True)
class Node:
    id: str
    kind: str  # source | hub | user | panel


@dataclass(frozen=True)
class Wss:
    """Wavelength-selective switch: one input, routed per slot to one output.

    ``slot_loss_db`` holds per-slot insertion-loss overrides (programmable
    per-slot attenuation); absent slots use ``insertion_loss_db``.
    """

    id: str
    node: str
    output_ports: tuple[str, ...]
    insertion_loss_db: float
    slot_loss_db: Mapping[str, float] = field(default_factory=dict)
    input_port: str = "in"

    def loss_for(self, slot: FrequencySlot | None) -> float:
        if slot is not None and slot.key in self.slot_loss_db:
            return float(self.slot_loss_db[slot.key])
        return self.insertion_loss_db

    @property
    def ports(self) -> tuple[str, ...]:
        return (self.input_port,) + self.output_ports


@dataclass(frozen=True)
class Mems2x1:
    """2x1 MEMS switch: ``pass`` selects in_a, ``cross`` selects in_b."""

    id: str
    node: str
    loss_db: float

    @property
    def ports(self) -> tuple[str, ...]:
        return ("in_a", "in_b", "out")

    def pairing(self, state: str) -> dict[str, str]:
        selected = "in_a" if state == PASS else "in_b"
        return {selected: "out", "out": selected}


@dataclass(frozen=True)
class Mems2x2:
    """2x2 MEMS switch pairing (in_a, in_b) with (out_a, out_b)."""

    id: str
    node: str
    loss_db: float

    @property
    def ports(self) -> tuple[str, ...]:
        return ("in_a", "in_b", "out_a", "out_b")

    def pairing(self, state: str) -> dict[str, str]:
        if state == PASS:
            lanes = [("in_a", "out_a"), ("in_b", "out_b")]
        else:
            lanes = [("in_a", "out_b"), ("in_b", "out_a")]
        table: dict[str, str] = {}
        for a, b in lanes:
            table[a] = b
            table[b] = a
        return table


@dataclass(frozen=True)
class Circulator:
    """Ideal three-port circulator, strictly 1 -> 2 -> 3 -> 1."""

    id: str
    node: str
    loss_db: float

    @property
    def ports(self) -> tuple[str, ...]:
        return ("p1", "p2", "p3")

    def next_port(self, entry: str) -> str:
        return {"p1": "p2", "p2": "p3", "p3": "p1"}[entry]


@dataclass(frozen=True)
class FiberSpan:
    """Lumped-loss fiber span; length is metadata only. Failed spans transmit nothing."""

    id: str
    node_a: str
    node_b: str
    length_m: float
    loss_db: float
    protected: bool = False  # interbuilding spans eligible for failure diagnosis

    @property
    def ports(self) -> tuple[str, ...]:
        return ("a", "b")


@dataclass(frozen=True)
class Terminal:
    """Source output or user input; ends of every lightpath."""

    id: str
    kind: str  # "source" | "user"

    @property
    def ports(self) -> tuple[str, ...]:
        return ("out",) if self.kind == "source" else ("in",)


Element = Wss | Mems2x1 | Mems2x2 | Circulator | FiberSpan | Terminal


@dataclass(frozen=True)
class PortRef:
    element: str
    port: str

    def __str__(self) -> str:
        return f"{self.element}:{self.port}"

    @classmethod
    def parse(cls, text: str) -> "PortRef":
        if text.count(":") != 1:
            raise TopologyError(f"bad port reference {text!r}, expected 'element:port'")
        element, port = text.split(":")
        return cls(element, port)


@dataclass(frozen=True)
class Topology:
    nodes: tuple[Node, ...]
    elements: Mapping[str, Element]
    wiring: Mapping[PortRef, PortRef]
    source_id: str

    def element(self, element_id: str) -> Element:
        try:
            return self.elements[element_id]
        except KeyError:
            raise TopologyError(f"unknown element {element_id!r}") from None

    def users(self) -> tuple[str, ...]:
        return tuple(
            e.id
            for e in self.elements.values()
            if isinstance(e, Terminal) and e.kind == "user"
        )

    def spans(self) -> tuple[FiberSpan, ...]:
        return tuple(e for e in self.elements.values() if isinstance(e, FiberSpan))

    def mems_ids(self) -> tuple[str, ...]:
        return tuple(
            sorted(e.id for e in self.elements.values() if isinstance(e, (Mems2x1, Mems2x2)))
        )

    def wss_ids(self) -> tuple[str, ...]:
        return tuple(sorted(e.id for e in self.elements.values() if isinstance(e, Wss)))


@dataclass(frozen=True)
class NetworkState:
    """Mutable-in-spirit runtime state, stored as immutable values."""

    mems: Mapping[str, str]  # device id -> "pass" | "cross"
    wss_routing: Mapping[str, Mapping[str, str]]  # wss id -> slot key -> output port
    span_status: Mapping[str, str]  # span id -> "up" | "failed"

    def route_for(self, wss_id: str, slot: FrequencySlot) -> str | None:
        return self.wss_routing.get(wss_id, {}).get(slot.key)


def initial_state(topo: Topology) -> NetworkState:
    mems = {mid: PASS for mid in topo.mems_ids()}
    spans = {s.id: "up" for s in topo.spans()}
    return NetworkState(
        mems=MappingProxyType(mems),
        wss_routing=MappingProxyType({}),
        span_status=MappingProxyType(spans),
    )


def set_device_state(state: NetworkState, device_id: str, new_state: str) -> NetworkState:
    if device_id not in state.mems:
        raise TopologyError(f"unknown MEMS device {device_id!r}")
    if new_state not in (PASS, CROSS):
        raise TopologyError(f"invalid MEMS state {new_state!r}")
    mems = dict(state.mems)
    mems[device_id] = new_state
    return replace(state, mems=MappingProxyType(mems))


def set_wss_route(
    state: NetworkState, wss_id: str, slot: FrequencySlot, output_port: str
) -> NetworkState:
    routing = {k: dict(v) for k, v in state.wss_routing.items()}
    routing.setdefault(wss_id, {})[slot.key] = output_port
    frozen = MappingProxyType({k: MappingProxyType(v) for k, v in routing.items()})
    return replace(state, wss_routing=frozen)


def fail_span(state: NetworkState, span_id: str) -> NetworkState:
    if span_id not in state.span_status:
        raise TopologyError(f"unknown span {span_id!r}")
    spans = dict(state.span_status)
    spans[span_id] = "failed"
    return replace(state, span_status=MappingProxyType(spans))


def restore_span(state: NetworkState, span_id: str) -> NetworkState:
    if span_id not in state.span_status:
        raise TopologyError(f"unknown span {span_id!r}")
    spans = dict(state.span_status)
    spans[span_id] = "up"
    return replace(state, span_status=MappingProxyType(spans))


@dataclass(frozen=True)
class Hop:
    element: str
    entry_port: str
    exit_port: str
    loss_db: float


@dataclass(frozen=True)
class Lightpath:
    slot: FrequencySlot | None
    user: str
    hops: tuple[Hop, ...]

    @property
    def total_loss_db(self) -> float:
        return sum(h.loss_db for h in self.hops)

    def traverses(self, element_id: str) -> bool:
        return any(h.element == element_id for h in self.hops)

    def hop_elements(self) -> tuple[str, ...]:
        return tuple(h.element for h in self.hops)


@dataclass(frozen=True)
class Blocked:
    """Non-transmitting outcome of a traversal; a value, not an error."""

    element: str
    reason: str

    def __str__(self) -> str:
        return f"blocked at {self.element}: {self.reason}"


def path_loss_db(path: Lightpath) -> float:
    """Total loss of a lightpath in dB (0 for an empty path)."""
    return path.total_loss_db


def _traverse(
    topo: Topology,
    state: NetworkState,
    slot: FrequencySlot | None,
    user: str,
) -> Lightpath | Blocked:
    """Walk the port graph from the source toward ``user``."""
    here = PortRef(topo.source_id, "out")
    hops: list[Hop] = [Hop(topo.source_id, "out", "out", 0.0)]
    for _ in range(MAX_HOPS):
        peer = topo.wiring.get(here)
        if peer is None:
            return Blocked(here.element, f"port {here} is unconnected")
        elem = topo.element(peer.element)
        entry = peer.port

        if isinstance(elem, Terminal):
            if elem.kind == "user":
                if elem.id == user:
                    return Lightpath(slot=slot, user=user, hops=tuple(hops))
                return Blocked(elem.id, f"delivered to {elem.id}, wanted {user}")
            return Blocked(elem.id, "re-entered source")

        if isinstance(elem, Wss):
            if entry != elem.input_port:
                return Blocked(elem.id, f"light arrived at output port {entry}")
            out = state.route_for(elem.id, slot) if slot is not None else None
            if out is None:
                return Blocked(elem.id, f"no route for slot {slot}")
            if out not in elem.output_ports:
                return Blocked(elem.id, f"routed to unknown port {out!r}")
            hops.append(Hop(elem.id, entry, out, elem.loss_for(slot)))
            here = PortRef(elem.id, out)
            continue

        if isinstance(elem, (Mems2x1, Mems2x2)):
            mems_state = state.mems.get(elem.id, PASS)
            pairing = elem.pairing(mems_state)
            out = pairing.get(entry)
            if out is None:
                return Blocked(elem.id, f"port {entry} dark in {mems_state} state")
            hops.append(Hop(elem.id, entry, out, elem.loss_db))
            here = PortRef(elem.id, out)
            continue

        if isinstance(elem, Circulator):
            out = elem.next_port(entry)
            hops.append(Hop(elem.id, entry, out, elem.loss_db))
            here = PortRef(elem.id, out)
            continue

        if isinstance(elem, FiberSpan):
            if state.span_status.get(elem.id, "up") != "up":
                return Blocked(elem.id, "span failed")
            out = "b" if entry == "a" else "a"
            hops.append(Hop(elem.id, entry, out, elem.loss_db))
            here = PortRef(elem.id, out)
            continue

        return Blocked(peer.element, "unsupported element")  # pragma: no cover

    return Blocked(here.element, f"no terminal within {MAX_HOPS} hops")


def resolve_lightpath(
    topo: Topology, state: NetworkState, slot: FrequencySlot, user: str
) -> Lightpath | Blocked:
    """Deterministic traversal of one slot from the source to ``user``.

    Returns :class:`Blocked` (a value) carrying the first non-transmitting
    element. An unknown user is a fault.
    """
    if user not in topo.users():
        raise TopologyError(f"unknown user {user!r}")
    return _traverse(topo, state, slot, user)


@dataclass(frozen=True)
class RouteOption:
    """One reachable route: the MEMS states that enable it, the WSS egress
    ports it implies, and the resolved path."""

    mems_states: Mapping[str, str]
    wss_ports: Mapping[str, str]
    path: Lightpath


def _search_route(
    topo: Topology,
    state: NetworkState,
    user: str,
    slot: FrequencySlot | None,
) -> RouteOption | None:
    """DFS over WSS output choices (WSS programming is controller-settable),
    with MEMS states and span statuses fixed. First hit in declared port
    order wins, which makes enumeration deterministic."""

    def walk(here: PortRef, hops: list[Hop], ports: dict[str, str], seen: set[PortRef]):
        peer = topo.wiring.get(here)
        if peer is None or peer in seen:
            return None
        seen = seen | {peer}
        elem = topo.element(peer.element)
        entry = peer.port
        if isinstance(elem, Terminal):
            if elem.kind == "user" and elem.id == user:
                return RouteOption(
                    mems_states=MappingProxyType(dict(state.mems)),
                    wss_ports=MappingProxyType(dict(ports)),
                    path=Lightpath(slot=slot, user=user, hops=tuple(hops)),
                )
            return None
        if isinstance(elem, Wss):
            if entry != elem.input_port:
                return None
            for out in elem.output_ports:
                hop = Hop(elem.id, entry, out, elem.loss_for(slot))
                found = walk(
                    PortRef(elem.id, out), hops + [hop], {**ports, elem.id: out}, seen
                )
                if found is not None:
                    return found
            return None
        if isinstance(elem, (Mems2x1, Mems2x2)):
            out = elem.pairing(state.mems.get(elem.id, PASS)).get(entry)
            if out is None:
                return None
            return walk(PortRef(elem.id, out), hops + [Hop(elem.id, entry, out, elem.loss_db)], ports, seen)
        if isinstance(elem, Circulator):
            out = elem.next_port(entry)
            return walk(PortRef(elem.id, out), hops + [Hop(elem.id, entry, out, elem.loss_db)], ports, seen)
        if isinstance(elem, FiberSpan):
            if state.span_status.get(elem.id, "up") != "up":
                return None
            out = "b" if entry == "a" else "a"
            return walk(PortRef(elem.id, out), hops + [Hop(elem.id, entry, out, elem.loss_db)], ports, seen)
        return None  # pragma: no cover

    start = PortRef(topo.source_id, "out")
    return walk(start, [Hop(topo.source_id, "out", "out", 0.0)], {}, {start})


def enumerate_routes(
    topo: Topology,
    user: str,
    slot: FrequencySlot | None = None,
    state: NetworkState | None = None,
) -> tuple[RouteOption, ...]:
    """All distinct routes to ``user`` over the MEMS state combinations.

    Span statuses come from ``state`` (all up by default); routes through
    failed spans simply do not appear. Duplicate hop lists produced by
    irrelevant MEMS settings are removed.
    """
    if user not in topo.users():
        raise TopologyError(f"unknown user {user!r}")
    base = state if state is not None else initial_state(topo)
    mems_ids = topo.mems_ids()
    options: list[RouteOption] = []
    seen_hoplists: set[tuple[str, ...]] = set()
    for combo in itertools.product((PASS, CROSS), repeat=len(mems_ids)):
        trial = replace(base, mems=MappingProxyType(dict(zip(mems_ids, combo))))
        found = _search_route(topo, trial, user, slot)
        if found is None:
            continue
        hoplist = found.path.hop_elements()
        if hoplist in seen_hoplists:
            continue
        seen_hoplists.add(hoplist)
        options.append(found)
    return tuple(options)


def route_slot(
    topo: Topology, state: NetworkState, slot: FrequencySlot, user: str
) -> RouteOption | None:
    """Best route for one slot under the current MEMS/span state, treating
    only WSS programming as free. None when the user is unreachable."""
    if user not in topo.users():
        raise TopologyError(f"unknown user {user!r}")
    return _search_route(topo, state, user, slot)


# ---------------------------------------------------------------------------
# Topology construction


def build_topology(config: dict) -> Topology:
    """Validate a topology document and build the immutable graph.

    Diagnostics carry the path of the offending element; all problems found
    in one pass are reported together.
    """
    problems: list[str] = []
    nodes = []
    node_ids = set()
    for idx, nd in enumerate(config.get("nodes", [])):
        nid, kind = nd.get("id"), nd.get("kind")
        if not nid or not kind:
            problems.append(f"nodes[{idx}]: missing id or kind")
            continue
        if nid in node_ids:
            problems.append(f"nodes[{idx}]: duplicate node id {nid!r}")
        node_ids.add(nid)
        nodes.append(Node(nid, kind))

    elements: dict[str, Element] = {}

    def add(elem: Element, where: str) -> None:
        if elem.id in elements:
            problems.append(f"{where}: duplicate element id {elem.id!r}")
        else:
            elements[elem.id] = elem

    source_ids = [n.id for n in nodes if n.kind == "source"]
    if not source_ids:
        problems.append("nodes: no source")
    for n in nodes:
        if n.kind in ("source", "user"):
            add(Terminal(n.id, n.kind), f"nodes[{n.id}]")

    for idx, dv in enumerate(config.get("devices", [])):
        where = f"devices[{idx}]"
        kind = dv.get("type")
        try:
            if kind == "wss":
                slot_loss = {str(k): float(v) for k, v in dv.get("slot_loss_db", {}).items()}
                for key in slot_loss:
                    slot_from_key(key)  # validate keys early
                add(
                    Wss(
                        id=dv["id"],
                        node=dv.get("node", ""),
                        output_ports=tuple(dv["output_ports"]),
                        insertion_loss_db=float(dv["insertion_loss_db"]),
                        slot_loss_db=MappingProxyType(slot_loss),
                    ),
                    where,
                )
            elif kind == "mems_2x1":
                add(Mems2x1(dv["id"], dv.get("node", ""), float(dv["loss_db"])), where)
            elif kind == "mems_2x2":
                add(Mems2x2(dv["id"], dv.get("node", ""), float(dv["loss_db"])), where)
            elif kind == "circulator":
                add(Circulator(dv["id"], dv.get("node", ""), float(dv["loss_db"])), where)
            else:
                problems.append(f"{where}: unknown device type {kind!r}")
        except (KeyError, TypeError, ValueError, GridError) as exc:
            problems.append(f"{where}: {exc}")

    for idx, sp in enumerate(config.get("spans", [])):
        where = f"spans[{idx}]"
        try:
            loss = float(sp["loss_db"])
            if loss < 0:
                problems.append(f"{where}: negative loss")
            add(
                FiberSpan(
                    id=sp["id"],
                    node_a=sp.get("node_a", ""),
                    node_b=sp.get("node_b", ""),
                    length_m=float(sp.get("length_m", 0.0)),
                    loss_db=loss,
                    protected=bool(sp.get("protected", False)),
                ),
                where,
            )
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"{where}: {exc}")

    wiring: dict[PortRef, PortRef] = {}
    used_ports: set[PortRef] = set()
    for idx, pair in enumerate(config.get("wiring", [])):
        where = f"wiring[{idx}]"
        try:
            a, b = PortRef.parse(pair[0]), PortRef.parse(pair[1])
        except (TopologyError, IndexError, TypeError) as exc:
            problems.append(f"{where}: {exc}")
            continue
        for ref in (a, b):
            if ref.element not in elements:
                problems.append(f"{where}: unknown element {ref.element!r}")
                break
            elem = elements[ref.element]
            if ref.port not in elem.ports:
                problems.append(f"{where}: element {ref.element!r} has no port {ref.port!r}")
                break
            if ref in used_ports:
                problems.append(f"{where}: port conflict on {ref}")
                break
        else:
            used_ports.add(a)
            used_ports.add(b)
            wiring[a] = b
            wiring[b] = a

    if problems:
        raise TopologyError(problems)

    return Topology(
        nodes=tuple(nodes),
        elements=MappingProxyType(elements),
        wiring=MappingProxyType(wiring),
        source_id=source_ids[0],
    )


def load_topology(path: str | Path) -> Topology:
    return build_topology(json.loads(Path(path).read_text()))
