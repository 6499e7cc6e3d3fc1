"""MEC domain model: EDCs, elements, fabric links and the SID registry.

The element graph has two kinds of edges. Elements inside one EDC form an
implicit full mesh whose every hop costs ``intra_edc_delay_us``. Elements in
different EDCs are joined only by explicit :class:`Link` objects whose delay,
capacity and protection come from the optical layer.

Only fabric routers and optical nodes forward transit traffic. CUs, UPFs and
ECs originate or terminate segment spans but never relay packets they are not
the active segment for.
"""

from __future__ import annotations

import copy
import heapq
import ipaddress
import json
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    DuplicateElement,
    DuplicateSid,
    NoLiveInstance,
    ParseError,
    UnknownEdc,
    UnknownElement,
    UnknownSid,
    ValidationError,
)
from .timebase import fmt_ms, ms_to_us

FORMAT_VERSION = 1
DEFAULT_INTRA_EDC_DELAY_US = 50
DEFAULT_SRV6_PREFIX = 0xFD000000
MAX_SID = 2**32 - 1


class SidKind(str, Enum):
    NODE = "NodeSid"
    PREFIX = "PrefixSid"
    ANYCAST = "AnycastSid"
    APP = "AppSid"


class ElementType(str, Enum):
    CU = "CU"
    UPF = "UPF"
    EC = "EC"
    FABRIC_ROUTER = "FabricRouter"
    OPTICAL_NODE = "OpticalNode"


#: element types that must carry a NodeSid
FORWARDING_TYPES = frozenset({ElementType.CU, ElementType.UPF, ElementType.FABRIC_ROUTER})
#: element types allowed to relay transit traffic
TRANSIT_TYPES = frozenset({ElementType.FABRIC_ROUTER, ElementType.OPTICAL_NODE})
APP_KINDS = frozenset({SidKind.APP, SidKind.ANYCAST, SidKind.PREFIX})


@dataclass(frozen=True, order=True)
class SegmentId:
    """A routable segment identifier.

    Equality and ordering use ``(value, kind)`` only; ``v6_form`` is derived
    from the value and so never disagrees between equal ids.
    """

    value: int
    kind: SidKind = SidKind.NODE
    v6_form: int | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not 0 <= self.value <= MAX_SID:
            raise ValueError(f"SID value {self.value} outside 32-bit range")
        if not isinstance(self.kind, SidKind):
            object.__setattr__(self, "kind", SidKind(self.kind))

    def with_v6(self, prefix_tag: int = DEFAULT_SRV6_PREFIX) -> SegmentId:
        return SegmentId(self.value, self.kind, srv6_form(self.value, prefix_tag))

    @property
    def v6_address(self) -> ipaddress.IPv6Address | None:
        return None if self.v6_form is None else ipaddress.IPv6Address(self.v6_form)

    def to_json(self) -> dict:
        out = {"value": self.value, "kind": self.kind.value}
        if self.v6_form is not None:
            out["v6"] = str(self.v6_address)
        return out

    def __str__(self) -> str:
        return str(self.value)


def srv6_form(value: int, prefix_tag: int = DEFAULT_SRV6_PREFIX) -> int:
    """128-bit form: 32-bit prefix tag, 64 zero bits, 32-bit SID value."""
    return (prefix_tag << 96) | value


def sid_from_srv6(v6: int) -> tuple[int, int]:
    """Inverse of :func:`srv6_form`: returns ``(prefix_tag, value)``."""
    return v6 >> 96, v6 & MAX_SID


def default_sid(edc_index: int, ordinal: int) -> int:
    """Readable EDC-local SID: 12 + EDC digit + ordinal (1210, 1221, ...)."""
    if not 0 <= ordinal <= 9 or not 0 <= edc_index <= 9:
        raise ValueError("default numbering covers 10 EDCs of 10 elements")
    return 1200 + 10 * edc_index + ordinal


@dataclass(frozen=True)
class ElementRecord:
    element_id: str
    element_type: ElementType
    sid: SegmentId
    edc_id: str
    provider_id: str = "default"
    app_ids: frozenset[SegmentId] = frozenset()


@dataclass
class EdcRecord:
    edc_id: str
    elements: list[ElementRecord] = field(default_factory=list)

    @property
    def has_ec(self) -> bool:
        return any(e.element_type is ElementType.EC for e in self.elements)


@dataclass
class Link:
    """Bidirectional fabric link between elements of different EDCs.

    A backup link (``backup_of`` set) joins the same endpoints over a diverse
    optical route and stays in standby (``admin_up=False``) until a
    protection switch. ``restoring`` marks a failed primary whose protection
    switch is still in progress: routing has not moved off it yet, and any
    packet sent across it is lost.
    """

    link_id: str
    a: str
    b: str
    delay_us: int
    capacity_gbps: float
    protected: bool = False
    backup_of: str | None = None
    admin_up: bool = True
    error_rate: float = 0.0
    restoring: bool = False

    @property
    def delay_ms(self) -> float:
        return self.delay_us / 1000

    @property
    def endpoints(self) -> frozenset[str]:
        return frozenset((self.a, self.b))

    def other(self, element_id: str) -> str:
        return self.b if element_id == self.a else self.a


@dataclass(frozen=True)
class Edge:
    """One usable adjacency in the routing graph."""

    neighbor: str
    delay_us: int
    link_id: str | None  # None for an intra-EDC hop


class Topology:
    """Validated MECD topology with deterministic min-delay routing."""

    def __init__(
        self,
        edcs: Iterable[EdcRecord],
        links: Iterable[Link],
        intra_edc_delay_us: int = DEFAULT_INTRA_EDC_DELAY_US,
        srv6_prefix: int | None = None,
    ):
        self.edcs = list(edcs)
        self.links = list(links)
        self.intra_edc_delay_us = intra_edc_delay_us
        self.srv6_prefix = srv6_prefix
        self.version = 0
        self._cache: dict = {}

    # -- lookup ---------------------------------------------------------------

    @property
    def elements(self) -> dict[str, ElementRecord]:
        key = ("elements", self.version)
        if key not in self._cache:
            self._cache[key] = {e.element_id: e for edc in self.edcs for e in edc.elements}
        return self._cache[key]

    def element(self, element_id: str) -> ElementRecord:
        try:
            return self.elements[element_id]
        except KeyError:
            raise UnknownElement(element_id) from None

    def edc(self, edc_id: str) -> EdcRecord:
        for edc in self.edcs:
            if edc.edc_id == edc_id:
                return edc
        raise UnknownEdc(edc_id)

    def edc_of(self, element_id: str) -> str:
        return self.element(element_id).edc_id

    def link(self, link_id: str) -> Link:
        for link in self.links:
            if link.link_id == link_id:
                return link
        raise KeyError(link_id)

    def backup_for(self, link_id: str) -> Link | None:
        for link in self.links:
            if link.backup_of == link_id:
                return link
        return None

    def elements_of_type(self, element_type: ElementType) -> list[str]:
        return sorted(e.element_id for e in self.elements.values() if e.element_type is element_type)

    def is_transit(self, element_id: str) -> bool:
        return self.element(element_id).element_type in TRANSIT_TYPES

    def copy(self) -> Topology:
        dup = copy.deepcopy(self)
        dup._cache = {}
        return dup

    # -- mutation (single writer: the event loop) -------------------------------

    def touch(self) -> None:
        """Invalidate routing caches after any in-place change."""
        self.version += 1
        self._cache.clear()

    def add_element(self, record: ElementRecord) -> None:
        if record.element_id in self.elements:
            if self.elements[record.element_id] == record:
                return
            raise DuplicateElement(record.element_id)
        self.edc(record.edc_id).elements.append(record)
        self.touch()

    # -- routing ----------------------------------------------------------------

    def adjacency(self, include_restoring: bool = True) -> dict[str, dict[str, Edge]]:
        """Usable adjacency: intra-EDC mesh plus up links.

        With ``include_restoring`` the failed-but-not-yet-switched links stay
        in the graph, which is what the data plane sees during a protection
        switch. Path computation passes ``False``.
        """
        key = ("adj", include_restoring, self.version)
        if key in self._cache:
            return self._cache[key]
        adj: dict[str, dict[str, Edge]] = {eid: {} for eid in self.elements}
        for edc in self.edcs:
            ids = [e.element_id for e in edc.elements]
            for u in ids:
                for v in ids:
                    if u != v:
                        adj[u][v] = Edge(v, self.intra_edc_delay_us, None)
        for link in sorted(self.links, key=lambda l: l.link_id):
            usable = (link.admin_up and not link.restoring) or (include_restoring and link.restoring)
            if not usable:
                continue
            for u, v in ((link.a, link.b), (link.b, link.a)):
                cur = adj[u].get(v)
                if cur is None or (link.delay_us, link.link_id) < (cur.delay_us, cur.link_id or ""):
                    adj[u][v] = Edge(v, link.delay_us, link.link_id)
        self._cache[key] = adj
        return adj

    def distances_to(self, dst: str, include_restoring: bool = True) -> dict[str, tuple[int, int]]:
        """Cost ``(delay_us, hops)`` from every element that can reach ``dst``.

        Non-transit elements get a distance (they may originate traffic) but
        are never relaxed through.
        """
        key = ("dist", dst, include_restoring, self.version)
        if key in self._cache:
            return self._cache[key]
        adj = self.adjacency(include_restoring)
        types = {eid: rec.element_type for eid, rec in self.elements.items()}
        dist = {dst: (0, 0)}
        heap = [(0, 0, dst)]
        done = set()
        while heap:
            d, h, v = heapq.heappop(heap)
            if v in done:
                continue
            done.add(v)
            if v != dst and types[v] not in TRANSIT_TYPES:
                continue
            for u, edge in adj[v].items():
                cand = (d + edge.delay_us, h + 1)
                if u not in dist or cand < dist[u]:
                    dist[u] = cand
                    heapq.heappush(heap, (cand[0], cand[1], u))
        self._cache[key] = dist
        return dist

    def next_hop(self, cur: str, dst: str, include_restoring: bool = True) -> Edge | None:
        """Next hop from ``cur`` toward ``dst``; ties go to the lowest element id."""
        if cur == dst:
            return None
        dist = self.distances_to(dst, include_restoring)
        if cur not in dist:
            return None
        target = dist[cur]
        best = None
        for n, edge in self.adjacency(include_restoring)[cur].items():
            if n not in dist or (n != dst and not self.is_transit(n)):
                continue
            dn = dist[n]
            if (dn[0] + edge.delay_us, dn[1] + 1) == target and (best is None or n < best.neighbor):
                best = edge
        return best

    def route(self, src: str, dst: str, include_restoring: bool = True) -> list[Edge] | None:
        """Hop-by-hop route ``src -> dst`` as the list of traversed edges.

        Returns ``[]`` when ``src == dst`` and ``None`` when unreachable.
        """
        key = ("route", src, dst, include_restoring, self.version)
        if key in self._cache:
            return self._cache[key]
        hops: list[Edge] | None = []
        cur = src
        while cur != dst:
            edge = self.next_hop(cur, dst, include_restoring)
            if edge is None:
                hops = None
                break
            hops.append(edge)
            cur = edge.neighbor
        self._cache[key] = hops
        return hops

    def path_delay_us(self, src: str, dst: str) -> int | None:
        d = self.distances_to(dst).get(src)
        return None if d is None else d[0]


# -- SID registry --------------------------------------------------------------


class SidRegistry:
    """Index of registered elements by id, EDC, type, SID and hosted app."""

    def __init__(self, topology: Topology):
        self.topology = topology
        self._records: dict[str, ElementRecord] = {}
        self._by_sid: dict[SegmentId, list[str]] = {}

    def __contains__(self, element_id: str) -> bool:
        return element_id in self._records

    def record(self, element_id: str) -> ElementRecord:
        try:
            return self._records[element_id]
        except KeyError:
            raise UnknownElement(element_id) from None

    def records(self) -> list[ElementRecord]:
        return [self._records[k] for k in sorted(self._records)]

    def by_edc(self, edc_id: str) -> list[ElementRecord]:
        return [r for r in self.records() if r.edc_id == edc_id]

    def by_type(self, element_type: ElementType, edc_id: str | None = None) -> list[ElementRecord]:
        return [
            r
            for r in self.records()
            if r.element_type is element_type and (edc_id is None or r.edc_id == edc_id)
        ]

    def bound(self, sid: SegmentId) -> list[str]:
        return list(self._by_sid.get(sid, ()))

    def hosts(self, app_sid: SegmentId) -> list[str]:
        """ECs that host ``app_sid`` (statically or via activation)."""
        return [e for e in self.bound(app_sid) if self._records[e].element_type is ElementType.EC]

    def sids(self) -> list[SegmentId]:
        return sorted(self._by_sid)

    def sid_for_value(self, value: int) -> SegmentId:
        """Find the registered SegmentId with this numeric value."""
        matches = [s for s in self._by_sid if s.value == value]
        if not matches:
            raise UnknownSid(value)
        if len(matches) > 1:
            raise UnknownSid(f"SID value {value} is ambiguous across kinds")
        return matches[0]

    def node_sid(self, element_id: str) -> SegmentId:
        return self.record(element_id).sid

    def bind_app(self, app_sid: SegmentId, element_id: str) -> None:
        """Attach an extra app SID to an already registered element."""
        rec = self.record(element_id)
        if app_sid in rec.app_ids:
            return
        new = ElementRecord(
            rec.element_id, rec.element_type, rec.sid, rec.edc_id, rec.provider_id,
            rec.app_ids | {app_sid},
        )
        self._check_sid(app_sid, element_id)
        self._records[element_id] = new
        self._bind(app_sid, element_id)

    def _check_sid(self, sid: SegmentId, element_id: str) -> None:
        if sid.kind is SidKind.ANYCAST:
            return
        owners = self._by_sid.get(sid, [])
        if owners and owners != [element_id]:
            raise DuplicateSid(f"SID {sid.value} ({sid.kind.value}) already bound to {owners[0]}")

    def _bind(self, sid: SegmentId, element_id: str) -> None:
        owners = self._by_sid.setdefault(sid, [])
        if element_id not in owners:
            owners.append(element_id)
            owners.sort()


def register_element(registry: SidRegistry, record: ElementRecord) -> SidRegistry:
    """Register one element and its SIDs; identical re-registration is a no-op."""
    if record.edc_id not in {edc.edc_id for edc in registry.topology.edcs}:
        raise UnknownEdc(record.edc_id)
    existing = registry._records.get(record.element_id)
    if existing is not None:
        if existing == record:
            return registry
        raise DuplicateElement(f"{record.element_id} already registered with a different record")
    for sid in (record.sid, *sorted(record.app_ids)):
        registry._check_sid(sid, record.element_id)
    registry._records[record.element_id] = record
    for sid in (record.sid, *sorted(record.app_ids)):
        registry._bind(sid, record.element_id)
    return registry


def resolve_sid(registry: SidRegistry, sid: SegmentId, from_element: str | None = None) -> str:
    """Map a SID to the element that should receive it.

    Anycast SIDs go to the instance with the smallest path delay from
    ``from_element``, ties broken by element id.
    """
    owners = registry._by_sid.get(sid)
    if not owners:
        raise UnknownSid(f"SID {sid.value} ({sid.kind.value}) is not registered")
    if sid.kind is not SidKind.ANYCAST:
        return owners[0]
    if from_element is None:
        raise ValueError("anycast resolution needs a source element")
    best = None
    for inst in owners:
        d = registry.topology.path_delay_us(from_element, inst)
        if d is not None and (best is None or (d, inst) < best):
            best = (d, inst)
    if best is None:
        raise NoLiveInstance(f"no reachable instance of anycast SID {sid.value} from {from_element}")
    return best[1]


def build_registry(topology: Topology) -> SidRegistry:
    registry = SidRegistry(topology)
    for edc in topology.edcs:
        for rec in edc.elements:
            register_element(registry, rec)
    return registry


# -- config loading ------------------------------------------------------------

_TOP_KEYS = {"format_version", "edcs", "links", "sids", "intra_edc_delay_ms", "srv6_prefix"}
_EDC_KEYS = {"id", "elements", "has_ec"}
_ELEMENT_KEYS = {"id", "type", "sid", "provider", "app_ids"}
_LINK_KEYS = {
    "id", "from", "to", "delay_ms", "capacity_gbps", "protected", "backup_of", "admin_up",
    "error_rate",
}
_SID_KEYS = {"value", "kind", "element"}


class _Problems:
    def __init__(self):
        self.items: list[tuple[str, str]] = []

    def add(self, path: str, msg: str) -> None:
        self.items.append((path, msg))

    def unknown_keys(self, obj: dict, allowed: set, path: str, lax: bool) -> None:
        if lax:
            return
        for key in sorted(set(obj) - allowed):
            self.add(f"{path}.{key}", "unknown key")


def _parse_sid(raw, path: str, problems: _Problems, default_kind: SidKind) -> SegmentId | None:
    if isinstance(raw, bool):
        problems.add(path, "SID must be an integer or {value, kind}")
        return None
    if isinstance(raw, int):
        value, kind = raw, default_kind
    elif isinstance(raw, dict):
        value = raw.get("value")
        kind = raw.get("kind", default_kind.value)
        if not isinstance(value, int) or isinstance(value, bool):
            problems.add(f"{path}.value", "SID value must be an integer")
            return None
        try:
            kind = SidKind(kind)
        except ValueError:
            problems.add(f"{path}.kind", f"unknown SID kind {kind!r}")
            return None
    else:
        problems.add(path, "SID must be an integer or {value, kind}")
        return None
    if not 0 <= value <= MAX_SID:
        problems.add(path, f"SID {value} outside 32-bit range")
        return None
    return SegmentId(value, kind)


def _parse_prefix(raw, problems: _Problems) -> int | None:
    if raw is None:
        return None
    if raw is True:
        return DEFAULT_SRV6_PREFIX
    try:
        if isinstance(raw, int) and not isinstance(raw, bool):
            tag = raw
        else:
            tag = int(ipaddress.IPv6Address(str(raw))) >> 96
    except (ValueError, ipaddress.AddressValueError):
        problems.add("srv6_prefix", f"not an IPv6 prefix or 32-bit tag: {raw!r}")
        return None
    if not 0 <= tag <= MAX_SID:
        problems.add("srv6_prefix", "prefix tag must fit 32 bits")
        return None
    return tag


def parse_topology(data: dict, lax: bool = False, require_version: bool = True) -> Topology:
    """Build a validated Topology from a decoded config document."""
    problems = _Problems()
    if not isinstance(data, dict):
        raise ParseError("topology document must be a JSON object")
    if require_version or "format_version" in data:
        if data.get("format_version") != FORMAT_VERSION:
            problems.add("format_version", f"must be {FORMAT_VERSION}")
    problems.unknown_keys(data, _TOP_KEYS, "$", lax)

    intra_us = DEFAULT_INTRA_EDC_DELAY_US
    if "intra_edc_delay_ms" in data:
        try:
            intra_us = ms_to_us(data["intra_edc_delay_ms"])
            if intra_us < 0:
                problems.add("intra_edc_delay_ms", "must be >= 0")
        except ValueError as exc:
            problems.add("intra_edc_delay_ms", str(exc))
    prefix = _parse_prefix(data.get("srv6_prefix"), problems)

    def mk(sid: SegmentId) -> SegmentId:
        return sid.with_v6(prefix) if prefix is not None else sid

    # elements ------------------------------------------------------------
    raw_edcs = data.get("edcs")
    if not isinstance(raw_edcs, list):
        problems.add("edcs", "must be a list")
        raw_edcs = []
    if not raw_edcs:
        problems.add("edcs", "a MECD needs at least one EDC equipped with Edge Compute")

    edc_ids: set[str] = set()
    element_edc: dict[str, str] = {}
    pending: list[dict] = []  # decoded element fields, finalised after sids[]
    declared_has_ec: dict[str, tuple[bool, str]] = {}
    edc_order: list[str] = []
    for i, raw_edc in enumerate(raw_edcs):
        p = f"edcs[{i}]"
        if not isinstance(raw_edc, dict):
            problems.add(p, "must be an object")
            continue
        problems.unknown_keys(raw_edc, _EDC_KEYS, p, lax)
        edc_id = raw_edc.get("id")
        if not isinstance(edc_id, str) or not edc_id:
            problems.add(f"{p}.id", "must be a non-empty string")
            continue
        if edc_id in edc_ids:
            problems.add(f"{p}.id", f"duplicate EDC id {edc_id!r}")
            continue
        edc_ids.add(edc_id)
        edc_order.append(edc_id)
        if "has_ec" in raw_edc:
            declared_has_ec[edc_id] = (bool(raw_edc["has_ec"]), f"{p}.has_ec")
        for j, raw_el in enumerate(raw_edc.get("elements", [])):
            q = f"{p}.elements[{j}]"
            if not isinstance(raw_el, dict):
                problems.add(q, "must be an object")
                continue
            problems.unknown_keys(raw_el, _ELEMENT_KEYS, q, lax)
            eid = raw_el.get("id")
            if not isinstance(eid, str) or not eid:
                problems.add(f"{q}.id", "must be a non-empty string")
                continue
            if eid in element_edc:
                problems.add(f"{q}.id", f"duplicate element id {eid!r}")
                continue
            try:
                etype = ElementType(raw_el.get("type"))
            except ValueError:
                problems.add(f"{q}.type", f"unknown element type {raw_el.get('type')!r}")
                continue
            sid = _parse_sid(raw_el.get("sid"), f"{q}.sid", problems, SidKind.NODE)
            if sid is None:
                continue
            if etype in FORWARDING_TYPES and sid.kind is not SidKind.NODE:
                problems.add(f"{q}.sid", f"{etype.value} elements must carry a NodeSid")
            apps = []
            for k, raw_app in enumerate(raw_el.get("app_ids", [])):
                app = _parse_sid(raw_app, f"{q}.app_ids[{k}]", problems, SidKind.APP)
                if app is None:
                    continue
                if app.kind not in APP_KINDS:
                    problems.add(f"{q}.app_ids[{k}]", "app ids must be AppSid, AnycastSid or PrefixSid")
                apps.append((app, f"{q}.app_ids[{k}]"))
            if apps and etype is not ElementType.EC:
                problems.add(f"{q}.app_ids", "only EC elements host application SIDs")
            provider = raw_el.get("provider", "default")
            if not isinstance(provider, str):
                problems.add(f"{q}.provider", "must be a string")
                provider = "default"
            element_edc[eid] = edc_id
            pending.append(dict(id=eid, type=etype, sid=sid, sid_path=f"{q}.sid", edc=edc_id,
                                provider=provider, apps=apps))

    by_id = {el["id"]: el for el in pending}
    for i, raw in enumerate(data.get("sids", []) or []):
        p = f"sids[{i}]"
        if not isinstance(raw, dict):
            problems.add(p, "must be an object")
            continue
        problems.unknown_keys(raw, _SID_KEYS, p, lax)
        sid = _parse_sid(raw, p, problems, SidKind.APP)
        target = raw.get("element")
        if sid is None:
            continue
        if target not in by_id:
            problems.add(f"{p}.element", f"unknown element {target!r}")
            continue
        if by_id[target]["type"] is not ElementType.EC:
            problems.add(f"{p}.element", "only EC elements host application SIDs")
            continue
        if sid.kind not in APP_KINDS:
            problems.add(f"{p}.kind", "app ids must be AppSid, AnycastSid or PrefixSid")
        by_id[target]["apps"].append((sid, p))

    # SID uniqueness (anycast exempt)
    owners: dict[SegmentId, tuple[str, str]] = {}
    for el in pending:
        for sid, path in [(el["sid"], el["sid_path"]), *el["apps"]]:
            if sid.kind is SidKind.ANYCAST:
                continue
            prev = owners.get(sid)
            if prev and prev[0] != el["id"]:
                problems.add(path, f"SID {sid.value} ({sid.kind.value}) already bound to {prev[0]}")
            else:
                owners[sid] = (el["id"], path)

    edcs = {edc_id: EdcRecord(edc_id) for edc_id in edc_order}
    for el in pending:
        edcs[el["edc"]].elements.append(ElementRecord(
            element_id=el["id"],
            element_type=el["type"],
            sid=mk(el["sid"]),
            edc_id=el["edc"],
            provider_id=el["provider"],
            app_ids=frozenset(mk(a) for a, _ in el["apps"]),
        ))
    for edc_id, (flag, path) in declared_has_ec.items():
        if flag != edcs[edc_id].has_ec:
            problems.add(path, f"has_ec={flag} disagrees with the element list")
    if edcs and not any(e.has_ec for e in edcs.values()):
        problems.add("edcs", "a MECD needs at least one EDC equipped with Edge Compute")

    # links ------------------------------------------------------------------
    links: list[Link] = []
    link_paths: dict[str, str] = {}
    for i, raw in enumerate(data.get("links", []) or []):
        p = f"links[{i}]"
        if not isinstance(raw, dict):
            problems.add(p, "must be an object")
            continue
        problems.unknown_keys(raw, _LINK_KEYS, p, lax)
        lid = raw.get("id")
        if not isinstance(lid, str) or not lid:
            problems.add(f"{p}.id", "must be a non-empty string")
            continue
        if lid in link_paths:
            problems.add(f"{p}.id", f"duplicate link id {lid!r}")
            continue
        ok = True
        a, b = raw.get("from"), raw.get("to")
        for end, key in ((a, "from"), (b, "to")):
            if end not in element_edc:
                problems.add(f"{p}.{key}", f"unknown element {end!r}")
                ok = False
        if ok and a == b:
            problems.add(p, "link endpoints must differ")
            ok = False
        if ok and element_edc[a] == element_edc[b]:
            problems.add(p, "links join different EDCs; intra-EDC hops use intra_edc_delay_ms")
            ok = False
        try:
            delay_us = ms_to_us(raw.get("delay_ms"))
            if delay_us < 0:
                problems.add(f"{p}.delay_ms", f"link {lid}: delay_ms must be >= 0")
                ok = False
        except (ValueError, TypeError) as exc:
            problems.add(f"{p}.delay_ms", f"link {lid}: {exc}")
            ok = False
            delay_us = 0
        cap = raw.get("capacity_gbps")
        if isinstance(cap, bool) or not isinstance(cap, (int, float)) or cap <= 0:
            problems.add(f"{p}.capacity_gbps", f"link {lid}: capacity_gbps must be > 0")
            ok = False
        err = raw.get("error_rate", 0.0)
        if isinstance(err, bool) or not isinstance(err, (int, float)) or not 0 <= err <= 1:
            problems.add(f"{p}.error_rate", f"link {lid}: error_rate must be in [0, 1]")
            ok = False
        backup_of = raw.get("backup_of")
        admin_up = raw.get("admin_up", backup_of is None)
        if not ok:
            continue
        link_paths[lid] = p
        links.append(Link(
            link_id=lid, a=a, b=b, delay_us=delay_us, capacity_gbps=float(cap),
            protected=bool(raw.get("protected", False)), backup_of=backup_of,
            admin_up=bool(admin_up), error_rate=float(err),
        ))

    by_link = {l.link_id: l for l in links}
    backups_of: dict[str, list[Link]] = {}
    for link in links:
        if link.backup_of is None:
            continue
        p = link_paths[link.link_id]
        primary = by_link.get(link.backup_of)
        if primary is None:
            problems.add(f"{p}.backup_of", f"references unknown link {link.backup_of!r}")
            continue
        if primary.backup_of is not None:
            problems.add(f"{p}.backup_of", "a backup cannot protect another backup")
        if primary.endpoints != link.endpoints:
            problems.add(f"{p}.backup_of", "backup must join the same endpoints as its primary")
        if not primary.protected:
            problems.add(f"{link_paths[primary.link_id]}.protected",
                         f"link {primary.link_id} has backup {link.link_id} but protected=false")
        if link.admin_up:
            problems.add(f"{p}.admin_up", "backup links start in standby (admin_up=false)")
        backups_of.setdefault(primary.link_id, []).append(link)
    for link in links:
        if link.protected and link.backup_of is None and link.link_id not in backups_of:
            problems.add(f"{link_paths[link.link_id]}.backup_of",
                         f"NoBackup: protected link {link.link_id} has no provisioned backup")
        if len(backups_of.get(link.link_id, [])) > 1:
            problems.add(f"{link_paths[link.link_id]}", f"link {link.link_id} has several backups")
    seen_pairs: dict[frozenset, str] = {}
    for link in links:
        if link.backup_of is not None:
            continue
        prev = seen_pairs.get(link.endpoints)
        if prev:
            problems.add(link_paths[link.link_id], f"parallel link to {prev}; model diversity with backup_of")
        seen_pairs[link.endpoints] = link.link_id

    topo = Topology(edcs.values(), links, intra_us, prefix)
    if not problems.items and edcs:
        if not _connected(topo):
            problems.add("links", "element graph over admin_up links is not connected")
    if problems.items:
        raise ValidationError(problems.items)
    return topo


def _connected(topo: Topology) -> bool:
    adj = topo.adjacency(include_restoring=False)
    nodes = list(adj)
    if not nodes:
        return True
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        v = stack.pop()
        for n in adj[v]:
            if n not in seen:
                seen.add(n)
                stack.append(n)
    return len(seen) == len(nodes)


def load_topology(config_text: str, lax: bool = False) -> Topology:
    """Parse and validate a topology JSON document."""
    try:
        data = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    return parse_topology(data, lax=lax)


def topology_to_dict(topo: Topology) -> dict:
    """Serialise back to the config schema (round-trips through the loader)."""
    out: dict = {
        "format_version": FORMAT_VERSION,
        "intra_edc_delay_ms": float(fmt_ms(topo.intra_edc_delay_us)),
        "edcs": [],
        "links": [],
    }
    if topo.srv6_prefix is not None:
        out["srv6_prefix"] = topo.srv6_prefix
    for edc in topo.edcs:
        out["edcs"].append({
            "id": edc.edc_id,
            "elements": [
                {
                    "id": e.element_id,
                    "type": e.element_type.value,
                    "sid": {"value": e.sid.value, "kind": e.sid.kind.value},
                    "provider": e.provider_id,
                    "app_ids": [{"value": a.value, "kind": a.kind.value} for a in sorted(e.app_ids)],
                }
                for e in edc.elements
            ],
        })
    for l in topo.links:
        out["links"].append({
            "id": l.link_id, "from": l.a, "to": l.b, "delay_ms": float(fmt_ms(l.delay_us)),
            "capacity_gbps": l.capacity_gbps, "protected": l.protected, "backup_of": l.backup_of,
            "admin_up": l.admin_up, "error_rate": l.error_rate,
        })
    return out


def iter_inter_edc_links(topo: Topology, path: list[str]) -> Iterator[Link]:
    """Links crossed by consecutive elements of ``path`` (intra hops skipped)."""
    adj = topo.adjacency(include_restoring=False)
    for u, v in zip(path, path[1:]):
        edge = adj[u].get(v)
        if edge is not None and edge.link_id is not None:
            yield topo.link(edge.link_id)
