"""Optimized Edge Routing Controller (OERC).

The controller precomputes, for every (class, CU, UPF, EC) combination, the
minimum round-trip path that satisfies the class constraints and stores it
as a :class:`PathRecord`. Requests are then answered from that database.

A path is a walk ``CU -> ... -> UPF -> ... -> EC``. Each leg only transits
fabric routers and optical nodes. Candidate legs come from Yen's k-shortest
simple paths (networkx) enumerated up to the class delay budget; every pair
of legs within budget is post-filtered for error rate, restoration headroom
and segment encodability, and the cheapest survivor wins.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace

import networkx as nx

from .errors import (
    AppNotPresent,
    NoDisjointPair,
    NoFeasiblePath,
    NoLiveInstance,
    Unreachable,
    UnknownSid,
)
from .mecd_model import (
    ElementType,
    SegmentId,
    SidKind,
    SidRegistry,
    Topology,
    TRANSIT_TYPES,
    resolve_sid,
)
from .sr_dataplane import compress_path
from .timebase import fmt_ms
from .traffic_classes import TrafficClass, catalog_lookup

DEFAULT_AIR_RTT_US = 2_000


@dataclass(frozen=True)
class PathRecord:
    class_id: int
    src_element: str
    upf_element: str
    ec_element: str
    ul_stack_cu: tuple[SegmentId, ...]
    ul_stack_upf: tuple[SegmentId, ...]
    dl_stack_ec: tuple[SegmentId, ...]
    dl_stack_upf: tuple[SegmentId, ...]
    rtt_us: int
    protected: bool
    walk: tuple[str, ...] = ()
    error_rate: float = 0.0
    backups: tuple[tuple[str, str], ...] = ()  # (primary link, backup link)

    @property
    def rtt_ms(self) -> float:
        return self.rtt_us / 1000

    @property
    def segment_count(self) -> int:
        return len(self.ul_stack_cu) + len(self.ul_stack_upf)

    @property
    def ul_values(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return tuple(s.value for s in self.ul_stack_cu), tuple(s.value for s in self.ul_stack_upf)

    def to_json(self) -> dict:
        vals = lambda st: [s.value for s in st]  # noqa: E731
        return {
            "class_id": self.class_id,
            "src": self.src_element,
            "upf": self.upf_element,
            "ec": self.ec_element,
            "ul_stack_cu": vals(self.ul_stack_cu),
            "ul_stack_upf": vals(self.ul_stack_upf),
            "dl_stack_ec": vals(self.dl_stack_ec),
            "dl_stack_upf": vals(self.dl_stack_upf),
            "rtt_ms": fmt_ms(self.rtt_us),
            "protected": self.protected,
            "walk": list(self.walk),
        }


@dataclass(frozen=True)
class OerRequest:
    traffic_class_id: int
    cu_id: str
    upf_id: str | None = None
    qfi: int = 0
    ue_id: str = ""
    required_app_sid: SegmentId | None = None
    pinned_ec: str | None = None


@dataclass(frozen=True)
class OerResponse:
    path: PathRecord
    selected_upf: str
    selected_ec: str


@dataclass
class PathDatabase:
    topology: Topology
    registry: SidRegistry
    catalog: Mapping[int, TrafficClass]
    air_rtt_us: int = DEFAULT_AIR_RTT_US
    records: dict[tuple[int, str, str, str], PathRecord] = field(default_factory=dict)
    infeasible: dict[tuple[int, str, str, str], str] = field(default_factory=dict)
    version: int = -1

    def for_cu(self, class_id: int, cu: str) -> list[PathRecord]:
        return [r for (c, s, _, _), r in sorted(self.records.items()) if c == class_id and s == cu]

    def dump(self) -> list[dict]:
        recs = sorted(
            self.records.values(),
            key=lambda r: (r.class_id, r.src_element, r.rtt_us, r.upf_element, r.ec_element),
        )
        return [r.to_json() for r in recs]

    def dump_json(self) -> str:
        return json.dumps(self.dump(), indent=2, sort_keys=True) + "\n"

    def infeasible_summary(self) -> list[dict]:
        return [
            {"class_id": c, "src": s, "upf": u, "ec": e, "reason": why}
            for (c, s, u, e), why in sorted(self.infeasible.items())
        ]


# -- leg enumeration -------------------------------------------------------------


def _link_ok(topology: Topology, link_id: str, tc: TrafficClass) -> bool:
    link = topology.link(link_id)
    if link.capacity_gbps < tc.peak_rate_gbps:
        return False
    if tc.protected:
        backup = topology.backup_for(link_id)
        if backup is None or backup.capacity_gbps < tc.peak_rate_gbps:
            return False
    return True


class _LegCache:
    """Simple-path legs per (class filter, src, dst), cheapest first."""

    def __init__(self, topology: Topology):
        self.topology = topology
        self._graphs: dict = {}
        self._legs: dict = {}

    def graph(self, tc: TrafficClass) -> nx.Graph:
        key = (tc.peak_rate_gbps, tc.protected)
        g = self._graphs.get(key)
        if g is None:
            g = nx.Graph()
            adj = self.topology.adjacency(include_restoring=False)
            g.add_nodes_from(adj)
            for u, edges in adj.items():
                for v, edge in edges.items():
                    if u < v and (edge.link_id is None or _link_ok(self.topology, edge.link_id, tc)):
                        g.add_edge(u, v, delay=edge.delay_us, link=edge.link_id)
            self._graphs[key] = g
        return g

    def legs(self, tc: TrafficClass, src: str, dst: str, budget_us: int) -> list[tuple[int, tuple[str, ...]]]:
        key = (tc.peak_rate_gbps, tc.protected, src, dst)
        cached = self._legs.get(key)
        if cached is not None and cached[0] >= budget_us:
            return [leg for leg in cached[1] if leg[0] <= budget_us]
        g = self.graph(tc)
        keep = [n for n in g if n in (src, dst) or self.topology.element(n).element_type in TRANSIT_TYPES]
        sub = g.subgraph(keep)
        out = []
        if src in sub and dst in sub:
            try:
                for path in nx.shortest_simple_paths(sub, src, dst, weight="delay"):
                    d = nx.path_weight(sub, path, "delay")
                    if d > budget_us:
                        break
                    out.append((d, tuple(path)))
            except nx.NetworkXNoPath:
                pass
        self._legs[key] = (budget_us, out)
        return out


def walk_links(topology: Topology, walk: Iterable[str]) -> list[str]:
    """Link ids crossed by a walk (intra-EDC hops omitted)."""
    adj = topology.adjacency(include_restoring=False)
    walk = list(walk)
    out = []
    for u, v in zip(walk, walk[1:]):
        lid = adj[u][v].link_id
        if lid is not None:
            out.append(lid)
    return out


def walk_delay_us(topology: Topology, walk: Iterable[str]) -> int:
    adj = topology.adjacency(include_restoring=False)
    walk = list(walk)
    return sum(adj[u][v].delay_us for u, v in zip(walk, walk[1:]))


def path_error_rate(topology: Topology, links: Iterable[str]) -> float:
    keep = 1.0
    for lid in links:
        keep *= 1.0 - topology.link(lid).error_rate
    return 1.0 - keep


def restoration_penalty_us(topology: Topology, links: list[str]) -> int:
    """Worst RTT growth if one protected link on the walk switches to its backup."""
    worst = 0
    for lid in set(links):
        backup = topology.backup_for(lid)
        if backup is None:
            continue
        grow = 2 * links.count(lid) * (backup.delay_us - topology.link(lid).delay_us)
        worst = max(worst, grow)
    return worst


def make_record(
    topology: Topology,
    registry: SidRegistry,
    tc: TrafficClass,
    leg1: tuple[str, ...],
    leg2: tuple[str, ...],
    air_rtt_us: int,
) -> tuple[PathRecord | None, str]:
    """Build a record for one candidate walk, or explain why it is rejected."""
    walk = tuple(leg1) + tuple(leg2[1:])
    one_way = walk_delay_us(topology, walk)
    rtt = air_rtt_us + 2 * one_way
    if rtt > tc.latency_bound_us:
        return None, "latency bound"
    links = walk_links(topology, walk)
    err = path_error_rate(topology, links)
    if err > tc.max_error_rate:
        return None, "error rate"
    if tc.protected:
        if rtt + restoration_penalty_us(topology, links) > tc.latency_bound_us:
            return None, "restoration headroom"
    stacks = (
        compress_path(topology, registry, list(leg1)),
        compress_path(topology, registry, list(leg2)),
        compress_path(topology, registry, list(reversed(leg2))),
        compress_path(topology, registry, list(reversed(leg1))),
    )
    if any(s is None for s in stacks):
        return None, "not encodable"
    backups = tuple(
        (lid, topology.backup_for(lid).link_id) for lid in sorted(set(links)) if topology.backup_for(lid)
    )
    rec = PathRecord(
        class_id=tc.class_id,
        src_element=leg1[0],
        upf_element=leg1[-1],
        ec_element=leg2[-1],
        ul_stack_cu=stacks[0],
        ul_stack_upf=stacks[1],
        dl_stack_ec=stacks[2],
        dl_stack_upf=stacks[3],
        rtt_us=rtt,
        protected=tc.protected,
        walk=walk,
        error_rate=err,
        backups=backups,
    )
    return rec, ""


def record_key(rec: PathRecord) -> tuple:
    """Order among candidates for one (class, CU, UPF, EC) combination."""
    return (rec.rtt_us, rec.segment_count, rec.ul_values, rec.walk)


def best_record(
    topology: Topology,
    registry: SidRegistry,
    tc: TrafficClass,
    cu: str,
    upf: str,
    ec: str,
    air_rtt_us: int = DEFAULT_AIR_RTT_US,
    legs: _LegCache | None = None,
) -> tuple[PathRecord | None, str]:
    legs = legs or _LegCache(topology)
    budget = (tc.latency_bound_us - air_rtt_us) // 2
    if budget < 0:
        return None, "latency bound"
    l1 = legs.legs(tc, cu, upf, budget)
    l2 = legs.legs(tc, upf, ec, budget)
    if not l1 or not l2:
        # distinguish plain unreachability from budget exhaustion
        return None, "latency bound" if _reachable(legs, tc, cu, upf, ec) else "unreachable"
    pairs = sorted(
        ((d1 + d2, i, j) for i, (d1, _) in enumerate(l1) for j, (d2, _) in enumerate(l2) if d1 + d2 <= budget)
    )
    found: list[PathRecord] = []
    reason = "latency bound"
    found_at = None
    for total, i, j in pairs:
        if found_at is not None and total > found_at:
            break
        rec, why = make_record(topology, registry, tc, l1[i][1], l2[j][1], air_rtt_us)
        if rec is None:
            reason = why
            continue
        found.append(rec)
        found_at = total
    if not found:
        return None, reason
    return min(found, key=record_key), ""


def _reachable(legs: _LegCache, tc: TrafficClass, cu: str, upf: str, ec: str) -> bool:
    big = 10**12
    return bool(legs.legs(tc, cu, upf, big)) and bool(legs.legs(tc, upf, ec, big))


def _endpoints(registry: SidRegistry):
    cus = [r for r in registry.by_type(ElementType.CU)]
    upfs = [r for r in registry.by_type(ElementType.UPF)]
    ecs = [r for r in registry.by_type(ElementType.EC) if r.sid.kind is not SidKind.ANYCAST]
    return cus, upfs, ecs


def build_path_database(
    topology: Topology,
    registry: SidRegistry,
    catalog: Mapping[int, TrafficClass],
    air_rtt_us: int = DEFAULT_AIR_RTT_US,
) -> PathDatabase:
    db = PathDatabase(topology, registry, catalog, air_rtt_us, version=topology.version)
    legs = _LegCache(topology)
    cus, upfs, ecs = _endpoints(registry)
    for class_id in catalog:
        tc = catalog[class_id]
        for cu in cus:
            for upf in upfs:
                if upf.provider_id != cu.provider_id:
                    continue
                for ec in ecs:
                    key = (class_id, cu.element_id, upf.element_id, ec.element_id)
                    rec, why = best_record(
                        topology, registry, tc, cu.element_id, upf.element_id, ec.element_id, air_rtt_us, legs
                    )
                    if rec is None:
                        db.infeasible[key] = why
                    else:
                        db.records[key] = rec
    return db


# -- request handling ----------------------------------------------------------------


@dataclass(frozen=True)
class BearerDemand:
    """What one bearer needs from a joint session path selection."""

    bearer_id: int
    class_id: int
    required_app_sid: SegmentId | None = None
    pinned_ec: str | None = None


def allowed_ecs(db: PathDatabase, cu: str, demand: BearerDemand) -> list[str]:
    """ECs a bearer may terminate on, before any latency filtering."""
    registry = db.registry
    tc = catalog_lookup(db.catalog, demand.class_id)
    app = demand.required_app_sid or tc.required_app_sid
    if demand.pinned_ec is not None:
        return [demand.pinned_ec]
    if app is not None:
        try:
            hosts = registry.hosts(app)
        except UnknownSid:
            hosts = []
        if not hosts:
            raise AppNotPresent(f"application SID {app.value} is hosted nowhere")
        if app.kind is SidKind.ANYCAST:
            try:
                return [resolve_sid(registry, app, cu)]
            except NoLiveInstance as exc:
                raise AppNotPresent(str(exc)) from exc
        return hosts
    provider = registry.record(cu).provider_id
    _, _, ecs = _endpoints(registry)
    return [e.element_id for e in ecs if e.provider_id == provider]


def _choice_key(rec: PathRecord, cu_edc: str, hint: str | None, db: PathDatabase) -> tuple:
    upf_edc = db.registry.record(rec.upf_element).edc_id
    return (
        rec.rtt_us,
        hint is not None and rec.upf_element != hint,
        upf_edc != cu_edc,
        rec.segment_count,
        rec.ul_values,
        rec.upf_element,
        rec.ec_element,
    )


def select_session_paths(
    db: PathDatabase,
    cu: str,
    demands: list[BearerDemand],
    upf_hint: str | None = None,
) -> dict[int, PathRecord]:
    """Choose one UPF for the whole session and the best record per bearer.

    All bearers of a session share the serving UPF. Among UPFs feasible for
    every bearer the one with the smallest summed RTT wins, then the core
    hint, then a UPF in the CU's own EDC, then fewer segments.
    """
    registry = db.registry
    per_bearer: dict[int, dict[str, PathRecord]] = {}
    for d in demands:
        ecs = set(allowed_ecs(db, cu, d))
        best: dict[str, PathRecord] = {}
        for rec in db.for_cu(d.class_id, cu):
            if rec.ec_element not in ecs:
                continue
            cur = best.get(rec.upf_element)
            k = (rec.rtt_us, rec.segment_count, rec.ul_values, rec.ec_element)
            if cur is None or k < (cur.rtt_us, cur.segment_count, cur.ul_values, cur.ec_element):
                best[rec.upf_element] = rec
        per_bearer[d.bearer_id] = best
    return _pick_upf(registry, cu, per_bearer, upf_hint)


def _pick_upf(
    registry: SidRegistry,
    cu: str,
    per_bearer: dict[int, dict[str, PathRecord]],
    upf_hint: str | None,
) -> dict[int, PathRecord]:
    cu_rec = registry.record(cu)
    missing = tuple(b for b, m in per_bearer.items() if not m)
    if missing:
        raise NoFeasiblePath(f"no feasible path from {cu} for bearer(s) {list(missing)}", missing)
    common = set.intersection(*(set(m) for m in per_bearer.values())) if per_bearer else set()
    if not common:
        raise NoFeasiblePath(f"no single UPF serves every bearer from {cu}", tuple(sorted(per_bearer)))

    def upf_key(upf: str):
        recs = [per_bearer[b][upf] for b in sorted(per_bearer)]
        return (
            sum(r.rtt_us for r in recs),
            upf_hint is not None and upf != upf_hint,
            registry.record(upf).edc_id != cu_rec.edc_id,
            sum(r.segment_count for r in recs),
            tuple(r.ul_values for r in recs),
            upf,
        )

    upf = min(common, key=upf_key)
    return {b: per_bearer[b][upf] for b in sorted(per_bearer)}


def relaxed_session_paths(db: PathDatabase, cu: str, demands: list[BearerDemand]) -> dict[int, PathRecord]:
    """Best paths with latency, error and protection limits lifted.

    Used only when a bearer cannot be served within its class and no
    workload relocation is possible; the caller flags the result.
    """
    registry = db.registry
    cu_rec = registry.record(cu)
    legs = _LegCache(db.topology)
    upfs = [r.element_id for r in registry.by_type(ElementType.UPF) if r.provider_id == cu_rec.provider_id]
    per_bearer: dict[int, dict[str, PathRecord]] = {}
    for d in demands:
        tc = catalog_lookup(db.catalog, d.class_id)
        loose = TrafficClass(tc.class_id, 10**12, tc.peak_rate_gbps)
        best: dict[str, PathRecord] = {}
        for ec in allowed_ecs(db, cu, d):
            for upf in upfs:
                rec, _ = best_record(db.topology, registry, loose, cu, upf, ec, db.air_rtt_us, legs)
                if rec is None:
                    continue
                rec = replace(rec, protected=False)
                cur = best.get(upf)
                if cur is None or record_key(rec) < record_key(cur):
                    best[upf] = rec
        per_bearer[d.bearer_id] = best
    return _pick_upf(registry, cu, per_bearer, None)


def handle_oer_request(db: PathDatabase, request: OerRequest) -> OerResponse:
    catalog_lookup(db.catalog, request.traffic_class_id)
    demand = BearerDemand(0, request.traffic_class_id, request.required_app_sid, request.pinned_ec)
    rec = select_session_paths(db, request.cu_id, [demand], request.upf_id)[0]
    return OerResponse(rec, rec.upf_element, rec.ec_element)


def handle_path_update(db: PathDatabase, ue_session, new_cu: str) -> dict[int, OerResponse]:
    """Re-stack every bearer of ``ue_session`` from ``new_cu`` to its current EC."""
    demands = [
        BearerDemand(b.bearer_id, b.class_id, None, b.ec_element) for b in ue_session.bearers
    ]
    chosen = select_session_paths(db, new_cu, demands)
    return {b: OerResponse(rec, rec.upf_element, rec.ec_element) for b, rec in chosen.items()}


# -- standalone engine -----------------------------------------------------------------


def compute_constrained_path(
    topology: Topology,
    registry: SidRegistry,
    src: str,
    dst: str,
    tc: TrafficClass,
) -> tuple[tuple[SegmentId, ...], int, tuple[tuple[str, str], ...]]:
    """Minimum-delay encodable path ``src -> dst`` for one class.

    Returns ``(segments, rtt_us, backups)`` where ``rtt_us`` is twice the
    one-way delay without the air constant and ``backups`` pairs each
    protected link on the path with its standby link.
    """
    if src == dst:
        return (), 0, ()
    legs = _LegCache(topology)
    plain = TrafficClass(tc.class_id, tc.latency_bound_us, tc.peak_rate_gbps)
    if not legs.legs(plain, src, dst, 10**12):
        raise Unreachable(f"no path {src} -> {dst}")
    candidates = legs.legs(tc, src, dst, 10**12)
    if not candidates:
        raise NoDisjointPair(f"no path {src} -> {dst} with a backup on every fabric link")
    best = None
    for d, walk in candidates:
        if best is not None and d > best[0]:
            break
        segs = compress_path(topology, registry, list(walk))
        if segs is None:
            continue
        key = (d, len(segs), tuple(s.value for s in segs), walk)
        if best is None or key < best:
            best = key
    if best is None:
        raise Unreachable(f"no encodable path {src} -> {dst}")
    d, _, _, walk = best
    segs = compress_path(topology, registry, list(walk))
    links = walk_links(topology, walk)
    backups = tuple((lid, topology.backup_for(lid).link_id) for lid in links if topology.backup_for(lid))
    return segs, 2 * d, backups


class Oerc:
    """Stateful controller wrapper: owns the database and optional reservations."""

    def __init__(self, topology: Topology, registry: SidRegistry, catalog, air_rtt_us: int = DEFAULT_AIR_RTT_US):
        self.topology = topology
        self.registry = registry
        self.catalog = catalog
        self.air_rtt_us = air_rtt_us
        self.db = build_path_database(topology, registry, catalog, air_rtt_us)
        self.rebuilds = 0

    def refresh(self) -> bool:
        """Rebuild if the topology changed since the last build."""
        if self.db.version == self.topology.version:
            return False
        self.db = build_path_database(self.topology, self.registry, self.catalog, self.air_rtt_us)
        self.rebuilds += 1
        return True

    def request(self, request: OerRequest) -> OerResponse:
        return handle_oer_request(self.db, request)

    def session_paths(self, cu: str, demands: list[BearerDemand], upf_hint: str | None = None):
        return select_session_paths(self.db, cu, demands, upf_hint)

    def path_update(self, session, new_cu: str):
        return handle_path_update(self.db, session, new_cu)


__all__ = [
    "BearerDemand",
    "DEFAULT_AIR_RTT_US",
    "Oerc",
    "OerRequest",
    "OerResponse",
    "PathDatabase",
    "PathRecord",
    "best_record",
    "build_path_database",
    "compute_constrained_path",
    "handle_oer_request",
    "handle_path_update",
    "relaxed_session_paths",
    "select_session_paths",
]
