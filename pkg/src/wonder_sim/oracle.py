"""Brute-force reference for path selection and anycast resolution.

Enumerates every simple leg by depth-first search (no networkx, no
Dijkstra) and applies the class filters from first principles. The OERC is
expected to agree with this module on every record and every request.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

from .errors import NoFeasiblePath
from .mecd_model import ElementType, SegmentId, SidKind, SidRegistry, Topology, build_registry
from .oer_controller import OerRequest, PathDatabase, build_path_database, handle_oer_request
from .sr_dataplane import compress_path
from .traffic_classes import TrafficClass

_TRANSIT = {ElementType.FABRIC_ROUTER, ElementType.OPTICAL_NODE}


@dataclass(frozen=True)
class OracleRecord:
    class_id: int
    cu: str
    upf: str
    ec: str
    rtt_us: int
    walk: tuple[str, ...]
    ul_cu: tuple[int, ...]
    ul_upf: tuple[int, ...]


def _edges(topology: Topology) -> dict[str, list[tuple[str, int, str | None]]]:
    """Adjacency rebuilt from the raw element and link lists."""
    out: dict[str, list[tuple[str, int, str | None]]] = {}
    for edc in topology.edcs:
        for a in edc.elements:
            out.setdefault(a.element_id, [])
            for b in edc.elements:
                if a.element_id != b.element_id:
                    out[a.element_id].append((b.element_id, topology.intra_edc_delay_us, None))
    for link in topology.links:
        if link.admin_up and not link.restoring:
            out[link.a].append((link.b, link.delay_us, link.link_id))
            out[link.b].append((link.a, link.delay_us, link.link_id))
    return out


def _usable(topology: Topology, link_id: str | None, tc: TrafficClass | None) -> bool:
    if link_id is None or tc is None:
        return True
    links = {l.link_id: l for l in topology.links}
    link = links[link_id]
    if link.capacity_gbps < tc.peak_rate_gbps:
        return False
    if tc.resiliency.value == "Protected":
        backups = [l for l in topology.links if l.backup_of == link_id]
        if not backups or backups[0].capacity_gbps < tc.peak_rate_gbps:
            return False
    return True


def all_legs(
    topology: Topology, src: str, dst: str, tc: TrafficClass | None = None
) -> list[tuple[int, tuple[str, ...], tuple[str, ...]]]:
    """Every simple path ``src -> dst`` through transit elements only.

    Returns ``(delay_us, walk, link_ids)`` triples. Between two elements the
    cheapest parallel link is used, ties to the smaller link id.
    """
    edges = _edges(topology)
    kind = {e.element_id: e.element_type for edc in topology.edcs for e in edc.elements}
    best_edge: dict[tuple[str, str], tuple[int, str | None]] = {}
    for u, lst in edges.items():
        for v, d, lid in lst:
            cand = (d, lid or "")
            cur = best_edge.get((u, v))
            if cur is None or cand < (cur[0], cur[1] or ""):
                best_edge[(u, v)] = (d, lid)
    out = []

    def dfs(node, walk, links, delay, seen):
        if node == dst:
            out.append((delay, tuple(walk), tuple(links)))
            return
        if node != src and kind[node] not in _TRANSIT:
            return
        for (u, v), (d, lid) in sorted(best_edge.items()):
            if u != node or v in seen:
                continue
            if not _usable(topology, lid, tc):
                continue
            seen.add(v)
            walk.append(v)
            if lid:
                links.append(lid)
            dfs(v, walk, links, delay + d, seen)
            if lid:
                links.pop()
            walk.pop()
            seen.discard(v)

    if src == dst:
        return [(0, (src,), ())]
    dfs(src, [src], [], 0, {src})
    out.sort()
    return out


def oracle_delay(topology: Topology, src: str, dst: str) -> int | None:
    legs = all_legs(topology, src, dst)
    return legs[0][0] if legs else None


def oracle_resolve(registry: SidRegistry, sid: SegmentId, from_element: str) -> str | None:
    owners = sorted(
        r.element_id for r in registry.records() if r.sid == sid or sid in r.app_ids
    )
    best = None
    for inst in owners:
        d = oracle_delay(registry.topology, from_element, inst)
        if d is not None and (best is None or (d, inst) < best):
            best = (d, inst)
    return None if best is None else best[1]


def _restoration_ok(topology: Topology, tc: TrafficClass, rtt: int, links: tuple[str, ...]) -> bool:
    by_id = {l.link_id: l for l in topology.links}
    for lid in set(links):
        for b in topology.links:
            if b.backup_of == lid:
                extra = 2 * links.count(lid) * (b.delay_us - by_id[lid].delay_us)
                if rtt + extra > tc.latency_bound_us:
                    return False
    return True


def oracle_record(
    topology: Topology,
    registry: SidRegistry,
    tc: TrafficClass,
    cu: str,
    upf: str,
    ec: str,
    air_rtt_us: int,
) -> OracleRecord | None:
    by_id = {l.link_id: l for l in topology.links}
    best = None
    for d1, w1, k1 in all_legs(topology, cu, upf, tc):
        for d2, w2, k2 in all_legs(topology, upf, ec, tc):
            rtt = air_rtt_us + 2 * (d1 + d2)
            if rtt > tc.latency_bound_us:
                continue
            links = k1 + k2
            survive = 1.0
            for lid in links:
                survive *= 1.0 - by_id[lid].error_rate
            if 1.0 - survive > tc.max_error_rate:
                continue
            if tc.resiliency.value == "Protected" and not _restoration_ok(topology, tc, rtt, links):
                continue
            s1 = compress_path(topology, registry, list(w1))
            s2 = compress_path(topology, registry, list(w2))
            if s1 is None or s2 is None:
                continue
            if compress_path(topology, registry, list(reversed(w1))) is None:
                continue
            if compress_path(topology, registry, list(reversed(w2))) is None:
                continue
            walk = w1 + w2[1:]
            v1 = tuple(s.value for s in s1)
            v2 = tuple(s.value for s in s2)
            key = (rtt, len(v1) + len(v2), (v1, v2), walk)
            if best is None or key < best[0]:
                best = (key, OracleRecord(tc.class_id, cu, upf, ec, rtt, walk, v1, v2))
    return None if best is None else best[1]


def oracle_database(
    topology: Topology,
    registry: SidRegistry,
    catalog: Mapping[int, TrafficClass],
    air_rtt_us: int,
) -> dict[tuple[int, str, str, str], OracleRecord]:
    recs = registry.records()
    cus = [r for r in recs if r.element_type is ElementType.CU]
    upfs = [r for r in recs if r.element_type is ElementType.UPF]
    ecs = [r for r in recs if r.element_type is ElementType.EC and r.sid.kind is not SidKind.ANYCAST]
    out = {}
    for cid in sorted(catalog):
        for cu in cus:
            for upf in upfs:
                if upf.provider_id != cu.provider_id:
                    continue
                for ec in ecs:
                    rec = oracle_record(
                        topology, registry, catalog[cid], cu.element_id, upf.element_id, ec.element_id, air_rtt_us
                    )
                    if rec is not None:
                        out[(cid, cu.element_id, upf.element_id, ec.element_id)] = rec
    return out


def oracle_request(
    oracle_db: Mapping[tuple[int, str, str, str], OracleRecord],
    registry: SidRegistry,
    class_id: int,
    cu: str,
    upf_hint: str | None = None,
    ecs: set[str] | None = None,
) -> OracleRecord:
    """Argmin over every stored record for (class, cu) with the documented tie-breaks."""
    cu_rec = registry.record(cu)
    if ecs is None:
        ecs = {
            r.element_id for r in registry.records()
            if r.element_type is ElementType.EC and r.provider_id == cu_rec.provider_id
        }
    cands = [r for (c, s, _, e), r in oracle_db.items() if c == class_id and s == cu and e in ecs]
    if not cands:
        raise NoFeasiblePath(f"oracle: nothing feasible for class {class_id} from {cu}")

    def key(r: OracleRecord):
        return (
            r.rtt_us,
            upf_hint is not None and r.upf != upf_hint,
            registry.record(r.upf).edc_id != cu_rec.edc_id,
            len(r.ul_cu) + len(r.ul_upf),
            (r.ul_cu, r.ul_upf),
            r.upf,
            r.ec,
        )

    return min(cands, key=key)


def diff_database(db: PathDatabase, oracle_db: Mapping) -> list[str]:
    """Human-readable differences between the OERC database and the oracle."""
    diffs = []
    for key in sorted(set(db.records) | set(oracle_db)):
        got, want = db.records.get(key), oracle_db.get(key)
        label = "class {} {}->{}->{}".format(*key)
        if got is None:
            diffs.append(f"{label}: OERC has no record, oracle rtt={want.rtt_us}us")
        elif want is None:
            diffs.append(f"{label}: oracle has no record, OERC rtt={got.rtt_us}us")
        else:
            mine = (got.rtt_us, got.walk, got.ul_values)
            ref = (want.rtt_us, want.walk, (want.ul_cu, want.ul_upf))
            if mine != ref:
                diffs.append(f"{label}: OERC {mine} != oracle {ref}")
    return diffs


def diff_requests(db: PathDatabase, oracle_db: Mapping, registry: SidRegistry) -> list[str]:
    """Compare the OERC's pick for every (class, CU) with the oracle's argmin."""
    diffs = []
    cus = sorted(r.element_id for r in registry.records() if r.element_type is ElementType.CU)
    for cid in sorted(db.catalog):
        for cu in cus:
            try:
                got = handle_oer_request(db, OerRequest(cid, cu))
                mine = (got.path.rtt_us, got.selected_upf, got.selected_ec)
            except NoFeasiblePath:
                mine = None
            try:
                want = oracle_request(oracle_db, registry, cid, cu)
                ref = (want.rtt_us, want.upf, want.ec)
            except NoFeasiblePath:
                ref = None
            if mine != ref:
                diffs.append(f"class {cid} request from {cu}: OERC {mine} != oracle {ref}")
    return diffs


def check_topology(topology: Topology, catalog: Mapping[int, TrafficClass], air_rtt_us: int) -> tuple[int, list[str]]:
    """Full differential check; returns (records compared, diffs)."""
    registry = build_registry(topology)
    db = build_path_database(topology, registry, catalog, air_rtt_us)
    odb = oracle_database(topology, registry, catalog, air_rtt_us)
    diffs = diff_database(db, odb) + diff_requests(db, odb, registry)
    return len(set(db.records) | set(odb)), diffs
