import copy
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_doc
from wonder_sim.errors import (
    DuplicateElement, DuplicateSid, NoLiveInstance, ParseError, UnknownEdc, UnknownElement, UnknownSid,
    ValidationError,
)
from wonder_sim.mecd_model import (
    ElementRecord, ElementType, SegmentId, SidKind, build_registry, default_sid, iter_inter_edc_links,
    load_topology, parse_topology, register_element, resolve_sid, sid_from_srv6, srv6_form, topology_to_dict,
)
from wonder_sim.oracle import oracle_delay, oracle_resolve
from wonder_sim.randomgen import random_topology, random_topology_dict


def problems_of(doc, **kw):
    with pytest.raises(ValidationError) as exc:
        parse_topology(doc, **kw)
    return exc.value.problems


def messages(problems):
    return " | ".join(f"{p}: {m}" for p, m in problems)


# -- loading -------------------------------------------------------------------


def test_fixture_shape(mecd5):
    assert [e.edc_id for e in mecd5.edcs] == [f"edc-{i}" for i in range(1, 6)]
    assert len(mecd5.elements) == 18
    assert mecd5.edc("edc-3").has_ec is False
    assert mecd5.element("ec-5").provider_id == "ap-1"
    assert mecd5.intra_edc_delay_us == 50
    assert {l.link_id for l in mecd5.links if l.backup_of} == {"l-1-5b", "l-2-5b"}
    assert mecd5.backup_for("l-1-5").delay_us == 1200
    assert mecd5.backup_for("l-1-2") is None


def test_fixture_sids(reg5):
    want = {"cu-1": 1210, "upf-1": 1211, "ec-1": 1212, "cu-3": 1230, "upf-4": 1240, "ec-4": 1241, "ec-5": 1250,
            "fr-2": 100, "fr-3": 103, "fr-5": 102}
    for eid, value in want.items():
        assert reg5.node_sid(eid).value == value
    assert reg5.hosts(SegmentId(9000, SidKind.ANYCAST)) == ["ec-4", "ec-5"]
    assert reg5.hosts(SegmentId(9100, SidKind.APP)) == ["ec-5"]


def test_default_sid_numbering():
    assert default_sid(1, 0) == 1210
    assert default_sid(4, 1) == 1241
    with pytest.raises(ValueError):
        default_sid(10, 0)


def test_invalid_json():
    with pytest.raises(ParseError):
        load_topology("{nope")


def test_roundtrip(mecd5):
    again = parse_topology(json.loads(json.dumps(topology_to_dict(mecd5))))
    assert topology_to_dict(again) == topology_to_dict(mecd5)
    assert again.route("cu-1", "ec-5") == mecd5.route("cu-1", "ec-5")


# -- validation: every problem is reported --------------------------------------


def test_collects_all_problems():
    doc = small_doc()
    doc["edcs"][0]["elements"].append({"id": "x", "type": "Toaster", "sid": 1})
    doc["edcs"][0]["elements"].append({"id": "cu-9", "type": "CU", "sid": 1211})
    doc["links"].append({"id": "bad", "from": "fr-1", "to": "ghost", "delay_ms": -1, "capacity_gbps": 0})
    probs = problems_of(doc)
    text = messages(probs)
    assert "unknown element type 'Toaster'" in text
    assert "already bound to upf-1" in text
    assert "unknown element 'ghost'" in text
    assert "capacity_gbps must be > 0" in text
    assert len(probs) >= 4


@pytest.mark.parametrize("mutate, needle", [
    (lambda d: d["links"][0].update(delay_ms=-0.5), "delay_ms must be >= 0"),
    (lambda d: d["links"][0].update(to="fr-1"), "endpoints must differ"),
    (lambda d: d["links"][0].update(to="cu-1"), "intra-EDC"),
    (lambda d: d["links"][0].update(error_rate=2), "error_rate"),
    (lambda d: d["links"][0].update(protected=True), "NoBackup"),
    (lambda d: d["links"].clear(), "not connected"),
    (lambda d: d["edcs"][1]["elements"].pop(0), "Edge Compute"),
    (lambda d: d["edcs"][0]["elements"][0].update(app_ids=[9100]), "only EC elements"),
    (lambda d: d["edcs"][0]["elements"][0].update(sid={"value": 1210, "kind": "AppSid"}), "NodeSid"),
    (lambda d: d["edcs"][0].update(has_ec=True), "disagrees"),
    (lambda d: d.update(format_version=2), "must be 1"),
    (lambda d: d.update(colour="red"), "unknown key"),
    (lambda d: d["edcs"][1]["elements"][0].update(id="cu-1"), "duplicate element id"),
    (lambda d: d["links"].append(dict(d["links"][0], id="l-dup")), "parallel link"),
    (lambda d: d["links"].append({"id": "b", "from": "fr-1", "to": "fr-2", "delay_ms": 1, "capacity_gbps": 1,
                                  "backup_of": "l-1-2", "admin_up": False}), "protected=false"),
    (lambda d: d["links"].append({"id": "b", "from": "fr-1", "to": "fr-2", "delay_ms": 1, "capacity_gbps": 1,
                                  "backup_of": "nope", "admin_up": False}), "unknown link"),
    (lambda d: d.update(srv6_prefix="zz"), "IPv6"),
    (lambda d: d.update(intra_edc_delay_ms=0.0001), "sub-microsecond"),
])
def test_validation_rules(mutate, needle):
    doc = copy.deepcopy(small_doc())
    mutate(doc)
    assert needle in messages(problems_of(doc))


def test_backup_rules(mecd5_raw):
    doc = copy.deepcopy(mecd5_raw)
    backup = next(l for l in doc["links"] if l["id"] == "l-1-5b")
    backup["admin_up"] = True
    backup["to"] = "fr-4"
    text = messages(problems_of(doc))
    assert "standby" in text and "same endpoints" in text


def test_lax_ignores_unknown_keys():
    doc = small_doc(colour="red")
    doc["edcs"][0]["elements"][0]["note"] = "x"
    assert parse_topology(doc, lax=True).element("cu-1").sid.value == 1210


def test_srv6_forms():
    topo = parse_topology(small_doc(srv6_prefix="fd00::"))
    sid = topo.element("cu-1").sid
    assert str(sid.v6_address) == "fd00::4ba"
    assert sid_from_srv6(sid.v6_form) == (0xFD000000, 1210)
    assert sid == SegmentId(1210)  # v6 form does not affect identity
    assert srv6_form(1, 0xFD000000) >> 96 == 0xFD000000


# -- registration ----------------------------------------------------------------


def test_register_idempotent_and_conflicts(small):
    reg = build_registry(small)
    rec = small.element("cu-1")
    register_element(reg, rec)
    assert reg.bound(rec.sid) == ["cu-1"]
    with pytest.raises(DuplicateElement):
        register_element(reg, ElementRecord("cu-1", ElementType.CU, SegmentId(1999), "edc-1"))
    with pytest.raises(DuplicateSid):
        register_element(reg, ElementRecord("cu-7", ElementType.CU, SegmentId(1210), "edc-1"))
    with pytest.raises(UnknownEdc):
        register_element(reg, ElementRecord("cu-8", ElementType.CU, SegmentId(1998), "edc-9"))
    with pytest.raises(UnknownElement):
        reg.record("nope")


def test_anycast_registration_is_shared(small):
    reg = build_registry(small)
    any_sid = SegmentId(9000, SidKind.ANYCAST)
    register_element(reg, ElementRecord("ec-1", ElementType.EC, SegmentId(1212), "edc-1", app_ids=frozenset({any_sid})))
    assert reg.hosts(any_sid) == ["ec-1", "ec-2"]


# -- resolution and routing -----------------------------------------------------------


def test_resolve(reg5):
    any_sid = SegmentId(9000, SidKind.ANYCAST)
    assert resolve_sid(reg5, any_sid, "cu-1") == "ec-5"
    assert resolve_sid(reg5, any_sid, "cu-3") == "ec-4"
    assert resolve_sid(reg5, any_sid, "cu-2") == "ec-4"
    assert resolve_sid(reg5, SegmentId(1250)) == "ec-5"
    with pytest.raises(UnknownSid):
        resolve_sid(reg5, SegmentId(4242))
    with pytest.raises(ValueError):
        resolve_sid(reg5, any_sid)


def test_resolve_no_live_instance(small):
    reg = build_registry(small)
    for l in small.links:
        l.admin_up = False
    small.touch()
    with pytest.raises(NoLiveInstance):
        resolve_sid(reg, SegmentId(9000, SidKind.ANYCAST), "cu-1")


def test_routes_use_routers_only(mecd5):
    walk = ["cu-1"] + [e.neighbor for e in mecd5.route("cu-1", "ec-5")]
    assert walk == ["cu-1", "fr-1", "fr-5", "ec-5"]
    assert mecd5.path_delay_us("cu-1", "ec-5") == 1100
    # an EC never relays traffic
    assert "ec-1" not in walk
    assert [l.link_id for l in iter_inter_edc_links(mecd5, walk)] == ["l-1-5"]


def test_route_to_self_and_unreachable(small):
    assert small.route("cu-1", "cu-1") == []
    small.link("l-1-2").admin_up = False
    small.touch()
    assert small.route("cu-1", "ec-2") is None


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_routing_matches_brute_force(seed):
    topo = random_topology(seed)
    ids = sorted(topo.elements)
    for src in ids:
        for dst in ids:
            got = topo.path_delay_us(src, dst)
            assert got == oracle_delay(topo, src, dst), (src, dst)
            if got is not None and src != dst:
                edges = topo.route(src, dst)
                assert sum(e.delay_us for e in edges) == got
                # suffix consistency: the route from any point is the rest of the route
                mid = edges[0].neighbor
                if mid != dst:
                    assert topo.route(mid, dst) == edges[1:]


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_anycast_matches_brute_force(seed):
    doc = random_topology_dict(random.Random(seed))
    for edc in doc["edcs"]:
        for el in edc["elements"]:
            if el["type"] == "EC":
                el["app_ids"] = [{"value": 9000, "kind": "AnycastSid"}]
    topo = parse_topology(doc)
    reg = build_registry(topo)
    any_sid = SegmentId(9000, SidKind.ANYCAST)
    for src in sorted(topo.elements):
        want = oracle_resolve(reg, any_sid, src)
        if want is None:
            with pytest.raises(NoLiveInstance):
                resolve_sid(reg, any_sid, src)
        else:
            assert resolve_sid(reg, any_sid, src) == want
