from wonder_sim.mecd_model import parse_topology
from wonder_sim.oracle import all_legs, check_topology, oracle_delay
from wonder_sim.randomgen import MAX_FORWARDING, forwarding_count, random_topology
from wonder_sim.traffic_classes import DEFAULT_CATALOG, TrafficClass

from conftest import small_doc


def triangle():
    doc = small_doc()
    doc["edcs"].append({"id": "edc-3", "elements": [{"id": "fr-3", "type": "FabricRouter", "sid": 103}]})
    doc["links"] += [
        {"id": "l-1-3", "from": "fr-1", "to": "fr-3", "delay_ms": 0.3, "capacity_gbps": 10},
        {"id": "l-2-3", "from": "fr-2", "to": "fr-3", "delay_ms": 0.4, "capacity_gbps": 10},
    ]
    return parse_topology(doc)


def test_enumerates_every_simple_leg():
    topo = triangle()
    legs = all_legs(topo, "cu-1", "ec-2")
    walks = [w for _, w, _ in legs]
    # direct, or around through fr-3; the non-transit upf-1 never relays
    assert walks == [
        ("cu-1", "fr-1", "fr-3", "fr-2", "ec-2"),
        ("cu-1", "fr-1", "fr-2", "ec-2"),
    ]
    assert [d for d, _, _ in legs] == [50 + 300 + 400 + 50, 50 + 1000 + 50]
    assert oracle_delay(topo, "cu-1", "ec-2") == 800
    assert oracle_delay(topo, "cu-1", "cu-1") == 0


def test_class_filters_prune_links():
    topo = triangle()
    fat = TrafficClass(1, 20000, 50.0)
    assert all_legs(topo, "cu-1", "ec-2", fat) == []


def test_random_generator_bounds():
    for seed in range(30):
        topo = random_topology(seed)
        assert forwarding_count(topo) <= MAX_FORWARDING


def test_check_reports_counts(mecd5):
    n, diffs = check_topology(mecd5, DEFAULT_CATALOG, 2000)
    assert n == 92 and diffs == []
