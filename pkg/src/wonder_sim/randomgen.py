"""Seeded random MECD topologies for differential testing against the oracle."""

from __future__ import annotations

import random
from itertools import combinations

from .mecd_model import FORWARDING_TYPES, Topology, parse_topology

MAX_FORWARDING = 8


def random_topology_dict(rng: random.Random, max_forwarding: int = MAX_FORWARDING) -> dict:
    """A valid topology document with at most ``max_forwarding`` forwarding elements.

    Every EDC has a fabric router; CUs, UPFs and ECs are sprinkled so that at
    least one of each exists. Inter-EDC links connect routers, some of them
    protected with a slightly slower backup.
    """
    n_edc = rng.randint(2, min(4, max_forwarding // 2))
    budget = max_forwarding - n_edc  # routers are forwarding elements too
    edcs = []
    for i in range(1, n_edc + 1):
        edcs.append({"id": f"edc-{i}", "elements": [
            {"id": f"fr-{i}", "type": "FabricRouter", "sid": 100 + i},
        ]})

    def add(i: int, etype: str, prefix: str, ordinal: int, **extra):
        edcs[i - 1]["elements"].append(
            {"id": f"{prefix}-{i}", "type": etype, "sid": 1200 + 10 * i + ordinal, **extra}
        )

    # guarantee one CU and one UPF, then spend the rest of the budget at random
    cu_edc = rng.randint(1, n_edc)
    upf_edc = rng.randint(1, n_edc)
    add(cu_edc, "CU", "cu", 0)
    add(upf_edc, "UPF", "upf", 1)
    budget -= 2
    slots = [(i, t) for i in range(1, n_edc + 1) for t in ("CU", "UPF")
             if not (t == "CU" and i == cu_edc) and not (t == "UPF" and i == upf_edc)]
    rng.shuffle(slots)
    for i, t in slots[: rng.randint(0, max(0, budget))]:
        add(i, t, t.lower(), 0 if t == "CU" else 1)
    ec_edcs = [i for i in range(1, n_edc + 1) if rng.random() < 0.6] or [rng.randint(1, n_edc)]
    for i in ec_edcs:
        add(i, "EC", "ec", 2)

    links = []
    routers = [f"fr-{i}" for i in range(1, n_edc + 1)]
    order = routers[:]
    rng.shuffle(order)
    pairs = {tuple(sorted((a, b))) for a, b in zip(order, order[1:])}  # spanning path
    for a, b in combinations(routers, 2):
        if rng.random() < 0.4:
            pairs.add((a, b))
    for a, b in sorted(pairs):
        lid = f"l-{a[3:]}-{b[3:]}"
        delay = rng.randint(2, 20) / 10
        cap = rng.choice([1, 10, 100])
        protected = rng.random() < 0.5
        link = {"id": lid, "from": a, "to": b, "delay_ms": delay, "capacity_gbps": cap, "protected": protected}
        if rng.random() < 0.3:
            link["error_rate"] = rng.choice([1e-5, 1e-4, 1e-3])
        links.append(link)
        if protected:
            links.append({
                "id": lid + "b", "from": a, "to": b, "delay_ms": round(delay + rng.randint(0, 5) / 10, 1),
                "capacity_gbps": rng.choice([1, 10, 100]), "backup_of": lid, "admin_up": False,
            })
    return {
        "format_version": 1,
        "intra_edc_delay_ms": rng.choice([0.05, 0.1]),
        "edcs": edcs,
        "links": links,
    }


def random_topology(seed: int, max_forwarding: int = MAX_FORWARDING) -> Topology:
    return parse_topology(random_topology_dict(random.Random(seed), max_forwarding))


def forwarding_count(topo: Topology) -> int:
    return sum(1 for e in topo.elements.values() if e.element_type in FORWARDING_TYPES)


__all__ = ["MAX_FORWARDING", "forwarding_count", "random_topology", "random_topology_dict"]
