import json

import pytest

from wonder_sim.mecd_model import build_registry, load_topology, parse_topology
from wonder_sim.scenario import fixture_path


def fixture_text(name: str) -> str:
    return fixture_path("topology", f"{name}.json").read_text()


@pytest.fixture
def mecd5():
    return load_topology(fixture_text("mecd5"))


@pytest.fixture
def mecd5_raw():
    return json.loads(fixture_text("mecd5"))


@pytest.fixture
def reg5(mecd5):
    return build_registry(mecd5)


@pytest.fixture
def awi_topo():
    return load_topology(fixture_text("mecd5_awi"))


def small_doc(**over):
    """Two EDCs joined by one router link; the smallest valid document."""
    doc = {
        "format_version": 1,
        "edcs": [
            {"id": "edc-1", "elements": [
                {"id": "cu-1", "type": "CU", "sid": 1210},
                {"id": "upf-1", "type": "UPF", "sid": 1211},
                {"id": "fr-1", "type": "FabricRouter", "sid": 101},
            ]},
            {"id": "edc-2", "elements": [
                {"id": "ec-2", "type": "EC", "sid": 1222, "app_ids": [{"value": 9000, "kind": "AnycastSid"}]},
                {"id": "fr-2", "type": "FabricRouter", "sid": 102},
            ]},
        ],
        "links": [{"id": "l-1-2", "from": "fr-1", "to": "fr-2", "delay_ms": 1.0, "capacity_gbps": 10}],
    }
    doc.update(over)
    return doc


@pytest.fixture
def small():
    return parse_topology(small_doc())


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
