"""Deterministic event-driven simulator for segment-routed mobile edge data centers."""

from .errors import WonderError
from .mecd_model import SegmentId, SidKind, Topology, build_registry, load_topology, resolve_sid
from .scenario import load_scenario, parse_scenario
from .sim import RunResult, Simulator, run
from .traffic_classes import DEFAULT_CATALOG

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_CATALOG",
    "RunResult",
    "SegmentId",
    "SidKind",
    "Simulator",
    "Topology",
    "WonderError",
    "build_registry",
    "load_scenario",
    "load_topology",
    "parse_scenario",
    "resolve_sid",
    "run",
]
