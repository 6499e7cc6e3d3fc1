"""Scenario documents: topology, classes, apps, defaults and an event script."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ParseError, ValidationError
from .eventloop import EventKind
from .mecd_model import (
    SegmentId,
    SidKind,
    Topology,
    _parse_sid,
    _Problems,
    parse_topology,
)
from .timebase import ms_to_us
from .traffic_classes import DEFAULT_CATALOG, DEFAULT_QFI_CLASS, Catalog, parse_classes

_TOP_KEYS = {
    "format_version", "name", "description", "seed", "topology", "classes", "qfi_map", "apps",
    "defaults", "events",
}
_DEFAULT_KEYS = {
    "air_rtt_ms", "intra_edc_hop_ms", "signaling_step_ms", "activate_ms", "replicate_ms",
    "predict_threshold", "predict_horizon_ms", "grace_ms", "ec_slots", "awr_mode", "awr_policy",
    "ho_buffer", "jitter_ms",
}
_EVENT_FIELDS = {
    EventKind.ATTACH: ({"ue", "cu"}, {"bearers", "upf_hint"}),
    EventKind.SEND_PACKET: ({"ue"}, {"bearer", "direction", "tag"}),
    EventKind.MOBILITY_SAMPLE: ({"ue", "edc"}, {"hint", "neighbor_edc"}),
    EventKind.MEASUREMENT_REPORT: ({"ue", "target_cu"}, set()),
    EventKind.LINK_FAIL: ({"link"}, {"restoration_ms"}),
    EventKind.LINK_RESTORE: ({"link"}, set()),
    EventKind.REGISTER_ELEMENT: ({"edc", "element"}, set()),
    EventKind.INJECT: ({"at", "stack"}, {"direction", "tag"}),
}
SCRIPT_KINDS = frozenset(_EVENT_FIELDS)
FIXTURES = "fixtures"


@dataclass(frozen=True)
class Defaults:
    air_rtt_us: int = 2_000
    intra_edc_hop_us: int | None = None  # None keeps the topology's own value
    signaling_step_us: int = 1_000
    activate_us: int = 5_000
    replicate_us: int = 15_000
    predict_threshold: float = 0.6
    predict_horizon_us: int = 500_000
    grace_us: int = 50_000
    ec_slots: int = 8
    awr_mode: str = "reactive"
    awr_policy: str = "lazy"
    ho_buffer: int | None = None
    jitter_us: int = 0


@dataclass(frozen=True)
class AppSpec:
    sid: SegmentId
    shared: bool = False


@dataclass(frozen=True)
class ScriptEvent:
    time_us: int
    kind: EventKind
    payload: dict
    expect: str | None = None
    index: int = 0


@dataclass
class Scenario:
    name: str
    topology: Topology
    catalog: Catalog
    qfi_map: dict[int, int]
    apps: list[AppSpec]
    defaults: Defaults
    events: list[ScriptEvent]
    seed: int = 0
    source: str = ""
    raw: dict = field(default_factory=dict, repr=False)


def fixture_path(*parts: str) -> Path:
    return Path(__file__).resolve().parent.joinpath(FIXTURES, *parts)


def _resolve_ref(ref: str, base: Path | None) -> Path:
    if ref.startswith("builtin:"):
        return fixture_path("topology", ref.split(":", 1)[1] + ".json")
    cand = Path(ref)
    if not cand.is_absolute() and base is not None:
        cand = base / cand
    return cand


def _ms(problems: _Problems, path: str, value, *, allow_none: bool = False, minimum: int = 0):
    if value is None and allow_none:
        return None
    try:
        us = ms_to_us(value)
    except (ValueError, TypeError) as exc:
        problems.add(path, str(exc))
        return None
    if us < minimum:
        problems.add(path, f"must be >= {minimum / 1000}")
        return None
    return us


def _parse_defaults(raw: dict, problems: _Problems, lax: bool) -> Defaults:
    if not isinstance(raw, dict):
        problems.add("defaults", "must be an object")
        return Defaults()
    problems.unknown_keys(raw, _DEFAULT_KEYS, "defaults", lax)
    kw: dict[str, Any] = {}
    for key, attr in (
        ("air_rtt_ms", "air_rtt_us"), ("intra_edc_hop_ms", "intra_edc_hop_us"),
        ("signaling_step_ms", "signaling_step_us"), ("activate_ms", "activate_us"),
        ("replicate_ms", "replicate_us"), ("predict_horizon_ms", "predict_horizon_us"),
        ("grace_ms", "grace_us"), ("jitter_ms", "jitter_us"),
    ):
        if key in raw:
            val = _ms(problems, f"defaults.{key}", raw[key])
            if val is not None:
                kw[attr] = val
    if "predict_threshold" in raw:
        th = raw["predict_threshold"]
        if isinstance(th, bool) or not isinstance(th, (int, float)) or not 0 <= th <= 1:
            problems.add("defaults.predict_threshold", "must be in [0, 1]")
        else:
            kw["predict_threshold"] = float(th)
    for key in ("ec_slots", "ho_buffer"):
        if key in raw and raw[key] is not None:
            v = raw[key]
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                problems.add(f"defaults.{key}", "must be a non-negative integer")
            else:
                kw[key] = v
    if "awr_mode" in raw:
        if raw["awr_mode"] not in ("off", "reactive", "predictive"):
            problems.add("defaults.awr_mode", "must be off, reactive or predictive")
        else:
            kw["awr_mode"] = raw["awr_mode"]
    if "awr_policy" in raw:
        if raw["awr_policy"] not in ("lazy", "eager"):
            problems.add("defaults.awr_policy", "must be lazy or eager")
        else:
            kw["awr_policy"] = raw["awr_policy"]
    return Defaults(**kw)


def _parse_events(raw, problems: _Problems, lax: bool) -> list[ScriptEvent]:
    if not isinstance(raw, list):
        problems.add("events", "must be a list")
        return []
    out = []
    for i, ev in enumerate(raw):
        p = f"events[{i}]"
        if not isinstance(ev, dict):
            problems.add(p, "must be an object")
            continue
        try:
            kind = EventKind(ev.get("kind"))
        except ValueError:
            problems.add(f"{p}.kind", f"unknown event kind {ev.get('kind')!r}")
            continue
        if kind not in SCRIPT_KINDS:
            problems.add(f"{p}.kind", f"{kind.value} is internal and cannot be scripted")
            continue
        t = _ms(problems, f"{p}.t_ms", ev.get("t_ms"))
        if t is None:
            continue
        required, optional = _EVENT_FIELDS[kind]
        for key in sorted(required - set(ev)):
            problems.add(f"{p}.{key}", "required")
        if not lax:
            for key in sorted(set(ev) - required - optional - {"kind", "t_ms", "expect"}):
                problems.add(f"{p}.{key}", "unknown key")
        expect = ev.get("expect")
        if expect not in (None, "drop", "fail", "deliver"):
            problems.add(f"{p}.expect", "must be drop, fail or deliver")
        payload = {k: v for k, v in ev.items() if k not in ("kind", "t_ms", "expect")}
        out.append(ScriptEvent(t, kind, payload, expect, i))
    return out


def parse_scenario(data: dict, base_dir: Path | None = None, lax: bool = False, source: str = "") -> Scenario:
    if not isinstance(data, dict):
        raise ParseError("scenario must be a JSON object")
    problems = _Problems()
    if data.get("format_version") != 1:
        problems.add("format_version", "must be 1")
    problems.unknown_keys(data, _TOP_KEYS, "$", lax)

    topo = None
    ref = data.get("topology")
    try:
        if isinstance(ref, str):
            path = _resolve_ref(ref, base_dir)
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as exc:
                problems.add("topology", f"cannot read {ref}: {exc.strerror}")
                text = None
            if text is not None:
                try:
                    tdata = json.loads(text)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"{ref}: invalid JSON: {exc}") from exc
                topo = parse_topology(tdata, lax=lax)
        elif isinstance(ref, dict):
            topo = parse_topology(ref, lax=lax, require_version=False)
        else:
            problems.add("topology", "must be a file reference or an inline object")
    except ValidationError as exc:
        for path, msg in exc.problems:
            problems.add(f"topology.{path}", msg)

    catalog = DEFAULT_CATALOG
    if "classes" in data:
        try:
            catalog = parse_classes(data["classes"], lax=lax)
        except ValidationError as exc:
            problems.items.extend(exc.problems)

    qfi_map = dict(DEFAULT_QFI_CLASS)
    if "qfi_map" in data:
        qfi_map = {}
        raw_map = data["qfi_map"]
        if not isinstance(raw_map, dict):
            problems.add("qfi_map", "must map QFI to class id")
        else:
            for k, v in raw_map.items():
                try:
                    qfi_map[int(k)] = int(v)
                except (TypeError, ValueError):
                    problems.add(f"qfi_map.{k}", "QFI and class must be integers")
    for qfi, cid in sorted(qfi_map.items()):
        if cid not in catalog:
            problems.add(f"qfi_map.{qfi}", f"class {cid} is not defined")

    apps = []
    for i, raw_app in enumerate(data.get("apps", []) or []):
        p = f"apps[{i}]"
        if not isinstance(raw_app, dict):
            problems.add(p, "must be an object")
            continue
        problems.unknown_keys(raw_app, {"sid", "kind", "shared"}, p, lax)
        sid = _parse_sid({"value": raw_app.get("sid"), "kind": raw_app.get("kind", "AppSid")}, p, problems, SidKind.APP)
        if sid is not None:
            apps.append(AppSpec(sid, bool(raw_app.get("shared", False))))

    defaults = _parse_defaults(data.get("defaults", {}), problems, lax)
    events = _parse_events(data.get("events", []), problems, lax)
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        problems.add("seed", "must be an integer")
        seed = 0
    if problems.items:
        raise ValidationError(problems.items)
    if defaults.intra_edc_hop_us is not None:
        topo.intra_edc_delay_us = defaults.intra_edc_hop_us
        topo.touch()
    return Scenario(
        name=str(data.get("name", source or "scenario")),
        topology=topo,
        catalog=catalog,
        qfi_map=qfi_map,
        apps=apps,
        defaults=defaults,
        events=sorted(events, key=lambda e: (e.time_us, e.index)),
        seed=seed,
        source=source,
        raw=data,
    )


def load_scenario(path: str | Path, lax: bool = False) -> Scenario:
    path = Path(path)
    if not path.exists() and not path.suffix:
        builtin = fixture_path("scenarios", f"{path}.json")
        if builtin.exists():
            path = builtin
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    return parse_scenario(data, path.parent, lax=lax, source=path.stem)


def builtin_scenarios() -> list[str]:
    folder = fixture_path("scenarios")
    return sorted(p.stem for p in folder.glob("*.json"))


__all__ = [
    "AppSpec", "Defaults", "Scenario", "ScriptEvent", "builtin_scenarios",
    "fixture_path", "load_scenario", "parse_scenario",
]
