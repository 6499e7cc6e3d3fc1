"""Traffic-class catalog and QFI-to-class bindings."""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType

from .errors import PreconditionViolated, UnboundQfi, UnknownClass, ValidationError
from .mecd_model import SegmentId, SidKind, _parse_sid, _Problems
from .timebase import ms_to_us


class Resiliency(str, Enum):
    PROTECTED = "Protected"
    UNPROTECTED = "Unprotected"


@dataclass(frozen=True)
class QosMarkers:
    qfi: int | None = None
    mpls_exp: int | None = None
    ipv6_flow_label: int | None = None

    def __post_init__(self):
        if self.mpls_exp is not None and not 0 <= self.mpls_exp <= 7:
            raise ValueError("mpls_exp is a 3-bit field")
        if self.ipv6_flow_label is not None and not 0 <= self.ipv6_flow_label < 2**20:
            raise ValueError("ipv6_flow_label is a 20-bit field")


@dataclass(frozen=True)
class TrafficClass:
    class_id: int
    latency_bound_us: int
    peak_rate_gbps: float
    resiliency: Resiliency = Resiliency.UNPROTECTED
    restoration_us: int | None = None
    max_error_rate: float = 1.0
    qos_markers: QosMarkers = QosMarkers()
    required_app_sid: SegmentId | None = None

    def __post_init__(self):
        if self.latency_bound_us <= 0:
            raise ValueError("latency bound must be positive")
        if self.peak_rate_gbps <= 0:
            raise ValueError("peak rate must be positive")
        if not 0 <= self.max_error_rate <= 1:
            raise ValueError("max_error_rate must be in [0, 1]")
        if self.protected and (self.restoration_us is None or self.restoration_us <= 0):
            raise ValueError("protected classes need a positive restoration time")
        if self.required_app_sid is not None and self.required_app_sid.kind not in (
            SidKind.APP, SidKind.ANYCAST,
        ):
            raise ValueError("required_app_sid must be an AppSid or AnycastSid")

    @property
    def protected(self) -> bool:
        return self.resiliency is Resiliency.PROTECTED

    @property
    def latency_bound_ms(self) -> float:
        return self.latency_bound_us / 1000


class Catalog(Mapping):
    """Read-only ``class_id -> TrafficClass`` mapping."""

    def __init__(self, classes: Iterable[TrafficClass]):
        table = {}
        for tc in classes:
            if tc.class_id in table:
                raise ValueError(f"duplicate class id {tc.class_id}")
            table[tc.class_id] = tc
        self._table = MappingProxyType(dict(sorted(table.items())))

    def __getitem__(self, class_id: int) -> TrafficClass:
        return self._table[class_id]

    def __iter__(self):
        return iter(self._table)

    def __len__(self) -> int:
        return len(self._table)

    def __repr__(self) -> str:
        return f"Catalog({list(self._table.values())!r})"

    def protected_restoration_us(self) -> int | None:
        """Shortest restoration time among protected classes, if any."""
        times = [tc.restoration_us for tc in self._table.values() if tc.protected]
        return min(times) if times else None


DEFAULT_CATALOG = Catalog([
    TrafficClass(
        class_id=0,
        latency_bound_us=7_000,
        peak_rate_gbps=1.0,
        resiliency=Resiliency.PROTECTED,
        restoration_us=50_000,
        max_error_rate=0.0001,
        qos_markers=QosMarkers(qfi=5),
    ),
    TrafficClass(
        class_id=1,
        latency_bound_us=20_000,
        peak_rate_gbps=5.0,
        resiliency=Resiliency.UNPROTECTED,
        max_error_rate=0.001,
        qos_markers=QosMarkers(qfi=9),
    ),
])

DEFAULT_QFI_CLASS = MappingProxyType({5: 0, 9: 1})


def catalog_lookup(catalog: Mapping[int, TrafficClass], class_id: int) -> TrafficClass:
    try:
        return catalog[class_id]
    except KeyError:
        raise UnknownClass(f"traffic class {class_id} is not in the catalog") from None


@dataclass(frozen=True)
class QfiBinding:
    qfi: int
    class_id: int
    bearer_id: int


def check_bindings(bindings: Iterable[QfiBinding]) -> None:
    """Reject a QFI that appears on two bearers or maps to two classes."""
    seen: dict[int, QfiBinding] = {}
    for b in bindings:
        prev = seen.get(b.qfi)
        if prev is not None and prev != b:
            raise PreconditionViolated(f"QFI {b.qfi} bound twice (bearers {prev.bearer_id}, {b.bearer_id})")
        seen[b.qfi] = b


def map_qfi(session_bindings: Iterable[QfiBinding], qfi: int) -> int:
    for b in session_bindings:
        if b.qfi == qfi:
            return b.class_id
    raise UnboundQfi(f"QFI {qfi} is not bound in this session")


# -- config --------------------------------------------------------------------

_CLASS_KEYS = {
    "class_id", "latency_bound_rtt_ms", "peak_rate_gbps", "resiliency", "restoration_ms",
    "max_error_rate", "qos_markers", "required_app_sid",
}


def parse_classes(raw, lax: bool = False, path: str = "classes") -> Catalog:
    """Build a Catalog from the ``classes[]`` array of a scenario."""
    problems = _Problems()
    out: list[TrafficClass] = []
    if not isinstance(raw, list):
        raise ValidationError([(path, "must be a list")])
    ids: set[int] = set()
    for i, item in enumerate(raw):
        p = f"{path}[{i}]"
        if not isinstance(item, dict):
            problems.add(p, "must be an object")
            continue
        problems.unknown_keys(item, _CLASS_KEYS, p, lax)
        cid = item.get("class_id")
        if not isinstance(cid, int) or isinstance(cid, bool) or cid < 0:
            problems.add(f"{p}.class_id", "must be a non-negative integer")
            continue
        if cid in ids:
            problems.add(f"{p}.class_id", f"duplicate class id {cid}")
            continue
        ids.add(cid)
        missing = [k for k in ("latency_bound_rtt_ms", "peak_rate_gbps") if item.get(k) is None]
        for k in missing:
            problems.add(f"{p}.{k}", "required")
        if missing:
            continue
        try:
            bound = ms_to_us(item.get("latency_bound_rtt_ms"))
            restoration = item.get("restoration_ms")
            restoration_us = None if restoration is None else ms_to_us(restoration)
        except (ValueError, TypeError) as exc:
            problems.add(p, str(exc))
            continue
        try:
            resiliency = Resiliency(item.get("resiliency", "Unprotected"))
        except ValueError:
            problems.add(f"{p}.resiliency", "must be Protected or Unprotected")
            continue
        app = None
        if item.get("required_app_sid") is not None:
            app = _parse_sid(item["required_app_sid"], f"{p}.required_app_sid", problems, SidKind.APP)
        markers = item.get("qos_markers") or {}
        try:
            tc = TrafficClass(
                class_id=cid,
                latency_bound_us=bound,
                peak_rate_gbps=item.get("peak_rate_gbps"),
                resiliency=resiliency,
                restoration_us=restoration_us,
                max_error_rate=item.get("max_error_rate", 1.0),
                qos_markers=QosMarkers(**markers),
                required_app_sid=app,
            )
        except (ValueError, TypeError) as exc:
            problems.add(p, str(exc))
            continue
        out.append(tc)
    if problems.items:
        raise ValidationError(problems.items)
    return Catalog(out)


def class_to_dict(tc: TrafficClass) -> dict:
    out = {
        "class_id": tc.class_id,
        "latency_bound_rtt_ms": tc.latency_bound_us / 1000,
        "peak_rate_gbps": tc.peak_rate_gbps,
        "resiliency": tc.resiliency.value,
        "max_error_rate": tc.max_error_rate,
    }
    if tc.restoration_us is not None:
        out["restoration_ms"] = tc.restoration_us / 1000
    if tc.required_app_sid is not None:
        out["required_app_sid"] = {"value": tc.required_app_sid.value, "kind": tc.required_app_sid.kind.value}
    return out
