"""Segment-list forwarding over a topology snapshot.

A packet carries exactly one segment list. At every element the active
segment is resolved (anycast resolution is pinned the first time a segment
becomes active), popped when the packet sits on the resolved element, and
otherwise followed one routed hop further. Delays are integer microseconds.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Protocol

from .errors import NestedEncapsulation, NoBackup, NoLiveInstance, UnknownSid, WrongUpf
from .mecd_model import SegmentId, SidRegistry, Topology, resolve_sid
from .timebase import fmt_ms

_packet_ids = itertools.count(1)


class Direction(str, Enum):
    UL = "UL"
    DL = "DL"


class Status(str, Enum):
    IN_FLIGHT = "InFlight"
    DELIVERED = "Delivered"
    DROPPED = "Dropped"


@dataclass(frozen=True)
class Hop:
    element_id: str
    time_us: int
    sid_active: int | None
    event: str


@dataclass
class Packet:
    direction: Direction
    segment_list: tuple[SegmentId, ...]
    segments_left: int
    ue_id: str = ""
    qfi: int = 0
    bearer_id: int = 0
    payload_tag: str = ""
    created_at_us: int = 0
    hop_trace: list[Hop] = field(default_factory=list)
    packet_id: int = field(default_factory=lambda: next(_packet_ids))
    tunnel: Packet | None = None
    anycast_pins: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.segment_list = tuple(self.segment_list)
        if not 0 <= self.segments_left <= len(self.segment_list):
            raise ValueError("segments_left out of range")
        if self.tunnel is not None:
            raise NestedEncapsulation("a packet carries one segment list, never an inner tunnel")

    @classmethod
    def new(cls, direction: Direction, stack, created_at_us: int = 0, **kw) -> Packet:
        stack = tuple(stack)
        return cls(direction, stack, len(stack), created_at_us=created_at_us, **kw)

    @property
    def active_index(self) -> int:
        return len(self.segment_list) - self.segments_left

    @property
    def active_sid(self) -> SegmentId | None:
        return self.segment_list[self.active_index] if self.segments_left else None

    @property
    def now_us(self) -> int:
        return self.hop_trace[-1].time_us if self.hop_trace else self.created_at_us

    def record(self, element_id: str, time_us: int, event: str) -> None:
        if self.hop_trace and time_us < self.hop_trace[-1].time_us:
            raise ValueError("hop_trace must be nondecreasing in time")
        sid = self.active_sid
        self.hop_trace.append(Hop(element_id, time_us, None if sid is None else sid.value, event))

    def encapsulate(self, inner: Packet) -> None:
        raise NestedEncapsulation("GTP-style encapsulation is not supported")


@dataclass(frozen=True)
class ForwardingOutcome:
    status: Status
    at_element: str
    reason: str | None = None

    @property
    def delivered(self) -> bool:
        return self.status is Status.DELIVERED


def _target(registry: SidRegistry, packet: Packet, current: str) -> str:
    idx = packet.active_index
    pinned = packet.anycast_pins.get(idx)
    if pinned is not None:
        return pinned
    target = resolve_sid(registry, packet.active_sid, current)
    packet.anycast_pins[idx] = target
    return target


def forward_hop(topology: Topology, registry: SidRegistry, packet: Packet, current: str) -> ForwardingOutcome:
    """Advance ``packet`` by one action at ``current``: a pop or one hop."""
    if packet.segments_left == 0:
        return ForwardingOutcome(Status.DELIVERED, current)
    try:
        target = _target(registry, packet, current)
    except (UnknownSid, NoLiveInstance):
        packet.record(current, packet.now_us, "drop:unknown sid")
        return ForwardingOutcome(Status.DROPPED, current, "unknown sid")
    if target == current:
        last = packet.hop_trace[-1] if packet.hop_trace else None
        already = (
            last is not None
            and last.element_id == current
            and last.event in ("pop", "deliver")
            and last.sid_active == packet.active_sid.value
        )
        if not already:
            packet.record(current, packet.now_us, "deliver" if packet.segments_left == 1 else "pop")
        packet.segments_left -= 1
        if packet.segments_left == 0:
            return ForwardingOutcome(Status.DELIVERED, current)
        return ForwardingOutcome(Status.IN_FLIGHT, current)
    edge = topology.next_hop(current, target, include_restoring=True)
    if edge is None:
        packet.record(current, packet.now_us, "drop:unreachable")
        return ForwardingOutcome(Status.DROPPED, current, "unreachable")
    if edge.link_id is not None and topology.link(edge.link_id).restoring:
        packet.record(current, packet.now_us, "drop:restoration")
        return ForwardingOutcome(Status.DROPPED, current, "restoration")
    arrival = packet.now_us + edge.delay_us
    nxt = edge.neighbor
    if nxt == target:
        event = "deliver" if packet.segments_left == 1 else "pop"
    else:
        event = "transit"
    packet.record(nxt, arrival, event)
    return ForwardingOutcome(Status.IN_FLIGHT, nxt)


def forward(
    topology: Topology,
    registry: SidRegistry,
    packet: Packet,
    current_element: str,
    event: str = "inject",
) -> ForwardingOutcome:
    """Run ``packet`` from ``current_element`` until delivered or dropped."""
    topology.element(current_element)
    if not packet.hop_trace or packet.hop_trace[-1].element_id != current_element:
        packet.record(current_element, packet.now_us, event)
    cur = current_element
    # a packet cannot visit more than (elements x segments) states
    budget = (len(topology.elements) + 1) * (len(packet.segment_list) + 1) + 1
    for _ in range(budget):
        out = forward_hop(topology, registry, packet, cur)
        if out.status is not Status.IN_FLIGHT:
            return out
        cur = out.at_element
    packet.record(cur, packet.now_us, "drop:loop")
    return ForwardingOutcome(Status.DROPPED, cur, "loop")


def latency_us(packet: Packet) -> int:
    """Propagation delay accumulated so far (first to last trace entry)."""
    if not packet.hop_trace:
        return 0
    return packet.hop_trace[-1].time_us - packet.hop_trace[0].time_us


def popped_elements(packet: Packet) -> list[str]:
    """Elements at which a segment was consumed, in order."""
    out = []
    for hop in packet.hop_trace:
        if hop.event in ("pop", "deliver"):
            out.append(hop.element_id)
    return out


class _BearerStacks(Protocol):
    ul_stack_upf: tuple[SegmentId, ...]
    dl_stack_upf: tuple[SegmentId, ...]


class _Session(Protocol):
    serving_upf: str

    def bearer(self, bearer_id: int) -> _BearerStacks: ...


def upf_switch(packet: Packet, upf_element: str, session: _Session) -> Packet:
    """Swap the N3 stack for the N6 stack (UL) or vice versa (DL) at the UPF.

    The old stack is discarded, not wrapped: the returned packet still
    carries a single segment list.
    """
    if packet.tunnel is not None:
        raise NestedEncapsulation("packet already carries an inner segment list")
    if upf_element != session.serving_upf:
        raise WrongUpf(f"session is anchored at {session.serving_upf}, not {upf_element}")
    bearer = session.bearer(packet.bearer_id)
    stack = bearer.ul_stack_upf if packet.direction is Direction.UL else bearer.dl_stack_upf
    out = replace(
        packet,
        segment_list=tuple(stack),
        segments_left=len(stack),
        hop_trace=list(packet.hop_trace),
        anycast_pins={},
    )
    out.record(upf_element, packet.now_us, "upf-switch")
    return out


# -- link failure and protection switching --------------------------------------


def fail_link(topology: Topology, link_id: str) -> bool:
    """Cut a link. Returns True when a protection switch is now pending.

    A protected primary goes into the restoring state (still routed over,
    but lossy) until :func:`restore` runs. An unprotected link goes down at
    once.
    """
    link = topology.link(link_id)
    if not link.admin_up:
        return False
    if link.protected:
        if topology.backup_for(link_id) is None:
            raise NoBackup(f"protected link {link_id} has no backup")
        link.restoring = True
        topology.touch()
        return True
    link.admin_up = False
    topology.touch()
    return False


def restore(topology: Topology, failed_link: str) -> Topology:
    """Complete the protection switch for ``failed_link`` (no-op if none pending)."""
    link = topology.link(failed_link)
    if not link.restoring:
        return topology
    backup = topology.backup_for(failed_link)
    if backup is None:
        raise NoBackup(f"protected link {failed_link} has no backup")
    link.restoring = False
    link.admin_up = False
    backup.admin_up = True
    topology.touch()
    return topology


def repair_link(topology: Topology, link_id: str) -> bool:
    """Return a failed link to service and put its backup back in standby."""
    link = topology.link(link_id)
    if link.admin_up and not link.restoring:
        return False
    link.admin_up = True
    link.restoring = False
    backup = topology.backup_for(link_id)
    if backup is not None:
        backup.admin_up = False
    topology.touch()
    return True


# -- segment-list compression -----------------------------------------------------


def route_walk(topology: Topology, src: str, dst: str, include_restoring: bool = False) -> list[str] | None:
    edges = topology.route(src, dst, include_restoring)
    if edges is None:
        return None
    return [src] + [e.neighbor for e in edges]


def compress_path(
    topology: Topology,
    registry: SidRegistry,
    walk: list[str],
    include_restoring: bool = False,
) -> tuple[SegmentId, ...] | None:
    """Shortest segment list whose routed expansion is exactly ``walk``.

    ``walk[0]`` is the element imposing the stack and is not itself encoded.
    Returns ``None`` when some span of the walk is not the routed path
    between any pair of its points (the walk cannot be expressed with node
    SIDs).
    """
    if len(walk) <= 1:
        return ()
    segments: list[SegmentId] = []
    anchor = 0
    last = len(walk) - 1
    while anchor < last:
        best = None
        for j in range(last, anchor, -1):
            if route_walk(topology, walk[anchor], walk[j], include_restoring) == walk[anchor : j + 1]:
                best = j
                break
        if best is None:
            return None
        segments.append(registry.node_sid(walk[best]))
        anchor = best
    return tuple(segments)


def expand_stack(
    topology: Topology,
    registry: SidRegistry,
    src: str,
    stack,
    include_restoring: bool = False,
) -> list[str] | None:
    """Element walk produced by routing ``stack`` from ``src`` (no anycast pins)."""
    walk = [src]
    for sid in stack:
        dst = resolve_sid(registry, sid, walk[-1])
        part = route_walk(topology, walk[-1], dst, include_restoring)
        if part is None:
            return None
        walk.extend(part[1:])
    return walk


# -- trace export -------------------------------------------------------------------


def carried_sids(packet: Packet) -> list[int]:
    """Every active SID the packet carried, in order, across stack swaps."""
    out: list[int] = []
    for hop in packet.hop_trace:
        if hop.sid_active is not None and (not out or out[-1] != hop.sid_active):
            out.append(hop.sid_active)
    return out


def format_trace(packets, header: bool = True) -> str:
    """Tab-separated hop trace: ``time_ms element_id sid_active event``."""
    lines = []
    for p in packets:
        if header:
            lines.append(f"# packet {p.payload_tag or p.packet_id} {p.direction.value} ue={p.ue_id} "
                         f"sids={','.join(str(v) for v in carried_sids(p))}")
        for hop in p.hop_trace:
            sid = "-" if hop.sid_active is None else str(hop.sid_active)
            lines.append(f"{fmt_ms(hop.time_us)}\t{hop.element_id}\t{sid}\t{hop.event}")
    return "\n".join(lines) + ("\n" if lines else "")
