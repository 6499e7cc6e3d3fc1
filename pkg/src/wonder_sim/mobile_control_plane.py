"""Generalized 5G control plane: attach and inter-EDC handover with path switch.

AMF, SMF, NSSF and PCF are roles on one state machine. Every control message
is written to the signaling log and costs one signaling step of simulated
time. Procedures are generators driven by :class:`~wonder_sim.eventloop.EventLoop`.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from enum import Enum

from .awdc import DEFAULT_APP_BASE, Awdc, AwrMode, Workload
from .errors import (
    AttachFailed,
    CapacityExceeded,
    HandoverFailed,
    IpReassignment,
    NoEcInTargetEdc,
    NoFeasiblePath,
    NotAnEc,
    PreconditionViolated,
    UnknownElement,
    WonderError,
)
from .eventloop import EventLoop
from .mecd_model import ElementType, SegmentId, SidKind, SidRegistry
from .oer_controller import BearerDemand, Oerc, PathRecord, relaxed_session_paths
from .sr_dataplane import Hop, Packet
from .timebase import fmt_ms
from .traffic_classes import QfiBinding, catalog_lookup, check_bindings

DEFAULT_STEP_US = 1_000

#: the handover steps that must appear, in this order, in every successful log
MER_ORDER = (1, 2, 3, 4, 6, 7, 8, 9, 10, 11, 12, 13)


class SessionState(str, Enum):
    IDLE = "Idle"
    ATTACHING = "Attaching"
    ACTIVE = "Active"
    HANDING_OVER = "HandingOver"


@dataclass(frozen=True)
class BearerSpec:
    qfi: int
    class_id: int
    app_sid: SegmentId | None = None
    bearer_id: int | None = None


@dataclass
class Bearer:
    bearer_id: int
    qfi: int
    class_id: int
    path: PathRecord
    app_sid: SegmentId
    required_app_sid: SegmentId | None = None
    flagged: bool = False  # path does not meet the class bound

    @property
    def ec_element(self) -> str:
        return self.path.ec_element

    @property
    def ul_stack_cu(self):
        return self.path.ul_stack_cu

    @property
    def ul_stack_upf(self):
        return self.path.ul_stack_upf

    @property
    def dl_stack_ec(self):
        return self.path.dl_stack_ec

    @property
    def dl_stack_upf(self):
        return self.path.dl_stack_upf

    @property
    def binding(self) -> QfiBinding:
        return QfiBinding(self.qfi, self.class_id, self.bearer_id)


class UeSession:
    def __init__(self, ue_id: str, serving_cu: str, provider_id: str = "default"):
        self.ue_id = ue_id
        self.serving_cu = serving_cu
        self.serving_upf: str | None = None
        self.provider_id = provider_id
        self.bearers: list[Bearer] = []
        self.state = SessionState.IDLE
        self._ue_ip: str | None = None
        self.ip_history: list[str] = []

    @property
    def ue_ip(self) -> str | None:
        return self._ue_ip

    @ue_ip.setter
    def ue_ip(self, value: str) -> None:
        if self._ue_ip is not None:
            raise IpReassignment(f"{self.ue_id} already holds {self._ue_ip}")
        self._ue_ip = value
        self.ip_history.append(value)

    def bearer(self, bearer_id: int) -> Bearer:
        for b in self.bearers:
            if b.bearer_id == bearer_id:
                return b
        raise KeyError(f"{self.ue_id} has no bearer {bearer_id}")

    def bindings(self) -> list[QfiBinding]:
        return [b.binding for b in self.bearers]

    def snapshot(self) -> dict:
        return {
            "ue_id": self.ue_id,
            "ue_ip": self.ue_ip,
            "state": self.state.value,
            "serving_cu": self.serving_cu,
            "serving_upf": self.serving_upf,
            "bearers": [
                {"bearer_id": b.bearer_id, "qfi": b.qfi, "class_id": b.class_id, "ec": b.ec_element,
                 "rtt_ms": fmt_ms(b.path.rtt_us), "flagged": b.flagged}
                for b in self.bearers
            ],
        }


@dataclass(frozen=True)
class HandoverEvent:
    ue_id: str
    source_cu: str
    target_cu: str
    trigger_time_us: int


@dataclass
class HandoverRecord:
    event: HandoverEvent
    window_start_us: int | None = None
    done_us: int | None = None
    success: bool = False
    new_upf: str | None = None
    relocated: dict[int, str] = field(default_factory=dict)  # bearer -> new EC
    error: str | None = None

    @property
    def interruption_us(self) -> int | None:
        if self.window_start_us is None or self.done_us is None:
            return None
        return self.done_us - self.window_start_us


def buffer_and_release_dl(
    session: UeSession,
    packets: Iterable[Packet],
    completion_time_us: int,
    limit: int | None = None,
) -> tuple[list[Packet], list[Packet]]:
    """Split DL packets queued during a handover into (released, dropped).

    Order is preserved; with a finite ``limit`` the overflow is dropped.
    """
    if session.state is not SessionState.HANDING_OVER:
        raise PreconditionViolated(f"{session.ue_id} is not handing over")
    released, dropped = [], []
    for p in packets:
        if limit is not None and len(released) >= limit:
            p.hop_trace.append(Hop(p.hop_trace[-1].element_id if p.hop_trace else session.serving_cu,
                                   p.now_us, None, "drop:ho-buffer"))
            dropped.append(p)
        else:
            released.append(p)
    return released, dropped


class ControlPlane:
    def __init__(
        self,
        loop: EventLoop,
        registry: SidRegistry,
        oerc: Oerc,
        awdc: Awdc | None = None,
        step_us: int = DEFAULT_STEP_US,
        buffer_limit: int | None = None,
    ):
        self.loop = loop
        self.registry = registry
        self.oerc = oerc
        self.awdc = awdc
        self.step_us = step_us
        self.buffer_limit = buffer_limit
        self.catalog = oerc.catalog
        self.sessions: dict[str, UeSession] = {}
        self.log: list[dict] = []
        self.handovers: list[HandoverRecord] = []
        self.violations: list[dict] = []
        self.dl_buffer: dict[str, list[Packet]] = {}
        self.ul_hold: dict[str, list] = {}
        self.on_complete: Callable[[UeSession, HandoverRecord], None] | None = None
        self._ips = itertools.count(1)

    # -- helpers -------------------------------------------------------------------

    def emit(self, step: str, frm: str, to: str, ue_id: str, detail=None) -> None:
        self.log.append({
            "time_ms": fmt_ms(self.loop.now_us),
            "step": step,
            "from_role": frm,
            "to_role": to,
            "ue_id": ue_id,
            "detail": detail if detail is not None else {},
        })

    def _msg(self, step: str, frm: str, to: str, ue_id: str, detail=None):
        """Emit one message and let one signaling step elapse."""
        self.emit(step, frm, to, ue_id, detail)
        yield self.step_us

    def _cu(self, cu_id: str):
        try:
            rec = self.registry.record(cu_id)
        except UnknownElement:
            raise PreconditionViolated(f"{cu_id} is not registered") from None
        if rec.element_type is not ElementType.CU:
            raise PreconditionViolated(f"{cu_id} is not a CU")
        return rec

    def app_for(self, class_id: int, app_sid: SegmentId | None) -> SegmentId:
        if app_sid is not None:
            return app_sid
        tc = catalog_lookup(self.catalog, class_id)
        return tc.required_app_sid or SegmentId(DEFAULT_APP_BASE + class_id, SidKind.APP)

    def _scope(self, app: SegmentId, ue_id: str) -> str | None:
        return self.awdc.scope_for(app, ue_id) if self.awdc else ue_id

    def _meets_class(self, rec: PathRecord) -> bool:
        tc = catalog_lookup(self.catalog, rec.class_id)
        return rec.rtt_us <= tc.latency_bound_us and (rec.protected or not tc.protected)

    @staticmethod
    def _stacks(rec: PathRecord) -> dict:
        vals = lambda st: [s.value for s in st]  # noqa: E731
        return {
            "ul_cu": vals(rec.ul_stack_cu), "ul_upf": vals(rec.ul_stack_upf),
            "dl_ec": vals(rec.dl_stack_ec), "dl_upf": vals(rec.dl_stack_upf),
        }

    # -- attach --------------------------------------------------------------------

    def attach_proc(self, ue_id: str, cu_id: str, specs: list[BearerSpec], upf_hint: str | None = None):
        cu = self._cu(cu_id)
        existing = self.sessions.get(ue_id)
        if existing is not None and existing.state is not SessionState.IDLE:
            raise PreconditionViolated(f"{ue_id} already has an active session")
        specs = [
            BearerSpec(s.qfi, s.class_id, s.app_sid, s.bearer_id if s.bearer_id is not None else i + 1)
            for i, s in enumerate(specs)
        ]
        check_bindings(QfiBinding(s.qfi, s.class_id, s.bearer_id) for s in specs)
        for s in specs:
            catalog_lookup(self.catalog, s.class_id)
        session = UeSession(ue_id, cu_id, cu.provider_id)
        session.state = SessionState.ATTACHING

        yield from self._msg("OER.1", "UE", "CU", ue_id, {"cu": cu_id})
        yield from self._msg("OER.2", "CU", "AMF", ue_id, {"msg": "registration"})
        yield from self._msg("OER.2", "AMF", "UDM", ue_id, {"msg": "authenticate"})
        yield from self._msg("OER.2", "AMF", "PCF", ue_id,
                             {"qfi_class": {str(s.qfi): s.class_id for s in specs}})
        yield from self._msg("OER.2", "AMF", "SMF", ue_id, {"initial_upf": upf_hint})
        demands = []
        for s in specs:
            demands.append(BearerDemand(s.bearer_id, s.class_id, s.app_sid))
            yield from self._msg("OER.3", "NSSF", "OERC", ue_id, {
                "class_id": s.class_id, "cu": cu_id, "upf": upf_hint, "qfi": s.qfi,
                "app": None if s.app_sid is None else s.app_sid.value,
            })
        try:
            self.oerc.refresh()
            chosen = self.oerc.session_paths(cu_id, demands, upf_hint)
        except WonderError as exc:
            self.emit("OER.5", "OERC", "NSSF", ue_id, {"result": "reject", "reason": str(exc)})
            raise AttachFailed(f"{ue_id} at {cu_id}: {exc}") from exc
        self.emit("OER.4", "OERC", "OERC", ue_id, {"records": len(chosen)})

        bearers = []
        for s in specs:
            rec = chosen[s.bearer_id]
            app = self.app_for(s.class_id, s.app_sid)
            bearers.append(Bearer(s.bearer_id, s.qfi, s.class_id, rec, app, s.app_sid))
        if self.awdc is not None:
            try:
                for b in bearers:
                    self._activate_for(b, ue_id)
            except (CapacityExceeded, NotAnEc) as exc:
                self.emit("OER.5", "AWDC", "OERC", ue_id, {"result": "reject", "reason": str(exc)})
                raise AttachFailed(f"{ue_id}: {exc}") from exc
        upf = next(iter(chosen.values())).upf_element
        for b in bearers:
            yield from self._msg("OER.5", "OERC", "NSSF", ue_id, {
                "bearer": b.bearer_id, "upf": upf, "ec": b.ec_element, "rtt_ms": fmt_ms(b.path.rtt_us),
                **self._stacks(b.path),
            })
            yield from self._msg("OER.5", "OERC", "AWDC", ue_id, {"ec": b.ec_element, "app": b.app_sid.value})
            yield from self._msg("OER.5", "OERC", "EC", ue_id,
                                 {"ec": b.ec_element, "dl_ec": [s.value for s in b.dl_stack_ec]})
        yield from self._msg("OER.5", "NSSF", "AMF", ue_id, {"upf": upf, "override": upf_hint not in (None, upf)})
        yield from self._msg("OER.5", "AMF", "SMF", ue_id, {"upf": upf})
        yield from self._msg("OER.5", "SMF", "UPF", ue_id, {"upf": upf})
        self.emit("OER.5", "AMF", "CU", ue_id, {"cu": cu_id})
        session.bearers = bearers
        session.serving_upf = upf
        session.ue_ip = f"ip-{next(self._ips)}"
        session.state = SessionState.ACTIVE
        self.sessions[ue_id] = session
        return session

    def _activate_for(self, b: Bearer, ue_id: str) -> Workload:
        scope = self._scope(b.app_sid, ue_id)
        if scope is None:
            for w in self.awdc.live((b.app_sid, None)):
                if w.ec_element == b.ec_element:
                    return w
        return self.awdc.activate(b.app_sid, b.ec_element, scope)

    def attach(self, ue_id: str, cu_id: str, specs: list[BearerSpec], upf_hint: str | None = None) -> UeSession:
        return self.loop.run_process(self.attach_proc(ue_id, cu_id, specs, upf_hint), f"attach:{ue_id}")

    # -- handover ------------------------------------------------------------------

    def handover_proc(self, ue_id: str, target_cu: str):
        session = self.sessions.get(ue_id)
        if session is None or session.state is not SessionState.ACTIVE:
            raise PreconditionViolated(f"{ue_id} has no active session")
        tgt = self._cu(target_cu)
        if target_cu == session.serving_cu:
            raise PreconditionViolated("target CU equals serving CU")
        if tgt.provider_id != session.provider_id:
            raise PreconditionViolated(f"{target_cu} belongs to another provider")
        src = session.serving_cu
        target_edc = tgt.edc_id
        rec = HandoverRecord(HandoverEvent(ue_id, src, target_cu, self.loop.now_us))
        self.handovers.append(rec)

        yield from self._msg("MER.1", "UE", "CU-S", ue_id, {"source": src, "target": target_cu})
        yield from self._msg("MER.2", "CU-S", "CU-T", ue_id, {})
        yield from self._msg("MER.3", "CU-T", "CU-S", ue_id, {})
        yield from self._msg("MER.4", "CU-S", "AMF", ue_id, {})
        yield from self._msg("MER.4", "AMF", "UE", ue_id, {"attach_to": target_cu})
        session.state = SessionState.HANDING_OVER
        rec.window_start_us = self.loop.now_us
        self.dl_buffer.setdefault(ue_id, [])
        self.ul_hold.setdefault(ue_id, [])
        yield from self._msg("MER.5", "UE", "CU-T", ue_id, {"cu": target_cu})
        yield from self._msg("MER.6", "CU-T", "AMF", ue_id, {})
        yield from self._msg("MER.7", "AMF", "NSSF", ue_id,
                             {"cu": target_cu, "classes": [b.class_id for b in session.bearers]})
        yield from self._msg("MER.8", "NSSF", "OERC", ue_id, {"cu": target_cu, "update": True})

        try:
            chosen, replicas, flagged = yield from self._plan_paths(session, target_cu, target_edc)
        except WonderError as exc:
            rec.error = str(exc)
            self.emit("MER.9", "OERC", "NSSF", ue_id, {"result": "reject", "reason": str(exc)})
            session.state = SessionState.ACTIVE
            rec.done_us = self.loop.now_us
            if self.on_complete:
                self.on_complete(session, rec)
            raise HandoverFailed(f"{ue_id} -> {target_cu}: {exc}") from exc

        upf = next(iter(chosen.values())).upf_element
        for b in session.bearers:
            yield from self._msg("MER.9", "OERC", "NSSF", ue_id, {
                "bearer": b.bearer_id, "upf": upf, "ec": chosen[b.bearer_id].ec_element,
                "rtt_ms": fmt_ms(chosen[b.bearer_id].rtt_us), **self._stacks(chosen[b.bearer_id]),
            })
        yield from self._msg("MER.10", "NSSF", "AMF", ue_id, {"upf": upf})
        yield from self._msg("MER.11", "AMF", "SMF", ue_id, {"upf": upf})
        yield from self._msg("MER.12", "SMF", "UPF", ue_id, {"upf": upf, "old_upf": session.serving_upf})
        yield from self._msg("MER.13", "AMF", "CU-T", ue_id, {"cu": target_cu})
        yield from self._msg("MER.14", "CU-T", "UPF", ue_id, {"upf": upf})
        for b in session.bearers:
            yield from self._msg("MER.15", "OERC", "EC", ue_id,
                                 {"ec": chosen[b.bearer_id].ec_element,
                                  "dl_ec": [s.value for s in chosen[b.bearer_id].dl_stack_ec]})
        # new stacks take effect together
        for b in session.bearers:
            new = chosen[b.bearer_id]
            if new.ec_element != b.ec_element:
                rec.relocated[b.bearer_id] = new.ec_element
            b.path = new
            b.flagged = b.bearer_id in flagged
            if b.flagged:
                bound = catalog_lookup(self.catalog, b.class_id).latency_bound_us
                self.violations.append({
                    "ue_id": ue_id, "bearer_id": b.bearer_id, "class_id": b.class_id,
                    "measured_ms": fmt_ms(new.rtt_us), "bound_ms": fmt_ms(bound), "source": "handover",
                })
        if self.awdc is not None:
            for w in replicas.values():
                self.awdc.bind(w)
            self.awdc.handover_done(ue_id, target_edc)
        session.serving_cu = target_cu
        session.serving_upf = upf
        session.state = SessionState.ACTIVE
        self.emit("MER.15", "EC", "UPF", ue_id, {"dl": "switched", "ul": "resumed"})
        rec.success = True
        rec.new_upf = upf
        rec.done_us = self.loop.now_us
        if self.on_complete:
            self.on_complete(session, rec)
        return session

    def _plan_paths(self, session: UeSession, target_cu: str, target_edc: str):
        """Pick new stacks, relocating workloads when the pinned EC cannot serve.

        Yields while replicas finish copying. Returns ``(records, replicas,
        flagged_bearers)``.
        """
        ue_id = session.ue_id
        awdc = self.awdc
        awr = awdc is not None and awdc.mode is not AwrMode.OFF
        pins = {b.bearer_id: b.ec_element for b in session.bearers}
        replicas: dict[int, Workload] = {}

        def per_ue(b: Bearer) -> bool:
            return self._scope(b.app_sid, ue_id) is not None

        def ec_edc(ec: str) -> str:
            return self.registry.record(ec).edc_id

        if awr and awdc.mode is AwrMode.PREDICTIVE:
            for b in session.bearers:
                if not per_ue(b) or ec_edc(b.ec_element) == target_edc:
                    continue
                w = awdc.replica_at((b.app_sid, ue_id), target_edc)
                if w is not None:
                    pins[b.bearer_id] = w.ec_element
                    replicas[b.bearer_id] = w
                    self.emit("AWR.bind", "OERC", "AWDC", ue_id,
                              {"bearer": b.bearer_id, "ec": w.ec_element, "pre_replicated": True})

        def relocate(b: Bearer) -> bool:
            try:
                ec = awdc.ec_in_edc(target_edc, session.provider_id)
            except (NoEcInTargetEdc, CapacityExceeded) as exc:
                self.emit("AWR.unavailable", "AWDC", "OERC", ue_id, {"bearer": b.bearer_id, "reason": str(exc)})
                return False
            w = awdc.replicate_reactive(session, b, ec)
            pins[b.bearer_id] = ec
            replicas[b.bearer_id] = w
            self.emit("AWR.replicate", "OERC", "AWDC", ue_id,
                      {"bearer": b.bearer_id, "from": b.ec_element, "to": ec})
            return True

        if awr and awdc.eager:
            for b in session.bearers:
                if b.bearer_id not in replicas and per_ue(b) and ec_edc(b.ec_element) != target_edc:
                    relocate(b)

        def demands():
            return [BearerDemand(b.bearer_id, b.class_id, None, pins[b.bearer_id]) for b in session.bearers]

        self.oerc.refresh()
        flagged: set[int] = set()
        try:
            chosen = self.oerc.session_paths(target_cu, demands())
        except NoFeasiblePath as exc:
            if not awr:
                raise
            stuck = exc.bearer_ids or tuple(b.bearer_id for b in session.bearers)
            for b in session.bearers:
                if b.bearer_id in stuck and b.bearer_id not in replicas:
                    if not per_ue(b) or not relocate(b):
                        flagged.add(b.bearer_id)
            try:
                chosen = self.oerc.session_paths(target_cu, demands())
                flagged.clear()
            except NoFeasiblePath:
                if not flagged:
                    raise
                chosen = relaxed_session_paths(self.oerc.db, target_cu, demands())
                feasible = {bid for bid, r in chosen.items() if self._meets_class(r)}
                flagged = {bid for bid in chosen if bid not in feasible}
        ready = max((w.ready_at_us for w in replicas.values()), default=self.loop.now_us)
        if ready > self.loop.now_us:
            yield ready - self.loop.now_us
            self.emit("AWR.ready", "AWDC", "OERC", ue_id,
                      {"ecs": sorted({w.ec_element for w in replicas.values()})})
        return chosen, replicas, flagged

    def handover(self, ue_id: str, target_cu: str) -> UeSession:
        return self.loop.run_process(self.handover_proc(ue_id, target_cu), f"handover:{ue_id}")

    # -- data during the handover window -------------------------------------------

    def buffer_dl(self, ue_id: str, packet: Packet) -> bool:
        """Queue a DL packet at the source CU. False if the buffer is full."""
        buf = self.dl_buffer.setdefault(ue_id, [])
        if self.buffer_limit is not None and len(buf) >= self.buffer_limit:
            return False
        buf.append(packet)
        return True

    def hold_ul(self, ue_id: str, item) -> None:
        self.ul_hold.setdefault(ue_id, []).append(item)

    def take_buffers(self, ue_id: str) -> tuple[list[Packet], list]:
        return self.dl_buffer.pop(ue_id, []), self.ul_hold.pop(ue_id, [])


def mer_steps(log: Iterable[dict], ue_id: str | None = None) -> list[int]:
    """Numeric handover steps in log order (first occurrence kept per message)."""
    out = []
    for entry in log:
        step = str(entry["step"])
        if step.startswith("MER.") and (ue_id is None or entry["ue_id"] == ue_id):
            out.append(int(step.split(".")[1]))
    return out


def is_subsequence(needle: Iterable, haystack: Iterable) -> bool:
    it = iter(haystack)
    return all(any(x == y for y in it) for x in needle)


__all__ = [
    "Bearer", "BearerSpec", "ControlPlane", "HandoverEvent", "HandoverRecord",
    "MER_ORDER", "SessionState", "UeSession", "buffer_and_release_dl", "is_subsequence", "mer_steps",
]
