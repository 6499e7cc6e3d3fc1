"""Scenario runner: event dispatch, packet accounting and run metrics."""

from __future__ import annotations

import hashlib
import itertools
import json
import random
from collections import Counter
from dataclasses import dataclass, field

from .awdc import Awdc, AwrMode, MobilitySample, WorkloadState
from .errors import PreconditionViolated, WonderError
from .eventloop import Event, EventKind, EventLoop, Process
from .mecd_model import (
    ElementRecord,
    ElementType,
    SidKind,
    _parse_sid,
    _Problems,
    build_registry,
    register_element,
)
from .mobile_control_plane import (
    MER_ORDER,
    BearerSpec,
    ControlPlane,
    HandoverRecord,
    SessionState,
    UeSession,
    is_subsequence,
    mer_steps,
)
from .oer_controller import Oerc
from .scenario import Scenario, ScriptEvent
from .sr_dataplane import (
    Direction,
    Packet,
    Status,
    fail_link,
    format_trace,
    forward,
    latency_us,
    repair_link,
    restore,
    upf_switch,
)
from .timebase import fmt_ms
from .traffic_classes import catalog_lookup


@dataclass
class RunMetrics:
    per_class_rtt: dict[int, list[int]] = field(default_factory=dict)
    ho_interruption_us: list[int] = field(default_factory=list)
    injected: int = 0
    delivered: int = 0
    dropped: Counter = field(default_factory=Counter)
    unexpected_drops: int = 0
    expect_mismatches: list[str] = field(default_factory=list)
    violations: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    hits: int = 0
    misses: int = 0
    first_post_ho_inter_edc_hops: list[int] = field(default_factory=list)
    n9_hops: int = 0
    ip_changes: int = 0
    probes: list[dict] = field(default_factory=list)

    @property
    def in_flight(self) -> int:
        return self.injected - self.delivered - sum(self.dropped.values())

    @property
    def unexpected_failures(self) -> list[dict]:
        return [f for f in self.failures if not f.get("expected")]

    @property
    def exit_code(self) -> int:
        bad = self.violations or self.unexpected_drops or self.expect_mismatches or self.unexpected_failures
        return 1 if bad else 0

    def to_json(self) -> dict:
        return {
            "per_class_rtt_ms": {str(k): [fmt_ms(v) for v in vs] for k, vs in sorted(self.per_class_rtt.items())},
            "ho_interruption_ms": [fmt_ms(v) for v in self.ho_interruption_us],
            "packets": {
                "injected": self.injected,
                "delivered": self.delivered,
                "dropped": dict(sorted(self.dropped.items())),
                "in_flight": self.in_flight,
                "unexpected_drops": self.unexpected_drops,
            },
            "violations": self.violations,
            "failures": self.failures,
            "expect_mismatches": self.expect_mismatches,
            "prediction": {"hits": self.hits, "misses": self.misses},
            "first_post_ho_inter_edc_hops": self.first_post_ho_inter_edc_hops,
            "n9_hops": self.n9_hops,
            "ip_changes": self.ip_changes,
            "probes": self.probes,
            "exit_code": self.exit_code,
        }


@dataclass
class RunResult:
    scenario: Scenario
    metrics: RunMetrics
    signaling: list[dict]
    packets: list[Packet]
    workloads: list[dict]
    sessions: dict[str, UeSession]
    handovers: list[HandoverRecord]
    sim: Simulator

    def signaling_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.signaling)

    def traces_tsv(self) -> str:
        return format_trace(self.packets)

    def workloads_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.workloads)

    def metrics_json(self) -> str:
        return json.dumps(self.metrics.to_json(), indent=2, sort_keys=True) + "\n"

    def digests(self) -> dict[str, str]:
        h = lambda s: hashlib.sha256(s.encode()).hexdigest()  # noqa: E731
        return {
            "signaling": h(self.signaling_jsonl()),
            "traces": h(self.traces_tsv()),
            "workloads": h(self.workloads_jsonl()),
            "metrics": h(self.metrics_json()),
        }


def inter_edc_hops(topology, packet: Packet) -> int:
    """Trace steps whose two elements sit in different EDCs."""
    n = 0
    trace = packet.hop_trace
    for a, b in zip(trace, trace[1:]):
        if a.element_id != b.element_id and topology.edc_of(a.element_id) != topology.edc_of(b.element_id):
            n += 1
    return n


def upf_to_upf_hops(topology, packet: Packet) -> int:
    n = 0
    trace = packet.hop_trace
    for a, b in zip(trace, trace[1:]):
        if a.element_id == b.element_id:
            continue
        if (topology.element(a.element_id).element_type is ElementType.UPF
                and topology.element(b.element_id).element_type is ElementType.UPF):
            n += 1
    return n


class Simulator:
    def __init__(self, scenario: Scenario, seed: int | None = None):
        self.scenario = scenario
        d = scenario.defaults
        self.topology = scenario.topology.copy()
        self.registry = build_registry(self.topology)
        self.catalog = scenario.catalog
        self.loop = EventLoop()
        self.rng = random.Random(scenario.seed if seed is None else seed)
        self.air_rtt_us = d.air_rtt_us
        self.oerc = Oerc(self.topology, self.registry, self.catalog, d.air_rtt_us)
        shared = [a.sid for a in scenario.apps if a.shared]
        self.awdc = Awdc(
            self.loop, self.registry,
            activate_us=d.activate_us, replicate_us=d.replicate_us, slots=d.ec_slots,
            mode=AwrMode(d.awr_mode), eager=d.awr_policy == "eager", threshold=d.predict_threshold,
            grace_us=d.grace_us, horizon_us=d.predict_horizon_us, shared_apps=shared,
        )
        self.cp = ControlPlane(self.loop, self.registry, self.oerc, self.awdc, d.signaling_step_us, d.ho_buffer)
        self.cp.on_complete = self._on_handover_done
        self.metrics = RunMetrics()
        self.packets: list[Packet] = []
        self._awaiting_first: dict[str, HandoverRecord] = {}
        self._expect: dict[int, str | None] = {}  # packet id -> expectation
        self._ids = itertools.count(1)
        self._start_shared_apps()

    # -- setup -------------------------------------------------------------------

    def _start_shared_apps(self) -> None:
        for app in self.scenario.apps:
            if not app.shared or app.sid.kind is SidKind.ANYCAST:
                continue
            for ec in self.registry.hosts(app.sid):
                self.awdc.activate(app.sid, ec, None, delay_us=0)

    def schedule_script(self) -> None:
        for ev in self.scenario.events:
            t = ev.time_us
            if ev.kind is EventKind.SEND_PACKET and self.scenario.defaults.jitter_us:
                t += self.rng.randint(0, self.scenario.defaults.jitter_us)
            self.loop.schedule(t, ev.kind, ev, self._dispatch)

    def run(self) -> RunResult:
        self.schedule_script()
        self.loop.run()
        self._finalize()
        return RunResult(
            self.scenario, self.metrics, list(self.cp.log), list(self.packets), list(self.awdc.ledger),
            dict(self.cp.sessions), list(self.cp.handovers), self,
        )

    # -- dispatch ------------------------------------------------------------------

    def _dispatch(self, event: Event) -> None:
        ev: ScriptEvent = event.payload
        handler = {
            EventKind.ATTACH: self._on_attach,
            EventKind.SEND_PACKET: self._on_send,
            EventKind.MOBILITY_SAMPLE: self._on_sample,
            EventKind.MEASUREMENT_REPORT: self._on_report,
            EventKind.LINK_FAIL: self._on_link_fail,
            EventKind.LINK_RESTORE: self._on_link_restore,
            EventKind.REGISTER_ELEMENT: self._on_register,
            EventKind.INJECT: self._on_inject,
        }[ev.kind]
        try:
            handler(ev)
        except WonderError as exc:
            self._fail(ev, exc)

    def _fail(self, ev: ScriptEvent, exc: BaseException) -> None:
        self.metrics.failures.append({
            "time_ms": fmt_ms(self.loop.now_us),
            "event": ev.index,
            "kind": ev.kind.value,
            "error": type(exc).__name__,
            "message": str(exc),
            "expected": ev.expect == "fail",
        })

    def _watch(self, ev: ScriptEvent, proc: Process) -> None:
        def done(p: Process):
            if p.error is not None:
                if not isinstance(p.error, WonderError):
                    raise p.error
                self._fail(ev, p.error)
            elif ev.expect == "fail":
                self.metrics.expect_mismatches.append(f"event {ev.index} ({ev.kind.value}) was expected to fail")

        proc.on_done(done)

    def _on_attach(self, ev: ScriptEvent) -> None:
        p = ev.payload
        specs = []
        for i, b in enumerate(p.get("bearers", [{"qfi": 5}])):
            qfi = b.get("qfi", 0)
            cid = b.get("class", self.scenario.qfi_map.get(qfi))
            if cid is None:
                raise PreconditionViolated(f"QFI {qfi} has no class mapping")
            app = None
            if b.get("app") is not None:
                probs = _Problems()
                app = _parse_sid(b["app"], "app", probs, SidKind.APP)
                if app is None:
                    raise PreconditionViolated(probs.items[0][1])
                if app not in self.registry.sids():
                    app = self._known_app(app)
            specs.append(BearerSpec(qfi, cid, app, b.get("bearer_id", i + 1)))
        proc = self.loop.spawn(self.cp.attach_proc(p["ue"], p["cu"], specs, p.get("upf_hint")), f"attach:{p['ue']}")
        self._watch(ev, proc)

    def _known_app(self, app):
        for a in self.scenario.apps:
            if a.sid.value == app.value:
                return a.sid
        for s in self.registry.sids():
            if s.value == app.value and s.kind in (SidKind.APP, SidKind.ANYCAST, SidKind.PREFIX):
                return s
        return app

    def _on_report(self, ev: ScriptEvent) -> None:
        p = ev.payload
        proc = self.loop.spawn(self.cp.handover_proc(p["ue"], p["target_cu"]), f"handover:{p['ue']}")
        self._watch(ev, proc)

    def _on_sample(self, ev: ScriptEvent) -> None:
        p = ev.payload
        sample = MobilitySample(p["ue"], self.loop.now_us, p["edc"], p.get("hint"), p.get("neighbor_edc"))
        pred = self.awdc.observe(sample)
        self.cp.emit("AWR.sample", "UE", "AWDC", p["ue"], {"edc": p["edc"], "hint": p.get("hint")})
        if pred is None:
            return
        session = self.cp.sessions.get(p["ue"])
        if session is None or session.state is not SessionState.ACTIVE:
            return
        if pred.predicted_edc == self.topology.edc_of(session.serving_cu):
            return
        targets = []
        for b in session.bearers:
            scope = self.awdc.scope_for(b.app_sid, session.ue_id)
            if scope is None or self.topology.edc_of(b.ec_element) == pred.predicted_edc:
                continue
            if self.awdc.replica_at((b.app_sid, scope), pred.predicted_edc) is not None:
                continue
            try:
                w = self.awdc.replicate_predictive(session, b, pred)
            except WonderError as exc:
                self.cp.emit("AWR.predict-skip", "AWDC", "AWDC", session.ue_id, {"reason": str(exc)})
                continue
            targets.append(w.ec_element)
        if targets:
            self.cp.emit("AWR.predict", "AWDC", "OERC", session.ue_id, {
                "edc": pred.predicted_edc, "confidence": pred.confidence, "ecs": sorted(set(targets)),
            })

    def _on_link_fail(self, ev: ScriptEvent) -> None:
        p = ev.payload
        link_id = p["link"]
        try:
            self.topology.link(link_id)
        except KeyError:
            raise PreconditionViolated(f"unknown link {link_id}") from None
        pending = fail_link(self.topology, link_id)
        self.cp.emit("LINK.fail", "OPTICAL", "OERC", "", {"link": link_id, "protected": pending})
        if pending:
            if p.get("restoration_ms") is not None:
                from .timebase import ms_to_us

                delay = ms_to_us(p["restoration_ms"])
            else:
                delay = self.catalog.protected_restoration_us() or 0
            self.loop.schedule(self.loop.now_us + delay, EventKind.PROTECTION_SWITCH, link_id, self._on_protection_switch)
        else:
            self.oerc.refresh()

    def _on_protection_switch(self, event: Event) -> None:
        link_id = event.payload
        if not self.topology.link(link_id).restoring:
            return
        restore(self.topology, link_id)
        backup = self.topology.backup_for(link_id)
        self.cp.emit("LINK.switch", "OPTICAL", "OERC", "", {"link": link_id, "backup": backup.link_id})
        self.oerc.refresh()

    def _on_link_restore(self, ev: ScriptEvent) -> None:
        link_id = ev.payload["link"]
        try:
            self.topology.link(link_id)
        except KeyError:
            raise PreconditionViolated(f"unknown link {link_id}") from None
        if repair_link(self.topology, link_id):
            self.cp.emit("LINK.repair", "OPTICAL", "OERC", "", {"link": link_id})
            self.oerc.refresh()

    def _on_register(self, ev: ScriptEvent) -> None:
        p = ev.payload
        el = p["element"]
        probs = _Problems()
        sid = _parse_sid(el.get("sid"), "element.sid", probs, SidKind.NODE)
        if sid is None:
            raise PreconditionViolated(probs.items[0][1])
        apps = frozenset(
            a for a in (_parse_sid(x, "element.app_ids", probs, SidKind.APP) for x in el.get("app_ids", []))
            if a is not None
        )
        if self.topology.srv6_prefix is not None:
            sid = sid.with_v6(self.topology.srv6_prefix)
            apps = frozenset(a.with_v6(self.topology.srv6_prefix) for a in apps)
        rec = ElementRecord(el["id"], ElementType(el["type"]), sid, p["edc"], el.get("provider", "default"), apps)
        self.cp.emit("REG.1", "EDC-AGENT", "OERC", "", {"element": rec.element_id, "sid": sid.value, "edc": p["edc"]})
        register_element(self.registry, rec)
        self.topology.add_element(rec)
        self.cp.emit("REG.2", "OERC", "EDC-AGENT", "", {"element": rec.element_id, "result": "ok"})
        self.oerc.refresh()

    # -- data plane ------------------------------------------------------------------

    def _new_packet(self, direction: Direction, stack, ev: ScriptEvent | None, **kw) -> Packet:
        pkt = Packet.new(direction, stack, self.loop.now_us, packet_id=next(self._ids), **kw)
        self.metrics.injected += 1
        self._expect[pkt.packet_id] = ev.expect if ev is not None else None
        self.packets.append(pkt)
        return pkt

    def _settle(self, pkt: Packet, status: Status, reason: str | None) -> None:
        """Count a packet's fate exactly once (final packet object)."""
        expect = self._expect.get(pkt.packet_id)
        if status is Status.DELIVERED:
            self.metrics.delivered += 1
            if expect == "drop":
                self.metrics.expect_mismatches.append(f"packet {pkt.payload_tag or pkt.packet_id} was delivered")
        else:
            self.metrics.dropped[reason or "unknown"] += 1
            if expect != "drop":
                self.metrics.unexpected_drops += 1
        self.metrics.n9_hops += upf_to_upf_hops(self.topology, pkt)

    def _replace(self, old: Packet, new: Packet) -> None:
        idx = next(i for i, p in enumerate(self.packets) if p is old)
        self.packets[idx] = new
        self._expect[new.packet_id] = self._expect.get(old.packet_id)

    def _on_inject(self, ev: ScriptEvent) -> None:
        p = ev.payload
        stack = [self.registry.sid_for_value(v) for v in p["stack"]]
        at = p["at"]
        self.topology.element(at)
        pkt = self._new_packet(Direction(p.get("direction", "UL")), stack, ev, payload_tag=p.get("tag", ""))
        out = forward(self.topology, self.registry, pkt, at)
        self._settle(pkt, out.status, out.reason)

    def _session(self, ue_id: str) -> UeSession:
        s = self.cp.sessions.get(ue_id)
        if s is None:
            raise PreconditionViolated(f"{ue_id} has no session")
        return s

    def _on_send(self, ev: ScriptEvent) -> None:
        p = ev.payload
        session = self._session(p["ue"])
        bearer_id = p.get("bearer", 1)
        session.bearer(bearer_id)
        direction = p.get("direction", "echo")
        tag = p.get("tag", "")
        if session.state is SessionState.HANDING_OVER:
            if direction == "DL":
                self._send_dl_during_ho(session, bearer_id, ev, tag)
            else:
                self.cp.hold_ul(session.ue_id, (direction, bearer_id, ev, tag))
            return
        if session.state is not SessionState.ACTIVE:
            raise PreconditionViolated(f"{session.ue_id} is not active")
        self._send(session, bearer_id, direction, ev, tag)

    def _send(self, session: UeSession, bearer_id: int, direction: str, ev: ScriptEvent | None, tag: str):
        if direction == "UL":
            pkt, ok = self._ul(session, bearer_id, ev, tag)
            self._note_first_post_ho(session, pkt)
        elif direction == "DL":
            self._dl(session, bearer_id, ev, tag, self.loop.now_us)
        elif direction == "echo":
            self.echo_request(session, bearer_id, ev, tag)
        else:
            raise PreconditionViolated(f"unknown direction {direction!r}")

    def _ul(self, session: UeSession, bearer_id: int, ev, tag: str, pkt: Packet | None = None):
        b = session.bearer(bearer_id)
        if pkt is None:
            pkt = self._new_packet(Direction.UL, b.ul_stack_cu, ev, ue_id=session.ue_id, qfi=b.qfi,
                                   bearer_id=bearer_id, payload_tag=tag)
        out = forward(self.topology, self.registry, pkt, session.serving_cu)
        if out.status is Status.DELIVERED:
            new = upf_switch(pkt, out.at_element, session)
            self._replace(pkt, new)
            pkt = new
            out = forward(self.topology, self.registry, pkt, out.at_element)
        self._settle(pkt, out.status, out.reason)
        return pkt, out.status is Status.DELIVERED

    def _dl_to_cu(self, session: UeSession, bearer_id: int, ev, tag: str, start_us: int):
        """EC -> UPF -> CU leg of a DL packet with the session's current stacks."""
        b = session.bearer(bearer_id)
        pkt = Packet.new(Direction.DL, b.dl_stack_ec, start_us, ue_id=session.ue_id, qfi=b.qfi,
                         bearer_id=bearer_id, payload_tag=tag, packet_id=next(self._ids))
        self.metrics.injected += 1
        self._expect[pkt.packet_id] = ev.expect if ev is not None else None
        self.packets.append(pkt)
        out = forward(self.topology, self.registry, pkt, b.ec_element)
        if out.status is Status.DELIVERED:
            new = upf_switch(pkt, out.at_element, session)
            self._replace(pkt, new)
            pkt = new
            out = forward(self.topology, self.registry, pkt, out.at_element)
        return pkt, out

    def _dl(self, session: UeSession, bearer_id: int, ev, tag: str, start_us: int):
        pkt, out = self._dl_to_cu(session, bearer_id, ev, tag, start_us)
        self._settle(pkt, out.status, out.reason)
        return pkt, out.status is Status.DELIVERED

    def _send_dl_during_ho(self, session: UeSession, bearer_id: int, ev, tag: str) -> None:
        pkt, out = self._dl_to_cu(session, bearer_id, ev, tag, self.loop.now_us)
        if out.status is not Status.DELIVERED:
            self._settle(pkt, out.status, out.reason)
            return
        pkt.record(out.at_element, pkt.now_us, "ho-buffer")
        if not self.cp.buffer_dl(session.ue_id, pkt):
            pkt.record(out.at_element, pkt.now_us, "drop:ho-buffer")
            self._settle(pkt, Status.DROPPED, "ho-buffer")

    def echo_request(self, session: UeSession, bearer_id: int, ev: ScriptEvent | None = None, tag: str = "") -> int | None:
        """UL probe to the EC and a mirrored DL reply; returns the RTT in us or None."""
        b = session.bearer(bearer_id)
        tc = catalog_lookup(self.catalog, b.class_id)
        t0 = self.loop.now_us
        ul, ok = self._ul(session, bearer_id, ev, f"{tag}:ul" if tag else "echo:ul")
        self._note_first_post_ho(session, ul)
        probe = {"time_ms": fmt_ms(t0), "ue": session.ue_id, "bearer": bearer_id, "class_id": b.class_id,
                 "tag": tag, "ok": False, "rtt_ms": None}
        self.metrics.probes.append(probe)
        if not ok:
            probe["reason"] = "ul-dropped"
            return None
        dl, ok = self._dl(session, bearer_id, ev, f"{tag}:dl" if tag else "echo:dl", ul.now_us)
        if not ok:
            probe["reason"] = "dl-dropped"
            return None
        rtt = self.air_rtt_us + latency_us(ul) + latency_us(dl)
        probe["ok"] = True
        probe["rtt_ms"] = fmt_ms(rtt)
        self.metrics.per_class_rtt.setdefault(b.class_id, []).append(rtt)
        if rtt > tc.latency_bound_us:
            self.metrics.violations.append({
                "ue_id": session.ue_id, "bearer_id": bearer_id, "class_id": b.class_id,
                "measured_ms": fmt_ms(rtt), "bound_ms": fmt_ms(tc.latency_bound_us), "source": "probe",
            })
        return rtt

    def _note_first_post_ho(self, session: UeSession, pkt: Packet) -> None:
        rec = self._awaiting_first.pop(session.ue_id, None)
        if rec is not None:
            self.metrics.first_post_ho_inter_edc_hops.append(inter_edc_hops(self.topology, pkt))

    # -- handover completion -------------------------------------------------------

    def _on_handover_done(self, session: UeSession, rec: HandoverRecord) -> None:
        dl, ul = self.cp.take_buffers(session.ue_id)
        now = self.loop.now_us
        if rec.success:
            self.metrics.ho_interruption_us.append(rec.interruption_us)
            self._awaiting_first[session.ue_id] = rec
        for pkt in dl:
            # Xn forwarding from the source CU, released when the switch completes
            at = max(now, pkt.now_us)
            if session.serving_cu != pkt.hop_trace[-1].element_id:
                pkt.record(session.serving_cu, at, "xn-release")
            else:
                pkt.record(session.serving_cu, at, "ho-release")
            self._settle(pkt, Status.DELIVERED, None)
        for direction, bearer_id, ev, tag in ul:
            self._send(session, bearer_id, direction, ev, tag)

    # -- end of run ----------------------------------------------------------------------

    def _finalize(self) -> None:
        m = self.metrics
        m.violations = self.cp.violations + m.violations
        m.hits = self.awdc.metrics.hits
        m.misses = self.awdc.metrics.misses
        for s in self.cp.sessions.values():
            if len(s.ip_history) != 1:
                m.ip_changes += 1
        for ue, buf in list(self.cp.dl_buffer.items()):
            if buf:
                m.failures.append({"time_ms": fmt_ms(self.loop.now_us), "event": -1, "kind": "HandoverBuffer",
                                   "error": "InFlight", "message": f"{len(buf)} DL packets still buffered for {ue}",
                                   "expected": False})


def run(scenario: Scenario, seed: int | None = None) -> RunResult:
    return Simulator(scenario, seed).run()


def mer_log_ok(result: RunResult, ue_id: str) -> bool:
    return is_subsequence(MER_ORDER, mer_steps(result.signaling, ue_id))


def active_workloads(result: RunResult) -> list[tuple[int, str | None, str]]:
    return sorted(
        (w.app_sid.value, w.ue_scope, w.ec_element)
        for w in result.sim.awdc.workloads if w.state is WorkloadState.ACTIVE
    )
