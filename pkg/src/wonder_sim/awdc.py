"""Application Workload Distribution Controller (AWDC).

Workloads are keyed by ``(app_sid, ue_scope)``; ``ue_scope`` is ``None`` for
shared applications. Replication is make-before-break: a replica sits in
``Replicating`` until the path switch binds it, at which instant it turns
``Active`` and its predecessor ``Retired``.
"""

from __future__ import annotations

import itertools
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

from .errors import (
    AppNotPresent,
    CapacityExceeded,
    DuplicateSid,
    NoEcInTargetEdc,
    NotAnEc,
    PreconditionViolated,
    UnknownSid,
)
from .eventloop import EventLoop
from .mecd_model import ElementType, SegmentId, SidKind, SidRegistry, resolve_sid
from .timebase import fmt_ms

DEFAULT_ACTIVATE_US = 5_000
DEFAULT_REPLICATE_US = 15_000
DEFAULT_SLOTS = 8
DEFAULT_THRESHOLD = 0.6
DEFAULT_GRACE_US = 50_000
DEFAULT_HORIZON_US = 500_000
#: per-UE bearer workloads default to this AppSid base plus the class id
DEFAULT_APP_BASE = 9500


class WorkloadState(str, Enum):
    ACTIVATING = "Activating"
    ACTIVE = "Active"
    REPLICATING = "Replicating"
    RETIRED = "Retired"


class AwrMode(str, Enum):
    OFF = "off"
    REACTIVE = "reactive"
    PREDICTIVE = "predictive"


WorkloadKey = tuple[SegmentId, "str | None"]


@dataclass
class Workload:
    app_sid: SegmentId
    ue_scope: str | None
    ec_element: str
    state: WorkloadState
    activated_at_us: int | None = None
    ready_at_us: int = 0
    speculative: bool = False
    workload_id: int = 0

    @property
    def key(self) -> WorkloadKey:
        return (self.app_sid, self.ue_scope)


@dataclass(frozen=True)
class MobilitySample:
    ue_id: str
    time_us: int
    current_edc: str
    radio_signal_hint: float | None = None
    neighbor_edc: str | None = None


@dataclass(frozen=True)
class Prediction:
    predicted_edc: str
    confidence: float


class Predictor(Protocol):
    def predict(self, history: Sequence[MobilitySample], horizon_us: int) -> Prediction | None: ...


@dataclass
class TrendPredictor:
    """Least-squares trend of the signal hint over the last ``k`` samples.

    A falling hint means the UE is leaving its cell; the confidence is the
    projected drop over the horizon, clamped to [0, 1]. The target is the
    neighbour EDC named by the newest sample.
    """

    k: int = 3

    def predict(self, history: Sequence[MobilitySample], horizon_us: int) -> Prediction | None:
        if len(history) < 2:
            raise PreconditionViolated("prediction needs at least two samples")
        window = list(history)[-self.k :]
        pts = [(s.time_us / 1000, s.radio_signal_hint) for s in window if s.radio_signal_hint is not None]
        latest = window[-1]
        if len(pts) < 2 or latest.neighbor_edc is None or latest.neighbor_edc == latest.current_edc:
            return None
        n = len(pts)
        mx = sum(x for x, _ in pts) / n
        my = sum(y for _, y in pts) / n
        sxx = sum((x - mx) ** 2 for x, _ in pts)
        if sxx == 0:
            return None
        slope = sum((x - mx) * (y - my) for x, y in pts) / sxx  # hint units per ms
        if slope >= 0:
            return None
        confidence = min(1.0, max(0.0, -slope * horizon_us / 1000))
        return Prediction(latest.neighbor_edc, round(confidence, 6))


def predict_handover(
    history: Sequence[MobilitySample],
    horizon_ms: float,
    predictor: Predictor | None = None,
) -> Prediction | None:
    return (predictor or TrendPredictor()).predict(history, int(round(horizon_ms * 1000)))


@dataclass
class AwdcMetrics:
    hits: int = 0
    misses: int = 0
    replications: int = 0


class Awdc:
    def __init__(
        self,
        loop: EventLoop,
        registry: SidRegistry,
        activate_us: int = DEFAULT_ACTIVATE_US,
        replicate_us: int = DEFAULT_REPLICATE_US,
        slots: int = DEFAULT_SLOTS,
        mode: AwrMode = AwrMode.REACTIVE,
        eager: bool = False,
        threshold: float = DEFAULT_THRESHOLD,
        grace_us: int = DEFAULT_GRACE_US,
        horizon_us: int = DEFAULT_HORIZON_US,
        predictor: Predictor | None = None,
        shared_apps: Iterable[SegmentId] = (),
    ):
        self.loop = loop
        self.registry = registry
        self.activate_us = activate_us
        self.replicate_us = replicate_us
        self.slots = slots
        self.mode = AwrMode(mode)
        self.eager = eager
        self.threshold = threshold
        self.grace_us = grace_us
        self.horizon_us = horizon_us
        self.predictor = predictor or TrendPredictor()
        self.shared_apps = set(shared_apps)
        self.workloads: list[Workload] = []
        self.ledger: list[dict] = []
        self.metrics = AwdcMetrics()
        self.history: dict[str, list[MobilitySample]] = {}
        self._ids = itertools.count(1)
        self._predicted: dict[str, str] = {}  # ue -> predicted EDC with a live speculation

    # -- bookkeeping -----------------------------------------------------------

    def _log(self, w: Workload, state: WorkloadState) -> None:
        w.state = state
        self.ledger.append({
            "time_ms": fmt_ms(self.loop.now_us),
            "app_sid": w.app_sid.value,
            "ue_scope": w.ue_scope,
            "ec": w.ec_element,
            "state": state.value,
        })

    def live(self, key: WorkloadKey | None = None) -> list[Workload]:
        return [
            w for w in self.workloads
            if w.state is not WorkloadState.RETIRED and (key is None or w.key == key)
        ]

    def active(self, key: WorkloadKey) -> Workload | None:
        for w in self.live(key):
            if w.state in (WorkloadState.ACTIVE, WorkloadState.ACTIVATING):
                return w
        return None

    def used_slots(self, ec: str) -> int:
        return sum(1 for w in self.live() if w.ec_element == ec)

    def is_shared(self, app_sid: SegmentId) -> bool:
        return app_sid.kind is SidKind.ANYCAST or app_sid in self.shared_apps

    def scope_for(self, app_sid: SegmentId, ue_id: str) -> str | None:
        return None if self.is_shared(app_sid) else ue_id

    def _check_ec(self, ec: str) -> None:
        if self.registry.record(ec).element_type is not ElementType.EC:
            raise NotAnEc(f"{ec} is not an Edge Compute element")
        if self.used_slots(ec) >= self.slots:
            raise CapacityExceeded(f"{ec} has no free workload slot ({self.slots} in use)")

    # -- operations --------------------------------------------------------------

    def activate(self, app_sid: SegmentId, ec_element: str, ue_scope: str | None, delay_us: int | None = None) -> Workload:
        """Start a workload; it turns Active after the activation delay."""
        for w in self.live((app_sid, ue_scope)):
            if w.ec_element == ec_element:
                return w
        if self.registry.record(ec_element).element_type is not ElementType.EC:
            raise NotAnEc(f"{ec_element} is not an Edge Compute element")
        if not self.is_shared(app_sid) and self.active((app_sid, ue_scope)) is not None:
            raise PreconditionViolated(f"app {app_sid.value} already active for {ue_scope}; replicate instead")
        self._check_ec(ec_element)
        delay = self.activate_us if delay_us is None else delay_us
        w = Workload(app_sid, ue_scope, ec_element, WorkloadState.ACTIVATING,
                     ready_at_us=self.loop.now_us + delay, workload_id=next(self._ids))
        self.workloads.append(w)
        self._log(w, WorkloadState.ACTIVATING)

        def done():
            if w.state is WorkloadState.ACTIVATING:
                w.activated_at_us = self.loop.now_us
                self._log(w, WorkloadState.ACTIVE)
                if ue_scope is None and app_sid.kind is not SidKind.ANYCAST:
                    self._bind_shared(app_sid, ec_element)

        if delay == 0:
            done()
        else:
            self.loop.call_at(w.ready_at_us, done)
        return w

    def _bind_shared(self, app_sid: SegmentId, ec: str) -> None:
        try:
            self.registry.bind_app(app_sid, ec)
        except DuplicateSid:
            pass  # already served by another host; keep the static binding

    def replicate(self, app_sid: SegmentId, ue_scope: str | None, target_ec: str, speculative: bool = False) -> Workload:
        """Copy a workload to ``target_ec``; ready after the replication delay."""
        key = (app_sid, ue_scope)
        for w in self.live(key):
            if w.ec_element == target_ec:
                return w
        self._check_ec(target_ec)
        w = Workload(app_sid, ue_scope, target_ec, WorkloadState.REPLICATING,
                     ready_at_us=self.loop.now_us + self.replicate_us,
                     speculative=speculative, workload_id=next(self._ids))
        self.workloads.append(w)
        self.metrics.replications += 1
        self._log(w, WorkloadState.REPLICATING)
        return w

    def bind(self, replica: Workload) -> None:
        """Make-before-break cut-over: replica Active, then its predecessors Retired."""
        if replica.state is WorkloadState.RETIRED:
            raise PreconditionViolated("cannot bind a retired workload")
        if self.loop.now_us < replica.ready_at_us:
            raise PreconditionViolated("replica is not ready yet")
        if replica.state is not WorkloadState.ACTIVE:
            replica.activated_at_us = self.loop.now_us
            replica.speculative = False
            self._log(replica, WorkloadState.ACTIVE)
        for w in self.live(replica.key):
            if w is not replica and w.state is not WorkloadState.REPLICATING:
                self._log(w, WorkloadState.RETIRED)

    def retire(self, w: Workload) -> None:
        if w.state is not WorkloadState.RETIRED:
            self._log(w, WorkloadState.RETIRED)

    def ec_in_edc(self, edc_id: str, provider: str | None = None) -> str:
        ecs = [
            r.element_id for r in self.registry.by_type(ElementType.EC, edc_id)
            if r.sid.kind is not SidKind.ANYCAST and (provider is None or r.provider_id == provider)
        ]
        free = [e for e in ecs if self.used_slots(e) < self.slots]
        if not ecs:
            raise NoEcInTargetEdc(f"{edc_id} has no Edge Compute")
        if not free:
            raise CapacityExceeded(f"every EC in {edc_id} is full")
        return free[0]

    def replica_at(self, key: WorkloadKey, edc_id: str) -> Workload | None:
        for w in self.live(key):
            if self.registry.record(w.ec_element).edc_id == edc_id:
                return w
        return None

    # -- shared applications (inter-working) ---------------------------------------

    def resolve_shared_app(self, app_sid: SegmentId, cu: str) -> str:
        """Hosting EC for a shared app; provider boundaries are ignored for the EC."""
        try:
            hosts = self.registry.hosts(app_sid)
        except UnknownSid:
            hosts = []
        if not hosts:
            raise AppNotPresent(f"application SID {app_sid.value} is hosted nowhere")
        if app_sid.kind is SidKind.ANYCAST:
            return resolve_sid(self.registry, app_sid, cu)
        return hosts[0]

    # -- prediction -------------------------------------------------------------------

    def observe(self, sample: MobilitySample) -> Prediction | None:
        hist = self.history.setdefault(sample.ue_id, [])
        hist.append(sample)
        if self.mode is not AwrMode.PREDICTIVE or len(hist) < 2:
            return None
        pred = self.predictor.predict(hist, self.horizon_us)
        if pred is None or pred.confidence < self.threshold:
            return None
        return pred

    def speculate(self, ue_id: str, keys: Iterable[WorkloadKey], target_edc: str, provider: str | None) -> list[Workload]:
        """Pre-replicate the UE's per-UE workloads into ``target_edc``."""
        out = []
        for app_sid, scope in keys:
            if scope is None:
                continue
            if self.replica_at((app_sid, scope), target_edc) is not None:
                continue
            try:
                ec = self.ec_in_edc(target_edc, provider)
            except (NoEcInTargetEdc, CapacityExceeded):
                continue
            out.append(self.replicate(app_sid, scope, ec, speculative=True))
        if out:
            self._predicted[ue_id] = target_edc
        return out

    def handover_done(self, ue_id: str, target_edc: str) -> None:
        """Settle speculation once the UE's actual target EDC is known."""
        predicted = self._predicted.pop(ue_id, None)
        if predicted is None:
            return
        if predicted == target_edc:
            self.metrics.hits += 1
            return
        self.metrics.misses += 1
        stale = [w for w in self.live() if w.ue_scope == ue_id and w.speculative]
        due = self.loop.now_us + self.grace_us

        def expire():
            for w in stale:
                if w.speculative and w.state is WorkloadState.REPLICATING:
                    self.retire(w)

        self.loop.call_at(due, expire)

    # -- per-bearer entry points used by the handover procedure -----------------------

    def replicate_reactive(self, session, bearer, target_ec: str) -> Workload:
        return self.replicate(bearer.app_sid, self.scope_for(bearer.app_sid, session.ue_id), target_ec)

    def replicate_predictive(self, session, bearer, prediction: Prediction) -> Workload:
        if prediction.confidence < self.threshold:
            raise PreconditionViolated(
                f"confidence {prediction.confidence} below threshold {self.threshold}"
            )
        ec = self.ec_in_edc(prediction.predicted_edc, session.provider_id)
        w = self.replicate(bearer.app_sid, self.scope_for(bearer.app_sid, session.ue_id), ec, speculative=True)
        self._predicted[session.ue_id] = prediction.predicted_edc
        return w
