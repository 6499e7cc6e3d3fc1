import pytest

from wonder_sim.awdc import Awdc, AwrMode, WorkloadState
from wonder_sim.errors import (
    AttachFailed, HandoverFailed, IpReassignment, PreconditionViolated, UnknownClass,
)
from wonder_sim.eventloop import EventLoop
from wonder_sim.mecd_model import SegmentId, SidKind
from wonder_sim.mobile_control_plane import (
    MER_ORDER, BearerSpec, ControlPlane, SessionState, UeSession, buffer_and_release_dl,
    is_subsequence, mer_steps,
)
from wonder_sim.oer_controller import Oerc
from wonder_sim.sr_dataplane import Direction, Packet
from wonder_sim.traffic_classes import DEFAULT_CATALOG


def make_cp(topo, reg, mode=AwrMode.REACTIVE, awdc=True, **kw):
    loop = EventLoop()
    oerc = Oerc(topo, reg, DEFAULT_CATALOG, 2000)
    ctl = Awdc(loop, reg, mode=mode) if awdc else None
    return ControlPlane(loop, reg, oerc, ctl, **kw)


def steps(cp, prefix):
    return [e["step"] for e in cp.log if e["step"].startswith(prefix)]


def test_attach_signaling_and_session(mecd5, reg5):
    cp = make_cp(mecd5, reg5)
    s = cp.attach("ue-1", "cu-1", [BearerSpec(5, 0)])
    assert s.state is SessionState.ACTIVE and s.ue_ip == "ip-1" and s.serving_upf == "upf-1"
    b = s.bearer(1)
    assert b.ec_element == "ec-1" and b.path.rtt_us == 2200
    assert b.app_sid == SegmentId(9500, SidKind.APP)
    seq = steps(cp, "OER")
    assert seq[0] == "OER.1" and seq.count("OER.3") == 1 and seq[-1] == "OER.5"
    assert seq.index("OER.4") > seq.index("OER.3")
    # OER.4 and the final OER.5 are logged without a signaling wait
    assert cp.loop.now_us == (len(seq) - 2) * 1000
    (w,) = cp.awdc.live()
    assert w.ec_element == "ec-1" and w.ue_scope == "ue-1"


def test_attach_rejections(mecd5, reg5):
    cp = make_cp(mecd5, reg5)
    with pytest.raises(AttachFailed):
        cp.attach("ue-3", "cu-3", [BearerSpec(5, 0)])  # no protected route out of edc-3
    assert "ue-3" not in cp.sessions
    assert cp.log[-1]["detail"]["result"] == "reject"
    with pytest.raises(PreconditionViolated):
        cp.attach("ue-4", "cu-1", [BearerSpec(5, 0), BearerSpec(5, 1)])
    with pytest.raises(UnknownClass):
        cp.attach("ue-4", "cu-1", [BearerSpec(7, 4)])
    with pytest.raises(PreconditionViolated):
        cp.attach("ue-5", "upf-1", [BearerSpec(5, 0)])
    cp.attach("ue-6", "cu-1", [BearerSpec(9, 1)])
    with pytest.raises(PreconditionViolated):
        cp.attach("ue-6", "cu-2", [BearerSpec(9, 1)])


def test_ip_is_assigned_once():
    s = UeSession("ue-1", "cu-1")
    s.ue_ip = "ip-7"
    with pytest.raises(IpReassignment):
        s.ue_ip = "ip-8"
    assert s.ip_history == ["ip-7"]


def test_handover_keeps_ip_and_orders_mer_steps(mecd5, reg5):
    cp = make_cp(mecd5, reg5)
    s = cp.attach("ue-1", "cu-1", [BearerSpec(9, 1)])
    t0 = cp.loop.now_us
    cp.handover("ue-1", "cu-2")
    assert s.ue_ip == "ip-1" and s.ip_history == ["ip-1"]
    assert s.serving_cu == "cu-2" and s.serving_upf == "upf-2"
    assert s.bearer(1).ec_element == "ec-1"  # class 1 still fits, no relocation
    got = mer_steps(cp.log, "ue-1")
    assert is_subsequence(MER_ORDER, got)
    assert got.count(4) == 2
    (rec,) = cp.handovers
    assert rec.success and rec.event.trigger_time_us == t0 and rec.interruption_us == 11_000


def test_reactive_relocation_replicates_then_binds(mecd5, reg5):
    cp = make_cp(mecd5, reg5)
    s = cp.attach("ue-1", "cu-1", [BearerSpec(5, 0)])
    cp.loop.run()  # activation settles
    cp.handover("ue-1", "cu-2")
    assert s.bearer(1).ec_element == "ec-2"
    assert cp.handovers[0].interruption_us == 26_000
    assert cp.handovers[0].relocated == {1: "ec-2"}
    by_ec = {w.ec_element: w.state for w in cp.awdc.workloads}
    assert by_ec == {"ec-1": WorkloadState.RETIRED, "ec-2": WorkloadState.ACTIVE}
    assert "AWR.replicate" in steps(cp, "AWR") and "AWR.ready" in steps(cp, "AWR")


def test_handover_rolls_back_when_no_path(mecd5, reg5):
    cp = make_cp(mecd5, reg5, mode=AwrMode.OFF)
    s = cp.attach("ue-1", "cu-1", [BearerSpec(5, 0)])
    before = [b.path for b in s.bearers]
    with pytest.raises(HandoverFailed):
        cp.handover("ue-1", "cu-2")
    assert s.state is SessionState.ACTIVE and s.serving_cu == "cu-1"
    assert [b.path for b in s.bearers] == before
    assert not cp.handovers[0].success and cp.handovers[0].error


def test_unrelocatable_bearer_is_flagged(mecd5, reg5):
    # edc-3 has no EC and no protected exit: the class 0 bearer keeps an
    # unprotected relaxed path and is reported
    cp = make_cp(mecd5, reg5)
    s = cp.attach("ue-1", "cu-1", [BearerSpec(5, 0)])
    cp.loop.run()
    cp.handover("ue-1", "cu-3")
    b = s.bearer(1)
    assert b.flagged and not b.path.protected and b.path.rtt_us == 5100
    (v,) = cp.violations
    assert v["source"] == "handover" and v["class_id"] == 0
    assert "AWR.unavailable" in steps(cp, "AWR")


def test_handover_preconditions(mecd5, reg5):
    cp = make_cp(mecd5, reg5)
    with pytest.raises(PreconditionViolated):
        cp.handover("ghost", "cu-2")
    cp.attach("ue-1", "cu-1", [BearerSpec(9, 1)])
    with pytest.raises(PreconditionViolated):
        cp.handover("ue-1", "cu-1")
    with pytest.raises(PreconditionViolated):
        cp.handover("ue-1", "ec-2")


def test_buffer_and_release(mecd5, reg5):
    s = UeSession("ue-1", "cu-1")
    pkts = [Packet(Direction.DL, (), 0, created_at_us=i, packet_id=i) for i in range(5)]
    with pytest.raises(PreconditionViolated):
        buffer_and_release_dl(s, pkts, 10)
    s.state = SessionState.HANDING_OVER
    released, dropped = buffer_and_release_dl(s, pkts, 10)
    assert released == pkts and dropped == []
    released, dropped = buffer_and_release_dl(s, pkts, 10, limit=3)
    assert [p.packet_id for p in released] == [0, 1, 2]
    assert [p.packet_id for p in dropped] == [3, 4]
    assert dropped[0].hop_trace[-1].event == "drop:ho-buffer"

    cp = make_cp(mecd5, reg5, buffer_limit=1)
    assert cp.buffer_dl("ue-1", pkts[0]) and not cp.buffer_dl("ue-1", pkts[1])
    cp.hold_ul("ue-1", "ul")
    assert cp.take_buffers("ue-1") == ([pkts[0]], ["ul"])
    assert cp.take_buffers("ue-1") == ([], [])


def test_is_subsequence():
    assert is_subsequence([1, 3], [1, 2, 3])
    assert not is_subsequence([3, 1], [1, 2, 3])
    assert is_subsequence([], [])
