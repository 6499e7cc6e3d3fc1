import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wonder_sim.awdc import (
    Awdc, AwrMode, MobilitySample, Prediction, TrendPredictor, WorkloadState, predict_handover,
)
from wonder_sim.errors import (
    AppNotPresent, CapacityExceeded, NoEcInTargetEdc, NotAnEc, PreconditionViolated,
)
from wonder_sim.eventloop import EventLoop
from wonder_sim.mecd_model import SegmentId, SidKind, build_registry, load_topology

from conftest import fixture_text

APP = SegmentId(9501, SidKind.APP)


@pytest.fixture
def ctl(reg5):
    return Awdc(EventLoop(), reg5)


def samples(hints, t0=100, step=100, edc="edc-1", nb="edc-2"):
    return [MobilitySample("ue-1", (t0 + i * step) * 1000, edc, h, nb) for i, h in enumerate(hints)]


def states(ctl):
    return [(r["time_ms"], r["ec"], r["state"]) for r in ctl.ledger]


def test_activation_takes_the_configured_delay(ctl):
    w = ctl.activate(APP, "ec-1", "ue-1")
    assert w.state is WorkloadState.ACTIVATING
    ctl.loop.run()
    assert w.state is WorkloadState.ACTIVE and w.activated_at_us == 5000
    assert states(ctl) == [("0.000", "ec-1", "Activating"), ("5.000", "ec-1", "Active")]


def test_activate_is_idempotent_per_host(ctl):
    a = ctl.activate(APP, "ec-1", "ue-1")
    assert ctl.activate(APP, "ec-1", "ue-1") is a
    with pytest.raises(PreconditionViolated):
        ctl.activate(APP, "ec-2", "ue-1")


def test_activate_rejects_non_ec_and_full_ec(reg5):
    ctl = Awdc(EventLoop(), reg5, slots=2)
    with pytest.raises(NotAnEc):
        ctl.activate(APP, "upf-1", "ue-1")
    ctl.activate(APP, "ec-1", "ue-1")
    ctl.activate(APP, "ec-1", "ue-2")
    with pytest.raises(CapacityExceeded):
        ctl.activate(APP, "ec-1", "ue-3")


def test_make_before_break_replication(ctl):
    src = ctl.activate(APP, "ec-1", "ue-1", delay_us=0)
    rep = ctl.replicate(APP, "ue-1", "ec-2")
    assert rep.state is WorkloadState.REPLICATING and rep.ready_at_us == 15_000
    with pytest.raises(PreconditionViolated):
        ctl.bind(rep)  # not ready
    ctl.loop.run(until_us=15_000)
    # both instances alive until the cut-over
    assert {w.ec_element for w in ctl.live()} == {"ec-1", "ec-2"}
    ctl.bind(rep)
    assert rep.state is WorkloadState.ACTIVE and src.state is WorkloadState.RETIRED
    assert states(ctl)[-2:] == [("15.000", "ec-2", "Active"), ("15.000", "ec-1", "Retired")]
    with pytest.raises(PreconditionViolated):
        ctl.bind(src)


def test_replica_counts_against_capacity(reg5):
    ctl = Awdc(EventLoop(), reg5, slots=1)
    ctl.activate(APP, "ec-2", "ue-9", delay_us=0)
    ctl.activate(APP, "ec-1", "ue-1", delay_us=0)
    with pytest.raises(CapacityExceeded):
        ctl.replicate(APP, "ue-1", "ec-2")


def test_ec_in_edc(ctl):
    assert ctl.ec_in_edc("edc-2") == "ec-2"
    assert ctl.ec_in_edc("edc-5", provider="ap-1") == "ec-5"
    with pytest.raises(NoEcInTargetEdc):
        ctl.ec_in_edc("edc-3")
    with pytest.raises(NoEcInTargetEdc):
        ctl.ec_in_edc("edc-5", provider="mnp-1")


def test_shared_app_resolution(ctl):
    assert ctl.resolve_shared_app(SegmentId(9200, SidKind.APP), "cu-1") == "ec-5"
    assert ctl.resolve_shared_app(SegmentId(9000, SidKind.ANYCAST), "cu-3") == "ec-4"
    with pytest.raises(AppNotPresent):
        ctl.resolve_shared_app(SegmentId(9300, SidKind.APP), "cu-1")
    assert ctl.scope_for(SegmentId(9000, SidKind.ANYCAST), "ue-1") is None
    assert ctl.scope_for(APP, "ue-1") == "ue-1"


def test_trend_predictor_confidence():
    # slope -0.06 hint/ms over a 500 ms horizon -> 30 -> clamped to 1
    pred = predict_handover(samples([-70, -76, -82]), 500)
    assert pred == Prediction("edc-2", 1.0)
    # gentle slope: -0.001/ms * 500 ms
    assert predict_handover(samples([-70, -70.1, -70.2]), 500) == Prediction("edc-2", 0.5)
    assert predict_handover(samples([-80, -75]), 500) is None  # improving signal
    assert predict_handover(samples([-70, -80], nb=None), 500) is None
    with pytest.raises(PreconditionViolated):
        TrendPredictor().predict(samples([-70]), 500_000)


def test_predictor_uses_only_last_k_samples():
    # old samples rise, recent ones fall
    hist = samples([-90, -80, -70, -70.1, -70.2])
    assert TrendPredictor(k=3).predict(hist, 500_000).confidence == pytest.approx(0.5)


def test_observe_respects_mode_and_threshold(reg5):
    reactive = Awdc(EventLoop(), reg5)
    predictive = Awdc(EventLoop(), reg5, mode=AwrMode.PREDICTIVE)
    for s in samples([-70, -70.1, -70.2]):
        assert reactive.observe(s) is None
        out = predictive.observe(s)
    assert out is None  # 0.5 < 0.6
    assert predictive.observe(MobilitySample("ue-1", 400_000, "edc-1", -88, "edc-2")).predicted_edc == "edc-2"


def test_speculation_hit(ctl):
    ctl.activate(APP, "ec-1", "ue-1", delay_us=0)
    (replica,) = ctl.speculate("ue-1", [(APP, "ue-1")], "edc-2", "mnp-1")
    assert replica.speculative
    ctl.loop.run(until_us=20_000)
    ctl.handover_done("ue-1", "edc-2")
    assert ctl.metrics.hits == 1 and ctl.metrics.misses == 0
    ctl.bind(replica)
    assert not replica.speculative


def test_speculation_miss_retires_after_grace(ctl):
    ctl.activate(APP, "ec-1", "ue-1", delay_us=0)
    (replica,) = ctl.speculate("ue-1", [(APP, "ue-1")], "edc-2", "mnp-1")
    ctl.loop.run(until_us=30_000)
    ctl.handover_done("ue-1", "edc-4")
    assert ctl.metrics.misses == 1 and replica.state is WorkloadState.REPLICATING
    ctl.loop.run()
    assert replica.state is WorkloadState.RETIRED
    assert states(ctl)[-1] == ("80.000", "ec-2", "Retired")


def test_speculation_skips_shared_and_unplaceable(ctl):
    shared = (SegmentId(9000, SidKind.ANYCAST), None)
    assert ctl.speculate("ue-1", [shared, (APP, "ue-1")], "edc-3", "mnp-1") == []
    ctl.handover_done("ue-1", "edc-3")  # nothing predicted, nothing counted
    assert (ctl.metrics.hits, ctl.metrics.misses) == (0, 0)


def test_predictive_replication_below_threshold(ctl):
    class S:
        ue_id, provider_id = "ue-1", "mnp-1"

    class B:
        app_sid = APP

    with pytest.raises(PreconditionViolated):
        ctl.replicate_predictive(S, B, Prediction("edc-2", 0.59))
    w = ctl.replicate_predictive(S, B, Prediction("edc-2", 0.6))
    assert w.ec_element == "ec-2" and w.speculative


ops = st.lists(
    st.tuples(st.sampled_from(["act", "rep", "bind", "tick"]),
              st.sampled_from(["ue-1", "ue-2"]),
              st.sampled_from(["ec-1", "ec-2", "ec-4", "ec-5"])),
    max_size=25,
)


@settings(max_examples=60, deadline=None)
@given(ops)
def test_at_most_one_active_instance_per_key(script):
    ctl = Awdc(EventLoop(), build_registry(load_topology(fixture_text("mecd5"))), slots=3)
    for op, ue, ec in script:
        try:
            if op == "act":
                ctl.activate(APP, ec, ue)
            elif op == "rep":
                ctl.replicate(APP, ue, ec)
            elif op == "bind":
                for w in ctl.live((APP, ue)):
                    if w.state is WorkloadState.REPLICATING and ctl.loop.now_us >= w.ready_at_us:
                        ctl.bind(w)
                        break
            else:
                ctl.loop.run(until_us=ctl.loop.now_us + 10_000)
        except (PreconditionViolated, CapacityExceeded):
            pass
        for key_ue in ("ue-1", "ue-2"):
            live = ctl.live((APP, key_ue))
            assert sum(w.state in (WorkloadState.ACTIVE, WorkloadState.ACTIVATING) for w in live) <= 1
        for e in ("ec-1", "ec-2", "ec-4", "ec-5"):
            assert ctl.used_slots(e) <= 3
