import pytest
from hypothesis import given
from hypothesis import strategies as st

from isnc.errors import ConfigurationError
from isnc.scheduler import DECODED, MISSED, SKIPPED, DecodeTimeEstimator, GenerationPlan, NodeScheduler


def test_deadlines():
    plan = GenerationPlan(start=10.0, playback_delay=1.4, interval=2.0)
    assert plan.deadline(0) == pytest.approx(11.4)
    assert plan.deadline(3) == pytest.approx(17.4)
    assert plan.release(2) == pytest.approx(14.0)


def test_validation():
    with pytest.raises(ConfigurationError):
        GenerationPlan(0, 1, 0)
    with pytest.raises(ConfigurationError):
        DecodeTimeEstimator(alpha=1.0)
    with pytest.raises(ConfigurationError):
        DecodeTimeEstimator().update(-1.0)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=30))
def test_estimator_is_running_mean(xs):
    e = DecodeTimeEstimator()
    for x in xs:
        e.update(x)
    assert e.mean == pytest.approx(sum(xs) / len(xs), rel=1e-9, abs=1e-9)


def test_decoded_then_next_request_at_deadline():
    s = NodeScheduler(GenerationPlan(0.0, 2.0, 1.0), children=[])
    d = s.on_generation_boundary(0.0)
    assert (d.generation, d.skip, d.next_request) == (0, False, 2.0)
    s.on_packet(0, 0.2)
    assert s.on_decoded(0, 0.7)
    assert not s.on_decoded(0, 0.8)
    assert s.status(0) == DECODED
    d = s.on_generation_boundary(2.0)
    assert d.sample == pytest.approx(0.5)
    assert d.next_request == 3.0


def test_skip_when_mean_exceeds_window():
    s = NodeScheduler(GenerationPlan(0.0, 1.0, 1.0), children=[], alpha=2.0)
    s.on_generation_boundary(0.0)
    s.on_packet(0, 0.1)
    # never decoded: sample = alpha * (now - first packet) = 2 * 0.9 = 1.8 > window T_1 - 1 = 1
    d = s.on_generation_boundary(1.0)
    assert d.sample == pytest.approx(1.8)
    assert d.skip and s.status(1) == SKIPPED
    assert s.status(0) == MISSED
    assert s.status(7) == MISSED


def test_skip_disabled():
    s = NodeScheduler(GenerationPlan(0.0, 1.0, 1.0), children=[], alpha=2.0, skipping=False)
    s.on_generation_boundary(0.0)
    s.on_packet(0, 0.1)
    assert not s.on_generation_boundary(1.0).skip


def test_late_decode_is_not_decoded():
    s = NodeScheduler(GenerationPlan(0.0, 1.0, 1.0), children=[])
    s.on_generation_boundary(0.0)
    s.on_packet(0, 0.1)
    s.on_decoded(0, 1.5)
    assert s.status(0) == MISSED


def test_early_advance_waits_for_children():
    s = NodeScheduler(GenerationPlan(0.0, 2.0, 1.0), children=["a", "b"])
    s.on_generation_boundary(0.0)
    s.on_packet(0, 0.1)
    s.on_decoded(0, 0.4)
    assert s.maybe_advance_early(0.5) is None
    s.on_child_feedback("a", 0)
    assert s.maybe_advance_early(0.6) is None
    s.on_child_feedback("b", 0)
    d = s.maybe_advance_early(0.7)
    assert d is not None and d.generation == 1 and d.next_request == 3.0
    # the playback deadline is unaffected by moving the request earlier
    assert s.plan.deadline(1) == 3.0
