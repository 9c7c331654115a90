import math

import numpy as np
import pytest

from labeling_fixtures import make_bundle
from planted import PLANTED, PLANTED_EDGES, planted_pairs
from pdptwin.errors import NoSegments, TraceRejected
from pdptwin.labeling import EventTrace
from pdptwin.learner import (
    FittedDynamics,
    LearnConfig,
    Segment,
    assemble_sha,
    complete_with_sink,
    fit_flow,
    learn_patient,
    merge_locations,
    predict_tv,
    provenance_csv,
    segment,
    standard_alphabet,
)
from pdptwin.sha import compose_network, fire


def seg_with(a, b, start=0.0, n=10, x0=400.0, trace_index=0, entry=None, exit=None):
    samples = []
    x = x0
    for i in range(n):
        samples.append((start + i, x))
        if a == 0:
            x = x + b
        else:
            eq = -b / a
            x = eq + (x - eq) * math.exp(a)
    return Segment(start, start + n - 1, samples, entry, exit, trace_index)


# ---------------------------------------------------------------------------
# segmentation


def test_segment_counts_inter_event_intervals():
    bundle = make_bundle(n=31)
    trace = EventTrace([(10.0, "FIOX^up"), (20.0, "PEEP^up")])
    segs, dropped = segment(bundle, trace)
    assert len(segs) == 3 and dropped == 0
    assert [s.entry_event for s in segs] == [None, "FIOX^up", "PEEP^up"]
    assert [s.exit_event for s in segs] == ["FIOX^up", "PEEP^up", None]


def test_segment_empty_trace_spans_bundle():
    segs, dropped = segment(make_bundle(n=20), EventTrace([]))
    assert len(segs) == 1 and dropped == 0
    assert (segs[0].start, segs[0].end) == (0.0, 19.0)


def test_segment_all_short_raises():
    bundle = make_bundle(n=6)
    trace = EventTrace([(float(t), "FIOX^up") for t in range(1, 6)])
    with pytest.raises(NoSegments):
        segment(bundle, trace)


# ---------------------------------------------------------------------------
# flow fitting


def test_fit_linear_ramp():
    fit = fit_flow(seg_with(0.0, 2.0, x0=0.0))
    assert abs(fit.a) < 1e-6 and abs(fit.b - 2.0) < 1e-6


def test_fit_constant_degenerate():
    fit = fit_flow(seg_with(0.0, 0.0, x0=400.0))
    assert fit.degenerate and fit.a == 0.0 and fit.b == 0.0


def test_fit_exponential_decay():
    samples = [(float(t), 100.0 * math.exp(-0.1 * t)) for t in range(40)]
    fit = fit_flow(Segment(0.0, 39.0, samples, None, None))
    assert abs(fit.a - (-0.1)) < 0.01
    assert fit.residual_std < 1e-6


# ---------------------------------------------------------------------------
# merging


def test_merge_identical_dynamics():
    fitted = [(seg_with(0, 2), FittedDynamics(0.0, 2.0, 0, 10)),
              (seg_with(0, 2, start=20), FittedDynamics(0.0, 2.0, 0, 10))]
    assert len(merge_locations(fitted)) == 1


def test_merge_respects_tolerance():
    fitted = [(seg_with(0, 2), FittedDynamics(0.0, 2.0, 0, 10)),
              (seg_with(0, 50, start=20), FittedDynamics(0.0, 50.0, 0, 10))]
    assert len(merge_locations(fitted, tol_b=1.0)) == 2


def test_merge_recovers_three_planted_groups():
    rng = np.random.default_rng(0)
    fitted = []
    for rep in range(2):
        for k, (a, b) in enumerate(PLANTED):
            jitter_a = rng.normal(0, 0.001)
            jitter_b = rng.normal(0, 0.2)
            fitted.append(
                (seg_with(a, b, start=100 * rep + 20 * k, x0=450.0),
                 FittedDynamics(a + jitter_a, b + jitter_b, 0.1, 10))
            )
    assert len(merge_locations(fitted)) == 3


# ---------------------------------------------------------------------------
# assembly and completion


def test_assemble_single_edge():
    fitted = [
        (seg_with(0, 2, n=10, entry=None, exit="FIOX^up"), FittedDynamics(0, 2, 0, 10)),
        (seg_with(0, 50, start=9, n=10, entry="FIOX^up", exit=None), FittedDynamics(0, 50, 0, 10)),
    ]
    groups = merge_locations(fitted, tol_b=1.0)
    learned = assemble_sha(fitted, groups)
    assert len(learned.sha.edges) == 1
    e = learned.sha.edges[0]
    assert (e.src, e.action, e.dst) == ("q0", "FIOX^up", "q1")


def test_assemble_deduplicates_repeated_pattern():
    fitted = []
    t = 0.0
    pattern = [(0.0, 2.0, "FIOX^up"), (0.0, 50.0, "PEEP^up")] * 3
    for k, (a, b, exit_event) in enumerate(pattern):
        entry = pattern[k - 1][2] if k else None
        fitted.append(
            (seg_with(a, b, start=t, n=10, entry=entry, exit=exit_event),
             FittedDynamics(a, b, 0, 10))
        )
        t += 9
    groups = merge_locations(fitted, tol_b=1.0)
    learned = assemble_sha(fitted, groups)
    assert len(groups) == 2
    assert {(e.src, e.action, e.dst) for e in learned.sha.edges} == {
        ("q0", "FIOX^up", "q1"),
        ("q1", "PEEP^up", "q0"),
    }


def test_completion_totality():
    learned = learn_patient(planted_pairs(5), LearnConfig())
    alphabet = standard_alphabet()
    network = compose_network([learned.sha], strict=False)
    for loc in learned.sha.locations:
        for event in alphabet:
            config = network.initial_configuration(None, noise=False)
            config.locations = (loc.id,)
            after = fire(network, config, event, rng=np.random.default_rng(0),
                         require_emitter=False)
            assert after.locations[0] is not None


def test_sink_absorbs_everything():
    learned = learn_patient(planted_pairs(3))
    sink_edges = [e for e in learned.sha.edges if e.src == "sink"]
    assert {e.action for e in sink_edges} == set(standard_alphabet())
    assert all(e.dst == "sink" for e in sink_edges)


# ---------------------------------------------------------------------------
# round trip against the planted model


def test_round_trip_recovers_planted_model():
    learned = learn_patient(planted_pairs(50))
    assert len(learned.non_sink_locations()) == 3
    cfg = LearnConfig()
    recovered = []
    for loc_id in learned.non_sink_locations():
        fc = learned.sha.location(loc_id).flows["TV"]
        recovered.append((fc.a, fc.b))
    for a, b in PLANTED:
        match = min(recovered, key=lambda ab: abs(ab[0] - a) + abs(ab[1] - b) / 100)
        assert abs(match[0] - a) <= cfg.tol_a
        assert abs(match[1] - b) <= cfg.tol_b
    # edge set equals the planted edges restricted to observed events
    by_dynamics = {}
    for loc_id in learned.non_sink_locations():
        fc = learned.sha.location(loc_id).flows["TV"]
        planted_idx = min(range(3), key=lambda k: abs(PLANTED[k][0] - fc.a) + abs(PLANTED[k][1] - fc.b) / 100)
        by_dynamics[loc_id] = planted_idx
    non_sink_edges = {
        (by_dynamics[e.src], e.action, by_dynamics[e.dst])
        for e in learned.sha.edges
        if e.dst != "sink" and e.src != "sink"
    }
    expected = {(src, ev, dst) for (src, dst), ev in PLANTED_EDGES.items()}
    assert non_sink_edges == expected


def test_monotone_data_benefit():
    few = learn_patient(planted_pairs(25))
    many = learn_patient(planted_pairs(50))
    spurious_few = max(len(few.non_sink_locations()) - 3, 0)
    spurious_many = max(len(many.non_sink_locations()) - 3, 0)
    assert spurious_many <= spurious_few


# ---------------------------------------------------------------------------
# prediction


def learned_flat(b=0.0):
    fitted = [(seg_with(0.0, b, n=10, x0=400.0), FittedDynamics(0.0, b, 0, 10))]
    learned = assemble_sha(fitted, [[0]])
    return complete_with_sink(learned, standard_alphabet())


def test_predict_empty_trace_holds_initial():
    assert predict_tv(learned_flat(0.0), None, EventTrace([]), 100.0, 400.0) == 400.0


def test_predict_linear_flow():
    assert predict_tv(learned_flat(2.0), None, EventTrace([]), 10.0, 400.0) == pytest.approx(420.0)


def test_predict_is_deterministic():
    learned = learn_patient(planted_pairs(10))
    trace = EventTrace([(5.0, "FIOX^up"), (15.0, "PEEP^up")])
    a = predict_tv(learned, None, trace, 30.0, 400.0)
    b = predict_tv(learned, None, trace, 30.0, 400.0)
    assert a == b


def test_predict_rejects_unknown_event():
    fitted = [(seg_with(0.0, 0.0, n=10), FittedDynamics(0.0, 0.0, 0, 10))]
    pre_completion = assemble_sha(fitted, [[0]])
    with pytest.raises(TraceRejected):
        predict_tv(pre_completion, None, EventTrace([(1.0, "on")]), 10.0)


def test_provenance_csv_shape():
    learned = learn_patient(planted_pairs(3))
    lines = provenance_csv(learned).strip().splitlines()
    assert lines[0] == "location,segment_start,segment_end"
    assert len(lines) > 3
