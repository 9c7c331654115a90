import math

import numpy as np
import pytest

from pdptwin.dsl import parse_network_text
from pdptwin.errors import BadBound, HorizonTooShort, MissingEstimate, ParseError
from pdptwin.smc import (
    DurationBelow,
    Estimate,
    PersistCritical,
    ReachStable,
    Requirement,
    classify,
    estimate,
    eval_property,
    evaluate_requirements,
    parse_requirements,
    required_runs,
)
from pdptwin.sha import derived_rng, simulate

CHAIN = parse_network_text(
    """
automaton chain
location start rate 1.0
location stable
edge start -> stable on go!
initial start
"""
)

DECLINE = parse_network_text(
    """
automaton pat
var TV unit mL init 400
var CD unit mmHg init 40
location hi rate 0.5 flow TV a -0.05 b 12.5
location lo flow TV a -0.05 b 12.5 flow CD a 0 b 1
edge hi -> lo on TV^low! reset CD:=46
initial hi
"""
)


# ---------------------------------------------------------------------------
# sample bound


@pytest.mark.parametrize(
    "eps, delta, expected",
    [(0.05, 0.05, 738), (0.01, 0.05, 18445), (0.1, 0.1, 150)],
)
def test_required_runs(eps, delta, expected):
    assert required_runs(eps, delta) == expected


@pytest.mark.parametrize("eps, delta", [(1.0, 0.05), (0.0, 0.05), (0.05, 0.0), (0.05, 1.5)])
def test_required_runs_bad_bounds(eps, delta):
    with pytest.raises(BadBound):
        required_runs(eps, delta)


# ---------------------------------------------------------------------------
# property evaluation


def test_reach_stable_on_entering_run():
    run = simulate(CHAIN, 60.0, 3)
    ok, sink = eval_property(run, ReachStable(("stable",), 60.0), {})
    entered = bool(run.events())
    assert ok is entered and sink is False


def test_reach_goal_is_initial():
    run = simulate(CHAIN, 10.0, 1)
    ok, _ = eval_property(run, ReachStable(("start",), 10.0), {})
    assert ok


def test_duration_below_constant_low():
    network = parse_network_text(
        """
automaton pat
var TV unit mL init 200
location only flow TV a 0 b 0
initial only
"""
    )
    run = simulate(network, 60.0, 1, noise=False)
    ok, _ = eval_property(run, DurationBelow("TV", 300.0, 20.0, 60.0), {})
    assert ok


def test_duration_below_needs_full_window():
    # TV dips below 300 only briefly: crosses down then is reset back up
    network = parse_network_text(
        """
automaton pat
var TV unit mL init 310
location fall flow TV a 0 b -2 invariant TV >= 295
location back flow TV a 0 b 2
edge fall -> back on TV^low! reset TV:=305
initial fall
"""
    )
    run = simulate(network, 60.0, 1, noise=False)
    ok, _ = eval_property(run, DurationBelow("TV", 300.0, 20.0, 60.0), {})
    assert not ok
    ok2, _ = eval_property(run, DurationBelow("TV", 300.0, 2.0, 60.0), {})
    assert ok2


def test_duration_monotone_in_window_length():
    run = simulate(DECLINE, 120.0, 5)
    prop = DurationBelow("TV", 380.0, 40.0, 120.0)
    ranges = {"TV": (350.0, 450.0), "CD": (35.0, 45.0)}
    if eval_property(run, prop, ranges)[0]:
        for d in (30.0, 20.0, 5.0, 1.0):
            assert eval_property(run, DurationBelow("TV", 380.0, d, 120.0), ranges)[0]


def test_persist_critical_counts_vitals():
    ranges = {"TV": (350.0, 450.0), "CD": (35.0, 45.0)}
    run = simulate(DECLINE, 200.0, 7, noise=False)
    # after TV^low fires, TV continues to 250 (out) and CD is reset to 46 (out)
    if run.events():
        ok, _ = eval_property(run, PersistCritical(2, 30.0, 200.0), ranges)
        assert ok
    ok1, _ = eval_property(run, PersistCritical(3, 30.0, 200.0), ranges)
    assert not ok1  # only two modeled vitals can be out


def test_persist_single_vital_never_satisfies_m2():
    network = parse_network_text(
        """
automaton pat
var TV unit mL init 300
location only flow TV a 0 b 0
initial only
"""
    )
    run = simulate(network, 60.0, 1, noise=False)
    ok, _ = eval_property(run, PersistCritical(2, 10.0, 60.0), {"TV": (350.0, 450.0)})
    assert not ok


def test_horizon_too_short():
    run = simulate(CHAIN, 10.0, 1)
    with pytest.raises(HorizonTooShort):
        eval_property(run, ReachStable(("stable",), 60.0), {})


# ---------------------------------------------------------------------------
# estimation


def test_estimate_exponential_chain():
    est = estimate(CHAIN, ReachStable(("stable",), 1.0), 0.05, 0.01, master_seed=12)
    assert est.n_runs == required_runs(0.05, 0.01)
    assert abs(est.p_hat - (1 - math.exp(-1))) <= 0.05


def test_estimate_unreachable_goal():
    est = estimate(CHAIN, ReachStable(("nowhere",), 1.0), 0.1, 0.1, master_seed=3)
    assert est.p_hat == 0.0


def test_estimate_goal_is_initial():
    est = estimate(CHAIN, ReachStable(("start",), 1.0), 0.1, 0.1, master_seed=3)
    assert est.p_hat == 1.0


def test_estimate_deterministic_under_seed():
    a = estimate(CHAIN, ReachStable(("stable",), 1.0), 0.1, 0.1, master_seed=9)
    b = estimate(CHAIN, ReachStable(("stable",), 1.0), 0.1, 0.1, master_seed=9)
    assert a == b


def test_sink_exemption_zeroes_violation_probability():
    sinking = parse_network_text(
        """
automaton pat
var TV unit mL init 400
location q8 rate 1.0 flow TV a 0 b 0
location sink flow TV a 0 b 0
edge q8 -> sink on TV^low! reset TV:=200
initial q8
"""
    )
    reqs = [
        Requirement("r2", DurationBelow("TV", 300.0, 20.0, 120.0), "fail_above", 0.2),
        Requirement("r3", PersistCritical(2, 20.0, 120.0), "fail_above", 0.2),
    ]
    ests = evaluate_requirements(sinking, reqs, 0.1, 0.1, master_seed=4)
    assert ests["r2"].p_hat == 0.0 and ests["r3"].p_hat == 0.0
    assert ests["r2"].sink_runs > 0


# ---------------------------------------------------------------------------
# classification


def test_classify_directions():
    reqs = [
        Requirement("r1", ReachStable(("stable",), 60.0), "fail_below", 0.5),
        Requirement("r2", DurationBelow("TV", 300, 60, 3600), "fail_above", 0.3),
    ]
    ests = {"r1": Estimate(0.2, 0.05, 0.05, 738), "r2": Estimate(0.1, 0.05, 0.05, 738)}
    verdicts, overall = classify(ests, reqs)
    assert verdicts == {"r1": True, "r2": False} and overall


def test_classify_boundary_is_non_failing():
    reqs = [
        Requirement("r1", ReachStable(("s",), 60.0), "fail_below", 0.5),
        Requirement("r2", DurationBelow("TV", 300, 60, 3600), "fail_above", 0.2),
        Requirement("r3", PersistCritical(2, 120, 3600), "fail_above", 0.2),
    ]
    ests = {
        "r1": Estimate(0.5, 0.05, 0.05, 738),
        "r2": Estimate(0.2, 0.05, 0.05, 738),
        "r3": Estimate(0.2, 0.05, 0.05, 738),
    }
    verdicts, overall = classify(ests, reqs)
    assert not overall and not any(verdicts.values())


def test_classify_missing_estimate():
    reqs = [Requirement("r9", ReachStable(("s",), 60.0), "fail_below", 0.5)]
    with pytest.raises(MissingEstimate):
        classify({}, reqs)


# ---------------------------------------------------------------------------
# requirements file


def test_parse_requirements_roundtrip():
    text = """
req1 = reach stable within 3600 fail_below 0.5
req2 = duration TV < 300 for 60 within 3600 fail_above 0.2
req3 = persist 2 for 120 within 3600 fail_above 0.2
"""
    reqs = parse_requirements(text)
    assert [r.name for r in reqs] == ["req1", "req2", "req3"]
    assert reqs[0].prop == ReachStable(("stable",), 3600.0)
    assert reqs[1].prop == DurationBelow("TV", 300.0, 60.0, 3600.0)
    assert reqs[2].prop == PersistCritical(2, 120.0, 3600.0)
    assert reqs[0].direction == "fail_below" and reqs[0].threshold == 0.5


def test_parse_requirements_rejects_garbage():
    with pytest.raises(ParseError):
        parse_requirements("req1 = sometimes eventually good\n")


def test_violation_scores():
    r_below = Requirement("a", ReachStable(("s",), 10.0), "fail_below", 0.5)
    r_above = Requirement("b", PersistCritical(2, 5, 10.0), "fail_above", 0.2)
    assert r_below.violation_score(0.3) == pytest.approx(0.2)
    assert r_below.violation_score(0.7) == 0.0
    assert r_above.violation_score(0.35) == pytest.approx(0.15)
    assert r_above.violation_likelihood(0.35) == pytest.approx(0.35)
    assert r_below.violation_likelihood(0.3) == pytest.approx(0.7)
