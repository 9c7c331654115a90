"""Bounded dependability properties and Monte-Carlo probability estimation.

Three property templates are supported, each over a horizon T:
reachability of a goal location, a variable staying below a threshold
for a sustained window, and multiple vitals staying out of range for a
sustained window. Windows are evaluated on the simulation's exact
piecewise-affine trajectories (closed-form crossing instants), not on a
resampled grid.

Probabilities are estimated by n = ceil(ln(2/delta) / (2 eps^2))
independent runs (Chernoff-Hoeffding), giving |p_hat - p| <= eps with
confidence >= 1 - delta. Runs that visit a sink location count as
non-violating for the two violation-style templates: the sink stands
for unmodeled behavior and an unknown system state, which should not
be charged as a failure (nor inflate stability claims: reachability
runs keep their observed outcome).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import BadBound, HorizonTooShort, MissingEstimate, ParseError
from .kvconfig import parse_kv
from .sha import VITALS, Run, ShaNetwork, _crossing_time, _flow_value, derived_rng, simulate

_EPS = 1e-9


# ---------------------------------------------------------------------------
# properties and requirements


@dataclass(frozen=True)
class ReachStable:
    goals: tuple[str, ...]
    horizon: float

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be > 0")
        if not self.goals:
            raise ValueError("goal set must be nonempty")


@dataclass(frozen=True)
class DurationBelow:
    variable: str
    threshold: float
    duration: float
    horizon: float

    def __post_init__(self):
        if self.horizon <= 0 or not 0 < self.duration <= self.horizon:
            raise ValueError("require 0 < duration <= horizon")


@dataclass(frozen=True)
class PersistCritical:
    min_out_of_range: int
    duration: float
    horizon: float

    def __post_init__(self):
        if self.min_out_of_range < 2:
            raise ValueError("min_out_of_range must be >= 2")
        if self.horizon <= 0 or not 0 < self.duration <= self.horizon:
            raise ValueError("require 0 < duration <= horizon")


Property = ReachStable | DurationBelow | PersistCritical


def is_violation_style(prop: Property) -> bool:
    return isinstance(prop, (DurationBelow, PersistCritical))


@dataclass(frozen=True)
class Requirement:
    name: str
    prop: Property
    direction: str  # "fail_below" | "fail_above"
    threshold: float

    def __post_init__(self):
        if self.direction not in ("fail_below", "fail_above"):
            raise ValueError(f"bad direction {self.direction!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")

    def fails(self, p_hat: float) -> bool:
        # strict inequality at the threshold: p == theta never fails
        if self.direction == "fail_below":
            return p_hat < self.threshold
        return p_hat > self.threshold

    def violation_likelihood(self, p_hat: float) -> float:
        return 1.0 - p_hat if self.direction == "fail_below" else p_hat

    def violation_score(self, p_hat: float) -> float:
        if self.direction == "fail_below":
            return max(0.0, self.threshold - p_hat)
        return max(0.0, p_hat - self.threshold)


@dataclass
class Estimate:
    p_hat: float
    epsilon: float
    delta: float
    n_runs: int
    sink_runs: int = 0


# ---------------------------------------------------------------------------
# sample bound


def required_runs(epsilon: float, delta: float) -> int:
    """Chernoff-Hoeffding bound: ceil(ln(2/delta) / (2 eps^2))."""
    if not 0 < epsilon < 1 or not 0 < delta < 1:
        raise BadBound(f"need 0 < epsilon, delta < 1; got {epsilon}, {delta}")
    return math.ceil(math.log(2.0 / delta) / (2.0 * epsilon**2))


# ---------------------------------------------------------------------------
# property evaluation on a run


def _below_intervals(run: Run, var: str, c: float, horizon: float):
    """Maximal intervals within [0, horizon] where var < c."""
    out: list[list[float]] = []
    for t0, t1, val, flows in run.segments():
        if t0 >= horizon - _EPS:
            break
        t1 = min(t1, horizon)
        x0 = val.get(var)
        if x0 is None:
            continue
        flow = flows.get(var)
        x1 = _flow_value(x0, flow, t1 - t0)
        cross = _crossing_time(x0, flow, c)
        lo = hi = None
        if x0 < c and x1 < c:
            lo, hi = t0, t1  # monotone: stays below throughout
        elif x0 < c:  # rises through c
            lo, hi = t0, t0 + (cross if cross is not None else t1 - t0)
        elif x1 < c:  # falls through c
            lo, hi = t0 + (cross if cross is not None else 0.0), t1
        if lo is not None:
            lo, hi = max(lo, 0.0), min(hi, horizon)
            if hi > lo + _EPS:
                if out and lo <= out[-1][1] + _EPS:
                    out[-1][1] = max(out[-1][1], hi)
                else:
                    out.append([lo, hi])
    return out


def _out_of_range_intervals(run: Run, var: str, lo_hi: tuple[float, float], horizon: float):
    """Intervals where var < lo or var > hi (strictly outside the closed range)."""
    lo, hi = lo_hi
    below = _below_intervals(run, var, lo, horizon)
    # above hi == "-var below -hi"; reuse by mirroring is messier than direct scan
    above: list[list[float]] = []
    for t0, t1, val, flows in run.segments():
        if t0 >= horizon - _EPS:
            break
        t1 = min(t1, horizon)
        x0 = val.get(var)
        if x0 is None:
            continue
        flow = flows.get(var)
        x1 = _flow_value(x0, flow, t1 - t0)
        cross = _crossing_time(x0, flow, hi)
        seg = None
        if x0 > hi and x1 > hi:
            seg = [t0, t1]
        elif x0 > hi:
            seg = [t0, t0 + (cross if cross is not None else t1 - t0)]
        elif x1 > hi:
            seg = [t0 + (cross if cross is not None else 0.0), t1]
        if seg and seg[1] > seg[0] + _EPS:
            if above and seg[0] <= above[-1][1] + _EPS:
                above[-1][1] = max(above[-1][1], seg[1])
            else:
                above.append(seg)
    merged = sorted(below + above)
    out: list[list[float]] = []
    for seg in merged:
        if out and seg[0] <= out[-1][1] + _EPS:
            out[-1][1] = max(out[-1][1], seg[1])
        else:
            out.append(list(seg))
    return out


def _run_hits_sink(run: Run) -> bool:
    return any("sink" in s.locations for s in run.steps)


def eval_property(
    run: Run,
    prop: Property,
    safe_ranges: dict[str, tuple[float, float]] | None = None,
) -> tuple[bool, bool]:
    """Evaluate one property on one run; returns (satisfied, hit_sink)."""
    if run.horizon + _EPS < prop.horizon:
        raise HorizonTooShort(f"run horizon {run.horizon} < property horizon {prop.horizon}")
    hit_sink = _run_hits_sink(run)

    if isinstance(prop, ReachStable):
        goals = set(prop.goals)
        satisfied = any(
            s.t <= prop.horizon + _EPS and goals.intersection(s.locations) for s in run.steps
        )
        return satisfied, hit_sink

    if isinstance(prop, DurationBelow):
        intervals = _below_intervals(run, prop.variable, prop.threshold, prop.horizon)
        ok = any(hi - lo >= prop.duration - 1e-6 for lo, hi in intervals)
        return ok, hit_sink

    # PersistCritical: sweep the out-of-range count over time
    ranges = safe_ranges if safe_ranges is not None else {}
    deltas: list[tuple[float, int]] = []
    for name in VITALS:
        if name not in ranges:
            continue
        for lo, hi in _out_of_range_intervals(run, name, ranges[name], prop.horizon):
            deltas.append((lo, +1))
            deltas.append((hi, -1))
    if not deltas:
        return False, hit_sink
    deltas.sort()
    count = 0
    window_start = None
    for t, d in deltas:
        prev = count
        count += d
        if prev < prop.min_out_of_range <= count:
            window_start = t
        elif count < prop.min_out_of_range <= prev and window_start is not None:
            if t - window_start >= prop.duration - 1e-6:
                return True, hit_sink
            window_start = None
    if window_start is not None and prop.horizon - window_start >= prop.duration - 1e-6:
        return True, hit_sink
    return False, hit_sink


# ---------------------------------------------------------------------------
# estimation


def estimate(
    network: ShaNetwork,
    prop: Property,
    epsilon: float = 0.05,
    delta: float = 0.05,
    master_seed: int = 0,
) -> Estimate:
    """Monte-Carlo estimate of P(property) from required_runs(eps, delta) runs."""
    return evaluate_requirements(
        network,
        [Requirement("p", prop, "fail_above", 1.0)],
        epsilon,
        delta,
        master_seed,
    )["p"]


def evaluate_requirements(
    network: ShaNetwork,
    requirements: list[Requirement],
    epsilon: float = 0.05,
    delta: float = 0.05,
    master_seed: int = 0,
) -> dict[str, Estimate]:
    """Estimate all requirements' properties from one shared run batch."""
    n = required_runs(epsilon, delta)
    horizon = max(r.prop.horizon for r in requirements)
    satisfied = {r.name: 0 for r in requirements}
    sink_runs = 0
    for i in range(n):
        run = simulate(network, horizon, derived_rng(master_seed, i))
        hit_sink = None
        for r in requirements:
            ok, hit_sink = eval_property(run, r.prop, network.safe_ranges)
            if ok and hit_sink and is_violation_style(r.prop):
                ok = False  # unmodeled behavior is not charged as a violation
            if ok:
                satisfied[r.name] += 1
        if hit_sink:
            sink_runs += 1
    return {
        r.name: Estimate(satisfied[r.name] / n, epsilon, delta, n, sink_runs)
        for r in requirements
    }


def classify(
    estimates: dict[str, Estimate], requirements: list[Requirement]
) -> tuple[dict[str, bool], bool]:
    """Per-requirement failure verdicts plus the overall verdict."""
    verdicts: dict[str, bool] = {}
    for r in requirements:
        if r.name not in estimates:
            raise MissingEstimate(r.name)
        verdicts[r.name] = r.fails(estimates[r.name].p_hat)
    return verdicts, any(verdicts.values())


# ---------------------------------------------------------------------------
# requirements file


def parse_requirements(text: str) -> list[Requirement]:
    """Parse the key-value requirements format.

    Grammar per value::

        reach <loc>[,<loc>...] within <T> fail_below <theta>
        duration <var> < <c> for <d> within <T> fail_above <theta>
        persist <m> for <d> within <T> fail_above <theta>
    """
    requirements = []
    for name, values in parse_kv(text).items():
        tok = values[-1].split()
        try:
            kind = tok[0]
            if kind == "reach":
                goals = tuple(tok[1].split(","))
                prop: Property = ReachStable(goals, float(tok[3]))
                direction, theta = tok[4], float(tok[5])
            elif kind == "duration":
                assert tok[2] == "<"
                prop = DurationBelow(tok[1], float(tok[3]), float(tok[5]), float(tok[7]))
                direction, theta = tok[8], float(tok[9])
            elif kind == "persist":
                prop = PersistCritical(int(tok[1]), float(tok[3]), float(tok[5]))
                direction, theta = tok[6], float(tok[7])
            else:
                raise ValueError(kind)
        except (AssertionError, IndexError, ValueError) as err:
            raise ParseError(f"bad requirement {name!r}: {values[-1]!r} ({err})", 1) from None
        requirements.append(Requirement(name, prop, direction, theta))
    if not requirements:
        raise ParseError("no requirements found", 1)
    return requirements


def load_requirements(path: str | Path) -> list[Requirement]:
    return parse_requirements(Path(path).read_text(encoding="utf-8"))
