"""Patient model inference from labeled vital-sign recordings.

The flow variable's recording is cut at event boundaries into segments,
each segment's dynamics are fit to the affine family dx/dt = a*x + b by
regressing finite-difference slopes on value midpoints, segments with
statistically indistinguishable (a, b) are merged into locations by
greedy tolerance-based agglomeration, and edges are read off the event
sequence between consecutive segments. A sink location completes the
model over the full event alphabet so that every (location, event) pair
is resolvable.

The merge is a deterministic substitute for a statistical equivalence
test: groups are scanned in segment start order and merged whenever
both group-mean coefficients agree within (tol_a, tol_b). Each learned
location carries a normal distribution over b with the group's mean and
standard deviation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import NoSegments, TraceRejected
from .labeling import EventTrace, SignalBundle
from .sha import (
    Configuration,
    Edge,
    FlowCondition,
    Location,
    Sha,
    ShaNetwork,
    Variable,
    _advance_flows,
    compose_network,
    fire_detail,
)

#: the full event alphabet generated by the labeling rules
def standard_alphabet() -> list[str]:
    from .sha import PARAMETERS, VITALS

    names = []
    for v in VITALS:
        names += [f"{v}^high", f"{v}^low", f"{v}^ok"]
    for p in PARAMETERS:
        names += [f"{p}^up", f"{p}^down"]
    names += ["on", "off"]
    return names


def event_kind(name: str) -> str:
    """Patient-side ownership: vitals events are outputs, the rest inputs."""
    if name.endswith(("^high", "^low", "^ok")):
        return "output"
    return "input"


@dataclass
class Segment:
    start: float
    end: float
    samples: list[tuple[float, float]]
    entry_event: str | None
    exit_event: str | None
    trace_index: int = 0

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("segment must satisfy start < end")
        if len(self.samples) < 2:
            raise ValueError("segment needs at least two samples")


@dataclass
class FittedDynamics:
    a: float
    b: float
    residual_std: float
    n: int
    degenerate: bool = False


@dataclass
class LearnedSha:
    sha: Sha
    provenance: dict[str, list[tuple[int, float, float]]]  # loc -> (trace, start, end)
    sink: str | None = None
    dropped_segments: int = 0

    def non_sink_locations(self) -> list[str]:
        return [l.id for l in self.sha.locations if l.id != self.sink]


@dataclass
class LearnConfig:
    tol_a: float = 0.02  # 1/s
    tol_b: float = 5.0  # mL/s
    flow_var: str = "TV"
    min_samples: int = 4


# ---------------------------------------------------------------------------
# segmentation and fitting


def segment(
    bundle: SignalBundle,
    trace: EventTrace,
    flow_var: str = "TV",
    min_samples: int = 4,
    trace_index: int = 0,
) -> tuple[list[Segment], int]:
    """Cut the flow variable at event boundaries.

    Returns (segments, dropped) where dropped counts intervals with
    fewer than min_samples samples. Raises NoSegments when every
    interval is too short.
    """
    samples = bundle[flow_var].samples
    t0, t1 = samples[0][0], samples[-1][0]
    boundaries = [t0]
    for t, _ in trace.events:
        if boundaries[-1] < t <= t1:
            boundaries.append(t)
    if boundaries[-1] < t1:
        boundaries.append(t1)
    events = [None] + [e for t, e in trace.events if t0 < t <= t1] + [None]

    # an event marks the first sample under the new regime, so the pair
    # spanning the boundary is attributable to neither segment: segments
    # end exclusive at event boundaries (inclusive at the trace end)
    segments: list[Segment] = []
    dropped = 0
    for k in range(len(boundaries) - 1):
        lo, hi = boundaries[k], boundaries[k + 1]
        last = k == len(boundaries) - 2
        chunk = [
            (t, v)
            for t, v in samples
            if lo - 1e-9 <= t and (t <= hi + 1e-9 if last else t < hi - 1e-9)
        ]
        if len(chunk) < min_samples:
            dropped += 1
            continue
        segments.append(
            Segment(lo, chunk[-1][0], chunk, events[k], events[k + 1], trace_index)
        )
    if not segments:
        raise NoSegments(f"all {dropped} inter-event intervals shorter than {min_samples} samples")
    return segments, dropped


def fit_flow(seg: Segment) -> FittedDynamics:
    """Least-squares affine fit of finite-difference slopes on midpoints.

    Designs that are rank-deficient, exactly (constant signal) or
    statistically (a segment hovering at its equilibrium, where the
    midpoint spread is pure measurement noise and the slope-vs-midpoint
    regression would chase it), fall back to a = 0 with b = mean slope,
    flagged degenerate. The statistical guard drops a when it is within
    two standard errors of zero.
    """
    pts = np.asarray(seg.samples, dtype=float)
    t, x = pts[:, 0], pts[:, 1]
    dt = np.diff(t)
    slopes = np.diff(x) / dt
    mids = (x[:-1] + x[1:]) / 2.0

    def degenerate() -> FittedDynamics:
        b = float(np.mean(slopes))
        resid = slopes - b
        std = float(np.std(resid, ddof=1)) if len(slopes) > 1 else 0.0
        return FittedDynamics(0.0, b, std, len(seg.samples), degenerate=True)

    if np.ptp(mids) < 1e-9:
        return degenerate()
    design = np.column_stack([mids, np.ones_like(mids)])
    (a, b), *_ = np.linalg.lstsq(design, slopes, rcond=None)
    resid = slopes - (a * mids + b)
    dof = max(len(slopes) - 2, 1)
    std = float(np.sqrt(np.sum(resid**2) / dof))
    spread = float(np.sum((mids - np.mean(mids)) ** 2))
    se_a = std / np.sqrt(spread) if spread > 0 else np.inf
    if abs(a) < 2.0 * se_a:
        return degenerate()
    return FittedDynamics(float(a), float(b), std, len(seg.samples))


# ---------------------------------------------------------------------------
# merging and assembly


def merge_locations(
    fitted: list[tuple[Segment, FittedDynamics]],
    tol_a: float = 0.02,
    tol_b: float = 5.0,
) -> list[list[int]]:
    """Greedy agglomeration of segments into location groups.

    Returns index groups into `fitted`, ordered by earliest segment
    start; two groups merge when their mean a and mean b each agree
    within tolerance.
    """
    if not fitted:
        raise NoSegments("nothing to merge")
    order = sorted(range(len(fitted)), key=lambda i: (fitted[i][0].trace_index, fitted[i][0].start))
    groups: list[list[int]] = [[i] for i in order]

    def means(group):
        a = float(np.mean([fitted[i][1].a for i in group]))
        b = float(np.mean([fitted[i][1].b for i in group]))
        return a, b

    merged = True
    while merged:
        merged = False
        for gi in range(len(groups)):
            ai, bi = means(groups[gi])
            for gj in range(gi + 1, len(groups)):
                aj, bj = means(groups[gj])
                if abs(ai - aj) <= tol_a and abs(bi - bj) <= tol_b:
                    groups[gi] = groups[gi] + groups[gj]
                    del groups[gj]
                    merged = True
                    break
            if merged:
                break
    return groups


def assemble_sha(
    fitted: list[tuple[Segment, FittedDynamics]],
    groups: list[list[int]],
    flow_var: str = "TV",
    name: str = "patient",
    unit: str = "mL",
) -> LearnedSha:
    """Build the pre-completion automaton from a location partition."""
    group_of: dict[int, int] = {}
    for g, members in enumerate(groups):
        for i in members:
            group_of[i] = g

    locations = []
    provenance: dict[str, list[tuple[int, float, float]]] = {}
    for g, members in enumerate(groups):
        a = float(np.mean([fitted[i][1].a for i in members]))
        bs = [fitted[i][1].b for i in members]
        b = float(np.mean(bs))
        noise = float(np.std(bs)) if len(bs) > 1 else 0.0
        loc_id = f"q{g}"
        locations.append(Location(loc_id, None, {flow_var: FlowCondition(a, b, noise)}))
        provenance[loc_id] = [
            (fitted[i][0].trace_index, fitted[i][0].start, fitted[i][0].end) for i in members
        ]

    counts: dict[tuple[str, str, str], int] = {}
    by_trace: dict[int, list[int]] = {}
    for i, (seg, _) in enumerate(fitted):
        by_trace.setdefault(seg.trace_index, []).append(i)
    for indices in by_trace.values():
        indices.sort(key=lambda i: fitted[i][0].start)
        for i, j in zip(indices, indices[1:]):
            event = fitted[i][0].exit_event
            if event is None or fitted[j][0].entry_event != event:
                continue  # dropped segment between them; no reliable edge
            key = (f"q{group_of[i]}", event, f"q{group_of[j]}")
            counts[key] = counts.get(key, 0) + 1

    # alternatives for the same (src, event) become frequency-weighted edges
    group_totals: dict[tuple[str, str], int] = {}
    group_sizes: dict[tuple[str, str], int] = {}
    for (src, event, _), c in counts.items():
        group_totals[(src, event)] = group_totals.get((src, event), 0) + c
        group_sizes[(src, event)] = group_sizes.get((src, event), 0) + 1
    edges: list[Edge] = []
    for (src, event, dst), c in counts.items():
        weight = None
        if group_sizes[(src, event)] > 1:
            weight = c / group_totals[(src, event)]
        edges.append(Edge(src, dst, event, event_kind(event), weight=weight, removable=False))

    first = min(range(len(fitted)), key=lambda i: (fitted[i][0].trace_index, fitted[i][0].start))
    init_value = fitted[first][0].samples[0][1]
    sha = Sha(
        name=name,
        variables=(Variable(flow_var, unit, float(init_value)),),
        params=(),
        locations=tuple(locations),
        edges=tuple(edges),
        initial=f"q{group_of[first]}",
    )
    return LearnedSha(sha, provenance)


def complete_with_sink(learned: LearnedSha, alphabet: list[str]) -> LearnedSha:
    """Make the automaton total over the alphabet via an absorbing sink.

    The sink freezes the flow variable (a = b = 0) and self-loops on
    every event; patient-owned events stay outputs (they can never fire
    spontaneously there), external ones stay inputs.
    """
    sha = learned.sha
    flow_var = sha.variables[0].name
    kinds = sha.actions()
    for e in alphabet:
        kinds.setdefault(e, event_kind(e))
    existing = {(e.src, e.action) for e in sha.edges}
    new_edges = list(sha.edges)
    for loc in sha.locations:
        for event in alphabet:
            if (loc.id, event) not in existing:
                new_edges.append(
                    Edge(loc.id, "sink", event, kinds[event], removable=False)
                )
    for event in alphabet:
        new_edges.append(Edge("sink", "sink", event, kinds[event], removable=False))
    locations = sha.locations + (
        Location("sink", None, {flow_var: FlowCondition(0.0, 0.0, 0.0)}),
    )
    completed = Sha(
        name=sha.name,
        variables=sha.variables,
        params=sha.params,
        locations=locations,
        edges=tuple(new_edges),
        initial=sha.initial,
    )
    return LearnedSha(completed, dict(learned.provenance), "sink", learned.dropped_segments)


def learn_patient(
    pairs: list[tuple[SignalBundle, EventTrace]],
    config: LearnConfig | None = None,
    alphabet: list[str] | None = None,
) -> LearnedSha:
    """Full pipeline: segment, fit, merge, assemble, complete."""
    config = config or LearnConfig()
    alphabet = alphabet if alphabet is not None else standard_alphabet()
    fitted: list[tuple[Segment, FittedDynamics]] = []
    dropped = 0
    for idx, (bundle, trace) in enumerate(pairs):
        try:
            segs, d = segment(bundle, trace, config.flow_var, config.min_samples, idx)
        except NoSegments:
            dropped += 1
            continue
        dropped += d
        fitted.extend((s, fit_flow(s)) for s in segs)
    if not fitted:
        raise NoSegments("no usable segments in any training pair")
    groups = merge_locations(fitted, config.tol_a, config.tol_b)
    learned = assemble_sha(fitted, groups, config.flow_var)
    learned.dropped_segments = dropped
    return complete_with_sink(learned, alphabet)


# ---------------------------------------------------------------------------
# prediction


def predict_tv(
    learned: LearnedSha,
    physician: Sha | None,
    trace: EventTrace,
    horizon: float,
    initial_tv: float | None = None,
) -> float:
    """Replay a trace on the composed network with mean-value flows.

    Events are treated as externally observed: every automaton with an
    enabled edge reacts. An event nobody can absorb raises TraceRejected.
    """
    shas = [physician, learned.sha] if physician is not None else [learned.sha]
    network = compose_network(shas, strict=False)
    config = network.initial_configuration(None, noise=False)
    flow_var = learned.sha.variables[0].name
    if initial_tv is not None:
        config.valuation[flow_var] = float(initial_tv)
    for t, event in trace.events:
        dt = t - config.clock
        if dt > 0:
            _advance_flows(config, dt)
        config, moved = fire_detail(
            network, config, event, rng=None, require_emitter=False, noise=False,
            on_ambiguous="modal",
        )
        if not moved:
            raise TraceRejected(event)
    if horizon > config.clock:
        _advance_flows(config, horizon - config.clock)
    return float(config.valuation[flow_var])


# ---------------------------------------------------------------------------
# provenance report


def provenance_csv(learned: LearnedSha) -> str:
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["location", "segment_start", "segment_end"])
    for loc in sorted(learned.provenance):
        for _, start, end in learned.provenance[loc]:
            w.writerow([loc, format(start, "g"), format(end, "g")])
    return out.getvalue()
