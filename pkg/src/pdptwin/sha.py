"""Stochastic hybrid automata: types, network composition, simulation.

An automaton couples a finite location graph with real variables that
evolve by affine flow conditions dx/dt = a*x + b while a location is
occupied. Randomness enters in three places: exponential exit delays
attached to locations, weighted alternatives among edges, and a normal
perturbation of each flow's b coefficient resampled on location entry.

Networks synchronize on action names: an output edge fires in exactly
one automaton and every automaton with an enabled input edge of the
same name moves simultaneously.

Semantics fixed here (the formal model leaves them open):
  * invariants are conjunctions of single-variable linear constraints;
    when a flow is about to violate one, time is clamped to the exact
    crossing instant and an enabled output edge of that automaton is
    forced (StuckLocation if none is enabled);
  * simultaneous candidates are ordered (invariant crossing, delay,
    horizon), then by automaton index, then edge declaration order;
  * a weighted alternative is resolved by a single uniform draw against
    the cumulative weight vector;
  * if a sampled delay elapses with no enabled output edge the step
    produces no event (the exponential is memoryless, so the automaton
    simply keeps waiting).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    AmbiguousWithoutRng,
    EventNotEnabled,
    InvalidHorizon,
    NumericOverflow,
    PdpError,
    StuckLocation,
    UnmatchedInput,
)

VITALS = ("CD", "HR", "OS", "RR", "TV")
PARAMETERS = ("FIOX", "PEEP", "RERA", "TVOL")

#: default safe operating ranges, closed intervals
DEFAULT_SAFE_RANGES = {
    "CD": (35.0, 45.0),
    "HR": (60.0, 100.0),
    "OS": (90.0, 100.0),
    "RR": (10.0, 20.0),
    "TV": (350.0, 450.0),
}

_EPS = 1e-9
_OVERFLOW = 1e12


# ---------------------------------------------------------------------------
# model types


@dataclass(frozen=True)
class Action:
    name: str
    kind: str  # "input" | "output"
    control: str = "uncontrollable"  # meaningful for outputs only


@dataclass(frozen=True)
class Constraint:
    """Single linear constraint `var op bound` with op in < <= > >=."""

    var: str
    op: str
    bound: float

    def holds(self, value: float) -> bool:
        if self.op == "<":
            return value < self.bound + _EPS
        if self.op == "<=":
            return value <= self.bound + _EPS
        if self.op == ">":
            return value > self.bound - _EPS
        if self.op == ">=":
            return value >= self.bound - _EPS
        raise ValueError(f"unknown op {self.op!r}")

    def text(self) -> str:
        b = format_number(self.bound)
        return f"{self.var} {self.op} {b}"


@dataclass(frozen=True)
class FlowCondition:
    """Affine flow dx/dt = a*x + b with b ~ Normal(b, noise) per sojourn."""

    a: float
    b: float
    noise: float = 0.0


@dataclass(frozen=True)
class Location:
    id: str
    rate: float | str | None = None  # exponential exit rate, or param name
    flows: dict[str, FlowCondition] = field(default_factory=dict)
    invariant: tuple[Constraint, ...] = ()


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    action: str
    kind: str  # "input" | "output"
    guard: tuple[Constraint, ...] = ()
    weight: float | str | None = None  # None = deterministic; str = param expr
    resets: tuple[tuple[str, float], ...] = ()
    removable: bool = True

    @property
    def edge_id(self) -> str:
        return f"{self.src}->{self.dst}:{self.action}"


@dataclass(frozen=True)
class Variable:
    name: str
    unit: str
    init: float


@dataclass(frozen=True)
class Param:
    name: str
    lo: float
    hi: float
    value: float


@dataclass(frozen=True)
class Sha:
    name: str
    variables: tuple[Variable, ...]
    params: tuple[Param, ...]
    locations: tuple[Location, ...]
    edges: tuple[Edge, ...]
    initial: str
    controller: bool = False

    def location(self, loc_id: str) -> Location:
        for loc in self.locations:
            if loc.id == loc_id:
                return loc
        raise KeyError(loc_id)

    def actions(self) -> dict[str, str]:
        """Action name -> kind, derived from edge declarations."""
        kinds: dict[str, str] = {}
        for e in self.edges:
            kinds.setdefault(e.action, e.kind)
        return kinds

    def output_actions(self) -> set[str]:
        return {e.action for e in self.edges if e.kind == "output"}

    def input_actions(self) -> set[str]:
        return {e.action for e in self.edges if e.kind == "input"}

    def sink_id(self) -> str | None:
        return "sink" if any(l.id == "sink" for l in self.locations) else None


def format_number(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


# ---------------------------------------------------------------------------
# validation


def validate_sha(sha: Sha) -> list[str]:
    """Check well-formedness; returns one diagnostic string per violation."""
    diags: list[str] = []
    loc_ids = {l.id for l in sha.locations}
    if len(loc_ids) != len(sha.locations):
        diags.append(f"{sha.name}: duplicate location ids")
    if sha.initial not in loc_ids:
        diags.append(f"{sha.name}: initial location {sha.initial!r} not declared")
    var_names = {v.name for v in sha.variables}
    param_names = {p.name for p in sha.params}

    for p in sha.params:
        if not (p.lo <= p.value <= p.hi):
            diags.append(
                f"{sha.name}: param {p.name} value {p.value} outside [{p.lo}, {p.hi}]"
            )

    for loc in sha.locations:
        if isinstance(loc.rate, float) and loc.rate <= 0:
            diags.append(f"{sha.name}/{loc.id}: rate must be > 0")
        if isinstance(loc.rate, str) and loc.rate not in param_names:
            diags.append(f"{sha.name}/{loc.id}: rate references unknown param {loc.rate!r}")
        for var, fc in loc.flows.items():
            if var not in var_names:
                diags.append(f"{sha.name}/{loc.id}: flow for undeclared variable {var!r}")
            if fc.noise < 0:
                diags.append(f"{sha.name}/{loc.id}: flow noise stddev < 0")
        for c in loc.invariant:
            if c.var not in var_names:
                diags.append(f"{sha.name}/{loc.id}: invariant references undeclared {c.var!r}")

    kinds: dict[str, str] = {}
    for e in sha.edges:
        if e.src not in loc_ids or e.dst not in loc_ids:
            diags.append(f"{sha.name}: dangling edge {e.edge_id}")
        prior = kinds.setdefault(e.action, e.kind)
        if prior != e.kind:
            diags.append(f"{sha.name}: action {e.action!r} used as both input and output")
        for c in e.guard:
            if c.var not in var_names:
                diags.append(f"{sha.name}: guard of {e.edge_id} references undeclared {c.var!r}")
        for var, _ in e.resets:
            if var not in var_names:
                diags.append(f"{sha.name}: reset of {e.edge_id} targets undeclared {var!r}")
        if isinstance(e.weight, str) and _weight_param(e.weight) not in param_names:
            diags.append(f"{sha.name}: weight of {e.edge_id} references unknown param")

    # weight normalization per choice group
    params = {p.name: p.value for p in sha.params}
    out_groups: dict[str, list[Edge]] = {}
    in_groups: dict[tuple[str, str], list[Edge]] = {}
    for e in sha.edges:
        if e.kind == "output" and e.weight is not None:
            out_groups.setdefault(e.src, []).append(e)
        elif e.kind == "input":
            in_groups.setdefault((e.src, e.action), []).append(e)
    for src, group in out_groups.items():
        total = sum(_resolve_weight(e.weight, params) for e in group)
        if abs(total - 1.0) > 1e-9:
            diags.append(f"{sha.name}/{src}: weights sum != 1 (got {total:.6g})")
    for (src, action), group in in_groups.items():
        if len(group) < 2:
            continue
        total = sum(_resolve_weight(e.weight, params) if e.weight is not None else 1.0 for e in group)
        if abs(total - 1.0) > 1e-9:
            diags.append(f"{sha.name}/{src}: weights sum != 1 for input {action!r} (got {total:.6g})")
    return diags


def _weight_param(expr: str) -> str:
    return expr[2:] if expr.startswith("1-") else expr


def _resolve_weight(expr: float | str | None, params: dict[str, float]) -> float:
    if expr is None:
        return 1.0
    if isinstance(expr, str):
        if expr.startswith("1-"):
            return 1.0 - params[expr[2:]]
        return params[expr]
    return float(expr)


# ---------------------------------------------------------------------------
# network


@dataclass
class ShaNetwork:
    """Composition of automata with merged variables and parameters.

    Immutable after construction; safe to share read-only across workers.
    """

    automata: tuple[Sha, ...]
    safe_ranges: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_SAFE_RANGES)
    )
    vent_var: str = "vent"

    def __post_init__(self):
        self.params: dict[str, float] = {}
        for sha in self.automata:
            for p in sha.params:
                if p.name in self.params and self.params[p.name] != p.value:
                    raise PdpError(f"conflicting values for param {p.name!r}")
                self.params[p.name] = p.value
        self.param_bounds: dict[str, tuple[float, float]] = {}
        for sha in self.automata:
            for p in sha.params:
                self.param_bounds[p.name] = (p.lo, p.hi)
        self._init_valuation: dict[str, float] = {}
        seen: dict[str, Variable] = {}
        for sha in self.automata:
            for v in sha.variables:
                if v.name in seen and (seen[v.name].unit != v.unit or seen[v.name].init != v.init):
                    raise PdpError(f"conflicting declarations of variable {v.name!r}")
                seen[v.name] = v
                self._init_valuation[v.name] = v.init
        # lookup tables for the hot path
        self._loc: list[dict[str, Location]] = []
        self._out_edges: list[dict[str, list[Edge]]] = []
        self._edges_by_action: list[dict[tuple[str, str], list[Edge]]] = []
        for sha in self.automata:
            self._loc.append({l.id: l for l in sha.locations})
            outs: dict[str, list[Edge]] = {l.id: [] for l in sha.locations}
            by_action: dict[tuple[str, str], list[Edge]] = {}
            for e in sha.edges:
                if e.kind == "output":
                    outs[e.src].append(e)
                by_action.setdefault((e.src, e.action), []).append(e)
            self._out_edges.append(outs)
            self._edges_by_action.append(by_action)
        self._outputs_of: list[set[str]] = [sha.output_actions() for sha in self.automata]

    # -- helpers

    def automaton_index(self, name: str) -> int:
        for i, sha in enumerate(self.automata):
            if sha.name == name:
                return i
        raise KeyError(name)

    def controller_index(self) -> int | None:
        for i, sha in enumerate(self.automata):
            if sha.controller:
                return i
        return None

    def rate_of(self, aut: int, loc: Location) -> float | None:
        r = loc.rate
        if r is None:
            return None
        if isinstance(r, str):
            return self.params[r]
        return r

    def with_params(self, new_params: dict[str, float]) -> "ShaNetwork":
        """Copy of the network with updated parameter values."""
        automata = []
        for sha in self.automata:
            params = tuple(
                replace(p, value=new_params.get(p.name, p.value)) for p in sha.params
            )
            automata.append(replace(sha, params=params))
        return ShaNetwork(tuple(automata), dict(self.safe_ranges), self.vent_var)

    def without_edges(self, edge_ids: set[str], automaton: str | None = None) -> "ShaNetwork":
        """Copy with the identified edges removed (from one automaton if given)."""
        automata = []
        for sha in self.automata:
            if automaton is not None and sha.name != automaton:
                automata.append(sha)
                continue
            kept = tuple(e for e in sha.edges if e.edge_id not in edge_ids)
            automata.append(replace(sha, edges=kept))
        return ShaNetwork(tuple(automata), dict(self.safe_ranges), self.vent_var)

    def initial_configuration(self, rng: np.random.Generator | None = None,
                              noise: bool = True) -> "Configuration":
        config = Configuration(
            locations=tuple(sha.initial for sha in self.automata),
            valuation=dict(self._init_valuation),
            flows=[{} for _ in self.automata],
            clock=0.0,
        )
        for i in range(len(self.automata)):
            _enter_location(self, config, i, config.locations[i], rng, noise)
        return config


def compose_network(
    shas: list[Sha],
    safe_ranges: dict[str, tuple[float, float]] | None = None,
    vent_var: str = "vent",
    strict: bool = True,
) -> ShaNetwork:
    """Compose automata, checking input/output matching on alphabets.

    Every input action must be declared as an output by some other
    automaton in the network; outputs may go unheard. Pass strict=False
    for replay-style networks whose events are injected externally (a
    sink-completed learned model declares every input).
    """
    names = [s.name for s in shas]
    if len(set(names)) != len(names):
        raise PdpError("duplicate automaton names in network")
    if strict:
        all_outputs: set[str] = set()
        for sha in shas:
            all_outputs |= sha.output_actions()
        for sha in shas:
            for action in sorted(sha.input_actions()):
                if action not in all_outputs:
                    raise UnmatchedInput(action)
    return ShaNetwork(
        tuple(shas),
        dict(safe_ranges) if safe_ranges is not None else dict(DEFAULT_SAFE_RANGES),
        vent_var,
    )


# ---------------------------------------------------------------------------
# configuration and runs


@dataclass
class Configuration:
    locations: tuple[str, ...]
    valuation: dict[str, float]
    flows: list[dict[str, tuple[float, float]]]  # per automaton: var -> (a, b_eff)
    clock: float = 0.0

    def copy(self) -> "Configuration":
        return Configuration(
            self.locations,
            dict(self.valuation),
            [dict(f) for f in self.flows],
            self.clock,
        )

    def merged_flows(self) -> dict[str, tuple[float, float]]:
        merged: dict[str, tuple[float, float]] = {}
        for f in self.flows:
            merged.update(f)
        return merged

    def vitals_flags(self, network: ShaNetwork) -> tuple[bool, ...]:
        """(r1..r5) per VITALS order; unmodeled vitals count as in range."""
        flags = []
        for name in VITALS:
            lo, hi = network.safe_ranges.get(name, (-math.inf, math.inf))
            v = self.valuation.get(name)
            flags.append(True if v is None else (lo <= v <= hi))
        return tuple(flags)

    def r_on(self, network: ShaNetwork) -> bool:
        return self.valuation.get(network.vent_var, 0.0) > 0.5


@dataclass
class RunStep:
    t: float
    event: str | None  # event fired at time t (None for initial/horizon entries)
    locations: tuple[str, ...]
    valuation: dict[str, float]
    flows: dict[str, tuple[float, float]]  # active from t until the next step


@dataclass
class Run:
    steps: list[RunStep]
    horizon: float

    def events(self) -> list[tuple[float, str]]:
        return [(s.t, s.event) for s in self.steps if s.event is not None]

    def visited(self, aut_index: int) -> list[tuple[float, str]]:
        return [(s.t, s.locations[aut_index]) for s in self.steps]

    def segments(self):
        """Yield (t0, t1, valuation_at_t0, flows) trajectory pieces."""
        for i in range(len(self.steps) - 1):
            s0, s1 = self.steps[i], self.steps[i + 1]
            if s1.t > s0.t:
                yield s0.t, s1.t, s0.valuation, s0.flows

    def value_at(self, var: str, t: float) -> float:
        for t0, t1, val, flows in self.segments():
            if t0 - _EPS <= t <= t1 + _EPS:
                return _flow_value(val[var], flows.get(var), min(t, t1) - t0)
        return self.steps[-1].valuation[var]


def _flow_value(x0: float, flow: tuple[float, float] | None, dt: float) -> float:
    if flow is None or dt <= 0:
        return x0
    a, b = flow
    if a == 0.0:
        return x0 + b * dt
    eq = -b / a
    return eq + (x0 - eq) * math.exp(a * dt)


# ---------------------------------------------------------------------------
# semantics


def _enter_location(network: ShaNetwork, config: Configuration, aut: int,
                    loc_id: str, rng, noise: bool) -> None:
    loc = network._loc[aut][loc_id]
    flows: dict[str, tuple[float, float]] = {}
    for var, fc in loc.flows.items():
        b = fc.b
        if noise and fc.noise > 0.0 and rng is not None:
            b += rng.normal(0.0, fc.noise)
        flows[var] = (fc.a, b)
    config.flows[aut] = flows


def _guard_holds(guard: tuple[Constraint, ...], valuation: dict[str, float]) -> bool:
    for c in guard:
        if not c.holds(valuation.get(c.var, 0.0)):
            return False
    return True


def _pick_weighted(edges: list[Edge], params: dict[str, float], rng,
                   on_ambiguous: str = "raise") -> Edge:
    if len(edges) == 1:
        return edges[0]
    weights = [_resolve_weight(e.weight, params) for e in edges]
    if rng is None:
        if on_ambiguous == "modal":
            return edges[int(np.argmax(weights))]
        raise AmbiguousWithoutRng(
            f"{len(edges)} weighted alternatives for {edges[0].action!r} and no rng"
        )
    total = sum(weights)
    if total <= 0:
        return edges[0]
    u = rng.random() * total
    acc = 0.0
    for e, w in zip(edges, weights):
        acc += w
        if u <= acc:
            return e
    return edges[-1]


def fire(
    network: ShaNetwork,
    config: Configuration,
    event: str,
    rng: np.random.Generator | None = None,
    require_emitter: bool = True,
    noise: bool = True,
) -> Configuration:
    """Fire `event`: the emitting automaton and all enabled listeners move.

    Guards are evaluated on the pre-event valuation; resets apply in
    automaton index order. With `require_emitter` false the event is
    treated as externally injected (runtime alignment): whoever has an
    enabled edge reacts and nobody needs to emit it.
    """
    return fire_detail(network, config, event, rng, require_emitter, noise)[0]


def fire_detail(
    network: ShaNetwork,
    config: Configuration,
    event: str,
    rng: np.random.Generator | None = None,
    require_emitter: bool = True,
    noise: bool = True,
    on_ambiguous: str = "raise",
) -> tuple[Configuration, tuple[int, ...]]:
    """As fire(), also reporting which automata moved.

    on_ambiguous="modal" resolves weighted alternatives deterministically
    by highest weight when no rng is supplied (trace replay).
    """
    pre = config.valuation
    chosen: list[tuple[int, Edge]] = []
    has_emitter = False
    for i in range(len(network.automata)):
        candidates = network._edges_by_action[i].get((config.locations[i], event))
        if not candidates:
            continue
        enabled = [e for e in candidates if _guard_holds(e.guard, pre)]
        if not enabled:
            continue
        if enabled[0].kind == "output":
            has_emitter = True
        if len(enabled) > 1:
            edge = _pick_weighted(enabled, network.params, rng, on_ambiguous)
        else:
            edge = enabled[0]
        chosen.append((i, edge))
    if require_emitter and not has_emitter:
        raise EventNotEnabled(event)
    new = config.copy()
    locations = list(new.locations)
    for i, edge in chosen:
        locations[i] = edge.dst
        for var, value in edge.resets:
            new.valuation[var] = value
    new.locations = tuple(locations)
    for i, edge in chosen:
        _enter_location(network, new, i, edge.dst, rng, noise)
    return new, tuple(i for i, _ in chosen)


def _earliest_violation(
    network: ShaNetwork, config: Configuration, aut: int
) -> float | None:
    """Time until this automaton's location invariant is first violated."""
    loc = network._loc[aut][config.locations[aut]]
    if not loc.invariant:
        return None
    flows = config.flows[aut]
    best: float | None = None
    for c in loc.invariant:
        x0 = config.valuation.get(c.var, 0.0)
        if not c.holds(x0):
            return 0.0
        t = _crossing_time(x0, flows.get(c.var), c.bound)
        if t is not None and (best is None or t < best):
            best = t
    return best


def _crossing_time(x0: float, flow: tuple[float, float] | None, c: float) -> float | None:
    """First t > 0 with x(t) == c under the affine flow, else None."""
    if flow is None:
        return None
    a, b = flow
    if a == 0.0:
        if b == 0.0:
            return None
        t = (c - x0) / b
        return t if t > _EPS else None
    eq = -b / a
    denom = x0 - eq
    if abs(denom) < 1e-300:
        return None
    ratio = (c - eq) / denom
    if ratio <= 0:
        return None
    t = math.log(ratio) / a
    return t if t > _EPS else None


def _advance_flows(config: Configuration, dt: float) -> None:
    if dt <= 0:
        return
    for flows in config.flows:
        for var, (a, b) in flows.items():
            x = _flow_value(config.valuation[var], (a, b), dt)
            if not math.isfinite(x) or abs(x) > _OVERFLOW:
                raise NumericOverflow(f"{var} diverged during flow integration")
            config.valuation[var] = x
    config.clock += dt


def step(
    network: ShaNetwork,
    config: Configuration,
    rng: np.random.Generator | None,
    horizon: float = math.inf,
    noise: bool = True,
) -> tuple[Configuration, str | None, float]:
    """Advance one scheduling round: delay, forced crossing, or horizon.

    Returns (new configuration, fired event or None, elapsed dt).
    """
    remaining = horizon - config.clock
    if remaining <= _EPS:
        return config, None, 0.0

    # (dt, priority, automaton) with invariant crossings before delays
    best_dt = remaining
    best: tuple[int, int] | None = None  # (priority, automaton)
    n = len(network.automata)
    for i in range(n):
        t = _earliest_violation(network, config, i)
        if t is not None and t < best_dt - _EPS:
            best_dt, best = t, (0, i)
    for i in range(n):
        loc = network._loc[i][config.locations[i]]
        rate = network.rate_of(i, loc)
        if rate is None:
            continue
        if not network._out_edges[i][loc.id]:
            continue  # no exit can ever fire; don't busy-wait on the delay
        if rng is None:
            raise AmbiguousWithoutRng("delay sampling requires an rng")
        d = rng.exponential(1.0 / rate)
        if d < best_dt - _EPS:
            best_dt, best = d, (1, i)

    new = config.copy()
    _advance_flows(new, best_dt)
    if best is None:
        return new, None, best_dt

    priority, aut = best
    enabled = [
        e
        for e in network._out_edges[aut][new.locations[aut]]
        if _guard_holds(e.guard, new.valuation)
    ]
    if not enabled:
        if priority == 0:
            raise StuckLocation(
                f"{network.automata[aut].name}/{new.locations[aut]}: invariant violated "
                "with no enabled exit"
            )
        return new, None, best_dt  # delay elapsed; nothing to fire yet
    weighted = [e for e in enabled if e.weight is not None]
    edge = _pick_weighted(weighted, network.params, rng) if weighted else enabled[0]
    fired = fire(network, new, edge.action, rng=rng, noise=noise)
    return fired, edge.action, best_dt


def simulate(
    network: ShaNetwork,
    horizon: float,
    rng: np.random.Generator | int | None,
    noise: bool = True,
    max_events: int = 200_000,
) -> Run:
    """Run the network to the horizon; pure function of (network, horizon, seed)."""
    if horizon <= 0:
        raise InvalidHorizon(f"horizon must be > 0, got {horizon}")
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    config = network.initial_configuration(rng, noise)
    steps = [RunStep(0.0, None, config.locations, dict(config.valuation), config.merged_flows())]
    events = 0
    while config.clock < horizon - _EPS:
        config, event, dt = step(network, config, rng, horizon, noise)
        steps.append(
            RunStep(config.clock, event, config.locations, dict(config.valuation), config.merged_flows())
        )
        if event is not None:
            events += 1
            if events > max_events:
                raise NumericOverflow("event budget exceeded; livelocked model")
    return Run(steps=steps, horizon=horizon)


def derived_rng(master_seed: int, index: int) -> np.random.Generator:
    """Deterministic per-run stream: identical serial or parallel."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))
