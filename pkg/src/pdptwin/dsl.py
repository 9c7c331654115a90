"""Text format for automata networks, one file per network.

Sections, one declaration per line::

    automaton physician
    controller
    var vent unit bool init 0
    param alpha in [0,1] = 0.5
    location idle
    location acting_A rate lambda
    location q8 rate 0.02 flow TV a -0.05 b 20 noise 0.4 invariant TV >= 350
    edge idle -> acting_A on TV^low? guard vent < 0.5
    edge choose -> monitoring on FIOX^up! weight alpha
    initial idle

`!` marks outputs, `?` inputs. `weight` and `rate` accept a number, a
param name, or `1-<param>`. `fixed` pins an edge against structural
mutation. `controller` flags the physician-device automaton. Guards and
invariants are conjunctions `expr && expr` of `var op number`.

The serializer is the parser's inverse up to whitespace.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ParseError
from .sha import (
    Constraint,
    Edge,
    FlowCondition,
    Location,
    Param,
    Sha,
    ShaNetwork,
    Variable,
    compose_network,
    format_number,
)

_EDGE_KEYWORDS = {"guard", "weight", "reset", "fixed"}
_LOC_KEYWORDS = {"rate", "flow", "invariant"}
_OPS = ("<=", ">=", "<", ">")


def _parse_float(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"expected a number, got {tok!r}", lineno) from None


def _parse_value(tok: str) -> float | str:
    """Number, param name, or 1-<param>."""
    try:
        return float(tok)
    except ValueError:
        return tok


def _parse_constraints(tokens: list[str], lineno: int) -> tuple[Constraint, ...]:
    out = []
    parts: list[list[str]] = [[]]
    for tok in tokens:
        if tok == "&&":
            parts.append([])
        else:
            parts[-1].append(tok)
    for part in parts:
        if len(part) != 3 or part[1] not in _OPS:
            raise ParseError(f"expected 'var op number', got {' '.join(part)!r}", lineno)
        out.append(Constraint(part[0], part[1], _parse_float(part[2], lineno)))
    return tuple(out)


def _split_clauses(tokens: list[str], keywords: set[str], lineno: int) -> list[tuple[str, list[str]]]:
    """Group tokens into (keyword, args) clauses."""
    clauses: list[tuple[str, list[str]]] = []
    for tok in tokens:
        if tok in keywords:
            clauses.append((tok, []))
        elif clauses:
            clauses[-1][1].append(tok)
        else:
            raise ParseError(f"unexpected token {tok!r}", lineno)
    return clauses


class _AutomatonDraft:
    def __init__(self, name: str, lineno: int):
        self.name = name
        self.lineno = lineno
        self.controller = False
        self.variables: list[Variable] = []
        self.params: list[Param] = []
        self.locations: list[Location] = []
        self.edges: list[Edge] = []
        self.initial: str | None = None

    def build(self) -> Sha:
        if self.initial is None:
            raise ParseError(f"automaton {self.name!r} has no initial location", self.lineno)
        return Sha(
            name=self.name,
            variables=tuple(self.variables),
            params=tuple(self.params),
            locations=tuple(self.locations),
            edges=tuple(self.edges),
            initial=self.initial,
            controller=self.controller,
        )


def parse_network_text(
    text: str,
    safe_ranges: dict[str, tuple[float, float]] | None = None,
) -> ShaNetwork:
    shas = parse_automata(text)
    return compose_network(shas, safe_ranges)


def parse_automata(text: str) -> list[Sha]:
    drafts: list[_AutomatonDraft] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head, rest = tokens[0], tokens[1:]
        if head == "automaton":
            if len(rest) != 1:
                raise ParseError("automaton takes exactly one name", lineno)
            drafts.append(_AutomatonDraft(rest[0], lineno))
            continue
        if not drafts:
            raise ParseError(f"{head!r} before any 'automaton' line", lineno)
        draft = drafts[-1]
        if head == "controller":
            draft.controller = True
        elif head == "var":
            # var <name> unit <u> init <v>
            if len(rest) != 5 or rest[1] != "unit" or rest[3] != "init":
                raise ParseError("expected 'var <name> unit <u> init <v>'", lineno)
            draft.variables.append(Variable(rest[0], rest[2], _parse_float(rest[4], lineno)))
        elif head == "param":
            # param <name> in [lo,hi] = v
            joined = " ".join(rest)
            try:
                name, tail = rest[0], joined.split("in", 1)[1]
                interval, value = tail.split("=", 1)
                lo, hi = interval.strip().strip("[]").split(",")
                draft.params.append(
                    Param(name, float(lo), float(hi), float(value.strip()))
                )
            except (IndexError, ValueError):
                raise ParseError("expected 'param <name> in [lo,hi] = v'", lineno) from None
        elif head == "location":
            if not rest:
                raise ParseError("location needs an id", lineno)
            loc_id = rest[0]
            rate: float | str | None = None
            flows: dict[str, FlowCondition] = {}
            invariant: tuple[Constraint, ...] = ()
            for kw, args in _split_clauses(rest[1:], _LOC_KEYWORDS, lineno):
                if kw == "rate":
                    if len(args) != 1:
                        raise ParseError("rate takes one value", lineno)
                    rate = _parse_value(args[0])
                elif kw == "flow":
                    # flow <var> a <a> b <b> [noise <σ>]
                    if len(args) not in (5, 7) or args[1] != "a" or args[3] != "b":
                        raise ParseError("expected 'flow <var> a <a> b <b> [noise <s>]'", lineno)
                    noise = 0.0
                    if len(args) == 7:
                        if args[5] != "noise":
                            raise ParseError("expected 'noise <s>'", lineno)
                        noise = _parse_float(args[6], lineno)
                    flows[args[0]] = FlowCondition(
                        _parse_float(args[2], lineno), _parse_float(args[4], lineno), noise
                    )
                else:
                    invariant = _parse_constraints(args, lineno)
            draft.locations.append(Location(loc_id, rate, flows, invariant))
        elif head == "edge":
            # edge <src> -> <dst> on <action>[!|?] [guard ...] [weight w] [reset v:=x]* [fixed]
            if len(rest) < 5 or rest[1] != "->" or rest[3] != "on":
                raise ParseError("expected 'edge <src> -> <dst> on <action>[!|?] ...'", lineno)
            src, dst, action_tok = rest[0], rest[2], rest[4]
            if action_tok.endswith("!"):
                kind = "output"
            elif action_tok.endswith("?"):
                kind = "input"
            else:
                raise ParseError("action must end with '!' (output) or '?' (input)", lineno)
            action = action_tok[:-1]
            guard: tuple[Constraint, ...] = ()
            weight: float | str | None = None
            resets: list[tuple[str, float]] = []
            removable = True
            for kw, args in _split_clauses(rest[5:], _EDGE_KEYWORDS, lineno):
                if kw == "guard":
                    guard = _parse_constraints(args, lineno)
                elif kw == "weight":
                    if len(args) != 1:
                        raise ParseError("weight takes one value", lineno)
                    weight = _parse_value(args[0])
                elif kw == "reset":
                    if len(args) != 1 or ":=" not in args[0]:
                        raise ParseError("expected 'reset <var>:=<v>'", lineno)
                    var, value = args[0].split(":=", 1)
                    resets.append((var, _parse_float(value, lineno)))
                else:  # fixed
                    if args:
                        raise ParseError("'fixed' takes no arguments", lineno)
                    removable = False
            draft.edges.append(
                Edge(src, dst, action, kind, guard, weight, tuple(resets), removable)
            )
        elif head == "initial":
            if len(rest) != 1:
                raise ParseError("initial takes exactly one location id", lineno)
            draft.initial = rest[0]
        else:
            raise ParseError(f"unknown declaration {head!r}", lineno)
    if not drafts:
        raise ParseError("no automaton declared", 1)
    return [d.build() for d in drafts]


def load_network(path: str | Path,
                 safe_ranges: dict[str, tuple[float, float]] | None = None) -> ShaNetwork:
    return parse_network_text(Path(path).read_text(encoding="utf-8"), safe_ranges)


# ---------------------------------------------------------------------------
# serialization


def _value_text(v: float | str) -> str:
    return v if isinstance(v, str) else format_number(v)


def serialize_sha(sha: Sha) -> str:
    lines = [f"automaton {sha.name}"]
    if sha.controller:
        lines.append("controller")
    for v in sha.variables:
        lines.append(f"var {v.name} unit {v.unit} init {format_number(v.init)}")
    for p in sha.params:
        lines.append(
            f"param {p.name} in [{format_number(p.lo)},{format_number(p.hi)}] = {format_number(p.value)}"
        )
    for loc in sha.locations:
        parts = [f"location {loc.id}"]
        if loc.rate is not None:
            parts.append(f"rate {_value_text(loc.rate)}")
        for var, fc in loc.flows.items():
            flow = f"flow {var} a {format_number(fc.a)} b {format_number(fc.b)}"
            if fc.noise:
                flow += f" noise {format_number(fc.noise)}"
            parts.append(flow)
        if loc.invariant:
            parts.append("invariant " + " && ".join(c.text() for c in loc.invariant))
        lines.append(" ".join(parts))
    for e in sha.edges:
        mark = "!" if e.kind == "output" else "?"
        parts = [f"edge {e.src} -> {e.dst} on {e.action}{mark}"]
        if e.guard:
            parts.append("guard " + " && ".join(c.text() for c in e.guard))
        if e.weight is not None:
            parts.append(f"weight {_value_text(e.weight)}")
        for var, value in e.resets:
            parts.append(f"reset {var}:={format_number(value)}")
        if not e.removable:
            parts.append("fixed")
        lines.append(" ".join(parts))
    lines.append(f"initial {sha.initial}")
    return "\n".join(lines) + "\n"


def serialize_network(network: ShaNetwork) -> str:
    return "\n".join(serialize_sha(sha) for sha in network.automata)


def save_network(network: ShaNetwork, path: str | Path) -> None:
    Path(path).write_text(serialize_network(network), encoding="utf-8")
