"""Controller synthesis on the 1 1/2-player game reading of the network.

The physician-device automaton's output edges become controllable: they
fire when the strategy says so (immediately, the non-lazy reading)
instead of by delays and probabilistic weights; the patient stays fully
stochastic and untouched. States are abstracted to the configuration
tuple the strategy conditions on: both locations, the five in-range
flags, and the ventilation flag.

Synthesis is episodic epsilon-greedy Q-learning with the time spent in
the goal locations as reward. Each decision offers `wait` (let the
environment move once) plus every currently enabled controllable
action; determinization takes the argmax with `wait` winning ties,
and unvisited states default to `wait`.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EmptyGoal, NoControllerAutomaton, PdpError
from .sha import Configuration, ShaNetwork, _advance_flows, _guard_holds, fire

WAIT = "wait"

AbstractState = tuple  # (ph_loc, pa_loc, r1..r5, r_on)


@dataclass
class Game:
    network: ShaNetwork  # controller weights stripped
    controller: int
    actions: tuple[str, ...]  # controllable alphabet, declaration order

    def abstract_state(self, config: Configuration) -> AbstractState:
        flags = config.vitals_flags(self.network)
        others = tuple(
            loc for i, loc in enumerate(config.locations) if i != self.controller
        )
        return (config.locations[self.controller], *others, *flags, config.r_on(self.network))

    def enabled_actions(self, config: Configuration) -> list[str]:
        out = []
        loc = config.locations[self.controller]
        for e in self.network._out_edges[self.controller][loc]:
            if e.action not in out and _guard_holds(e.guard, config.valuation):
                out.append(e.action)
        return out


def to_game(network: ShaNetwork) -> Game:
    """Mark the controller's outputs controllable and strip their weights."""
    idx = network.controller_index()
    if idx is None:
        raise NoControllerAutomaton("no automaton carries the controller flag")
    controller = network.automata[idx]
    stripped = replace(
        controller,
        edges=tuple(
            replace(e, weight=None) if e.kind == "output" else e for e in controller.edges
        ),
    )
    automata = tuple(
        stripped if i == idx else sha for i, sha in enumerate(network.automata)
    )
    game_net = ShaNetwork(automata, dict(network.safe_ranges), network.vent_var)
    actions = []
    for e in stripped.edges:
        if e.kind == "output" and e.action not in actions:
            actions.append(e.action)
    return Game(game_net, idx, tuple(actions))


def _environment_step(
    game: Game, config: Configuration, rng, horizon: float
) -> tuple[Configuration, float]:
    """Let the stochastic side move once; the controller never self-fires.

    Mirrors sha.step but skips the controller's exit delays (controllable
    edges are strategy-governed, not spontaneous).
    """
    from .sha import _earliest_violation, _pick_weighted, fire as _fire

    net = game.network
    remaining = horizon - config.clock
    if remaining <= 1e-9:
        return config, 0.0
    best_dt = remaining
    best = None
    for i in range(len(net.automata)):
        t = _earliest_violation(net, config, i)
        if t is not None and t < best_dt - 1e-9:
            best_dt, best = t, (0, i)
    for i in range(len(net.automata)):
        if i == game.controller:
            continue
        loc = net._loc[i][config.locations[i]]
        rate = net.rate_of(i, loc)
        if rate is None or not net._out_edges[i][loc.id]:
            continue
        d = rng.exponential(1.0 / rate)
        if d < best_dt - 1e-9:
            best_dt, best = d, (1, i)
    new = config.copy()
    _advance_flows(new, best_dt)
    if best is None:
        return new, best_dt
    _, aut = best
    enabled = [
        e for e in net._out_edges[aut][new.locations[aut]] if _guard_holds(e.guard, new.valuation)
    ]
    if not enabled:
        return new, best_dt
    weighted = [e for e in enabled if e.weight is not None]
    edge = _pick_weighted(weighted, net.params, rng) if weighted else enabled[0]
    return _fire(net, new, edge.action, rng=rng), best_dt


@dataclass
class QTable:
    """Tabular action values with the standard one-step backup.

    Discounting is continuous-time: a transition spanning dt seconds
    carries the factor gamma**dt, so state values do not depend on how
    much episode time has already elapsed.
    """

    lr: float = 0.1
    gamma: float = 0.99
    lr_decay_visits: int | None = None  # None: constant lr (the tested backup)
    q: dict[AbstractState, dict[str, float]] = field(default_factory=dict)
    visits: dict[tuple[AbstractState, str], int] = field(default_factory=dict)

    def value(self, state: AbstractState, action: str) -> float:
        return self.q.get(state, {}).get(action, 0.0)

    def best(self, state: AbstractState, choices: list[str]) -> float:
        return max((self.value(state, a) for a in choices), default=0.0)

    def update(
        self,
        state: AbstractState,
        action: str,
        reward: float,
        next_state: AbstractState,
        next_choices: list[str],
        terminal: bool,
        discount: float | None = None,
    ) -> float:
        if discount is None:
            discount = self.gamma
        target = reward if terminal else reward + discount * self.best(next_state, next_choices)
        slot = self.q.setdefault(state, {})
        old = slot.get(action, 0.0)
        lr = self.lr
        if self.lr_decay_visits is not None:
            n = self.visits.get((state, action), 0)
            self.visits[(state, action)] = n + 1
            lr = self.lr * self.lr_decay_visits / (self.lr_decay_visits + n)
        slot[action] = old + lr * (target - old)
        return slot[action]


@dataclass
class Strategy:
    mapping: dict[AbstractState, str]
    actions: tuple[str, ...]
    coverage: float = 0.0

    def recommend(self, state: AbstractState) -> str:
        return self.mapping.get(tuple(state), WAIT)


def recommend(strategy: Strategy, state: AbstractState) -> str:
    return strategy.recommend(state)


def _goal_locations(config_locs: tuple[str, ...], goals: set[str]) -> bool:
    return bool(goals.intersection(config_locs))


#: seconds one controllable intervention takes to execute in the game
ACTION_SECONDS = 8.0


def _discounted_sojourn(dt: float, gamma: float) -> float:
    """Integral of gamma**u over [0, dt] (the discounted goal sojourn)."""
    if dt <= 0:
        return 0.0
    rho = -math.log(gamma)
    return (1.0 - gamma**dt) / rho


def _transition(
    game: Game,
    config: Configuration,
    action: str,
    rng,
    horizon: float,
    goal_set: set[str],
    gamma: float,
    action_seconds: float = ACTION_SECONDS,
) -> tuple[Configuration, float, float]:
    """Apply one decision; returns (config, discounted reward, discount).

    `wait` lets the environment move once. A controllable action takes
    action_seconds of execution time (the environment keeps evolving,
    including forced crossings) and then fires, if still enabled.
    """
    reward = 0.0
    elapsed = 0.0
    if action == WAIT:
        in_goal = _goal_locations(config.locations, goal_set)
        config, dt = _environment_step(game, config, rng, horizon)
        if in_goal:
            reward += _discounted_sojourn(dt, gamma)
        elapsed = dt
    else:
        target = min(config.clock + action_seconds, horizon)
        while config.clock < target - 1e-9:
            in_goal = _goal_locations(config.locations, goal_set)
            config, dt = _environment_step(game, config, rng, target)
            if in_goal:
                reward += gamma**elapsed * _discounted_sojourn(dt, gamma)
            elapsed += dt
        if action in game.enabled_actions(config):
            config = fire(game.network, config, action, rng=rng)
    return config, reward, gamma**elapsed


def _exploring_start(game: Game, rng) -> Configuration:
    """A random configuration: uniform locations (sink excluded), variables
    near the sampled location's flow equilibrium, ventilation coin-flipped."""
    net = game.network
    config = net.initial_configuration(rng)
    locations = []
    for sha in net.automata:
        ids = [l.id for l in sha.locations if l.id != "sink"]
        locations.append(ids[rng.integers(len(ids))])
    config.locations = tuple(locations)
    for i, sha in enumerate(net.automata):
        loc = sha.location(config.locations[i])
        for var, fc in loc.flows.items():
            if fc.a < 0:
                eq = -fc.b / fc.a
                config.valuation[var] = eq + rng.normal(0.0, 0.03 * abs(eq) + 1.0)
    if net.vent_var in config.valuation:
        config.valuation[net.vent_var] = float(rng.integers(2))
    for i in range(len(net.automata)):
        from .sha import _enter_location

        _enter_location(net, config, i, config.locations[i], rng, True)
    return config


def synthesize(
    game: Game,
    goals: list[str] | tuple[str, ...],
    horizon: float = 1200.0,
    episodes: int = 20000,
    master_seed: int = 0,
    lr: float = 0.1,
    gamma: float = 0.97,
    eps_start: float = 0.2,
    eps_end: float = 0.0,
    max_chained_actions: int = 10,
    explore_starts: float = 0.5,
    tie_tolerance: float = 0.06,
    untried_bonus: float = 2000.0,
) -> Strategy:
    """Episodic Q-learning of goal-sojourn maximization; determinized.

    A fraction of episodes begin from exploring starts so that states off
    the greedy path (the mapping table is total over visited states, and
    the runtime may land anywhere) still receive value estimates.
    """
    if not goals:
        raise EmptyGoal("goal location set is empty")
    goal_set = set(goals)
    rng = np.random.default_rng(master_seed)
    table = QTable(lr=lr, gamma=gamma)
    # two-phase schedule: constant lr while the policy forms, then a refresh
    # phase that re-sweeps every state's actions with 1/(1+n) sample averaging
    # (entries estimated against early, still-zero successor values would
    # otherwise stay stale forever and leave the early incumbent in charge)
    settle_at = int(episodes * 0.5)
    for ep in range(episodes):
        if ep == settle_at:
            table.lr = 1.0
            table.lr_decay_visits = 1
            table.visits = {}
        frac = ep / max(episodes - 1, 1)
        eps = eps_start + (eps_end - eps_start) * frac
        if rng.random() < explore_starts:
            config = _exploring_start(game, rng)
        else:
            config = game.network.initial_configuration(rng)
        state = game.abstract_state(config)
        chained = 0
        episode: list[tuple] = []
        while config.clock < horizon - 1e-9:
            choices = [WAIT] + game.enabled_actions(config)
            if chained >= max_chained_actions:
                action = WAIT  # anti-livelock: force the environment to move
            elif rng.random() < eps:
                action = choices[rng.integers(len(choices))]
            else:
                # an optimistic bonus for under-tried actions sweeps each
                # state's action set before the estimates are trusted
                def score(a):
                    n = table.visits.get((state, a), 0)
                    bonus = untried_bonus if n < 2 else 0.0
                    return table.value(state, a) + bonus

                action = max(choices, key=score)
            chained = chained + 1 if action != WAIT else 0
            config, reward, discount = _transition(
                game, config, action, rng, horizon, goal_set, gamma
            )
            next_state = game.abstract_state(config)
            terminal = config.clock >= horizon - 1e-9
            next_choices = [WAIT] + game.enabled_actions(config)
            episode.append(
                (state, action, reward, next_state, next_choices, terminal, discount)
            )
            state = next_state
        # backward replay: the sparse goal-sojourn reward earned at the end
        # of an exploratory episode propagates through the whole chain in one
        # pass of ordinary one-step backups
        for transition in reversed(episode):
            table.update(*transition)
    # determinize: argmax with declaration-order tie-breaking, where values
    # within tie_tolerance (relative) of the maximum count as tied
    mapping: dict[AbstractState, str] = {}
    for s, values in table.q.items():
        ordered = [WAIT] + [a for a in game.actions if a in values]
        best = max(values.get(a, 0.0) for a in ordered)
        band = abs(best) * tie_tolerance
        mapping[s] = next(a for a in ordered if values.get(a, 0.0) >= best - band)
    ph_locs = len(game.network.automata[game.controller].locations)
    pa_locs = 1
    for i, sha in enumerate(game.network.automata):
        if i != game.controller:
            pa_locs *= len(sha.locations)
    coverage = len(mapping) / (ph_locs * pa_locs * 64)
    return Strategy(mapping, game.actions, coverage)


@dataclass
class StrategyOutcome:
    mean_sojourn: float
    mean_final_in_range: float
    per_vital_in_range: dict[str, float]


def evaluate_strategy(
    game: Game,
    strategy: Strategy | None,
    horizon: float,
    n_runs: int,
    master_seed: int = 0,
    random_policy: bool = False,
    goals: tuple[str, ...] = ("stable",),
) -> StrategyOutcome:
    """Simulate the game under a policy; report goal sojourn and final flags.

    strategy=None with random_policy=True picks uniformly among the
    enabled actions and wait (the baseline policy).
    """
    from .sha import VITALS, derived_rng

    goal_set = set(goals)
    sojourns = []
    finals = []
    per_vital = {v: 0 for v in VITALS}
    for i in range(n_runs):
        rng = derived_rng(master_seed, i)
        config = game.network.initial_configuration(rng)
        sojourn = 0.0
        chained = 0
        while config.clock < horizon - 1e-9:
            choices = [WAIT] + game.enabled_actions(config)
            if random_policy:
                action = choices[rng.integers(len(choices))] if chained < 10 else WAIT
            else:
                action = strategy.recommend(game.abstract_state(config))
                if action not in choices:
                    action = WAIT
                if chained >= 10:
                    action = WAIT
            chained = chained + 1 if action != WAIT else 0
            before = config.clock
            in_goal = _goal_locations(config.locations, goal_set)
            if action == WAIT:
                config, _ = _environment_step(game, config, rng, horizon)
            else:
                target = min(config.clock + ACTION_SECONDS, horizon)
                while config.clock < target - 1e-9:
                    config, _ = _environment_step(game, config, rng, target)
                if action in game.enabled_actions(config):
                    config = fire(game.network, config, action, rng=rng)
            if in_goal:
                sojourn += config.clock - before
        flags = config.vitals_flags(game.network)
        finals.append(sum(flags))
        for v, ok in zip(VITALS, flags):
            per_vital[v] += bool(ok)
        sojourns.append(sojourn)
    return StrategyOutcome(
        float(np.mean(sojourns)),
        float(np.mean(finals)),
        {v: per_vital[v] / n_runs for v in per_vital},
    )


# ---------------------------------------------------------------------------
# strategy file (mapping table)


def strategy_to_csv(strategy: Strategy) -> str:
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["ph_loc", "pa_loc", "r1", "r2", "r3", "r4", "r5", "r_on", "action"])
    for state in sorted(strategy.mapping, key=repr):
        ph, pa, r1, r2, r3, r4, r5, r_on = state
        w.writerow(
            [ph, pa] + ["T" if b else "F" for b in (r1, r2, r3, r4, r5, r_on)]
            + [strategy.mapping[state]]
        )
    return out.getvalue()


def strategy_from_csv(text: str, actions: tuple[str, ...] = ()) -> Strategy:
    rows = list(csv.reader(io.StringIO(text)))
    header = ["ph_loc", "pa_loc", "r1", "r2", "r3", "r4", "r5", "r_on", "action"]
    if not rows or rows[0] != header:
        raise PdpError("strategy CSV must start with the mapping-table header")
    mapping: dict[AbstractState, str] = {}
    seen_actions = []
    for row in rows[1:]:
        if not row:
            continue
        ph, pa, *flags, action = row
        state = (ph, pa, *[f == "T" for f in flags])
        mapping[state] = action
        if action != WAIT and action not in seen_actions:
            seen_actions.append(action)
    return Strategy(mapping, actions or tuple(seen_actions))


def save_strategy(strategy: Strategy, path: str | Path) -> None:
    Path(path).write_text(strategy_to_csv(strategy), encoding="utf-8")


def load_strategy(path: str | Path) -> Strategy:
    return strategy_from_csv(Path(path).read_text(encoding="utf-8"))
