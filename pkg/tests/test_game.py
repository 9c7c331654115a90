import numpy as np
import pytest

from pdptwin.dsl import parse_network_text
from pdptwin.errors import EmptyGoal, NoControllerAutomaton, PdpError
from pdptwin.game import (
    QTable,
    Strategy,
    WAIT,
    evaluate_strategy,
    recommend,
    strategy_from_csv,
    strategy_to_csv,
    synthesize,
    to_game,
)
from pdptwin.models import game_network

TOY = """
automaton doc
controller
var vent unit bool init 0
location hub
edge hub -> hub on on! reset vent:=1
edge hub -> hub on off! reset vent:=0
initial hub

automaton pat
var TV unit mL init 340
location pre flow TV a 0 b 0
location stable flow TV a -0.05 b 20
edge pre -> stable on on?
initial pre
"""


@pytest.fixture(scope="module")
def toy_game():
    return to_game(parse_network_text(TOY))


# ---------------------------------------------------------------------------
# game conversion


def test_to_game_controllable_alphabet():
    game = to_game(game_network())
    assert len(game.actions) == 10  # 4 params x up/down + on + off
    assert set(game.actions) == {
        "on", "off",
        "FIOX^up", "FIOX^down", "PEEP^up", "PEEP^down",
        "RERA^up", "RERA^down", "TVOL^up", "TVOL^down",
    }


def test_to_game_patient_untouched():
    net = game_network()
    game = to_game(net)
    pat = net.automaton_index("patient")
    assert game.network.automata[pat] == net.automata[pat]


def test_to_game_strips_controller_weights():
    net = parse_network_text(
        """
automaton doc
controller
location a rate 1.0
location b
edge a -> b on x! weight 0.5
edge a -> a on y! weight 0.5
initial a
"""
    )
    game = to_game(net)
    assert all(e.weight is None for e in game.network.automata[0].edges)


def test_to_game_requires_controller_flag():
    net = parse_network_text(
        """
automaton doc
location a
edge a -> a on x!
initial a
"""
    )
    with pytest.raises(NoControllerAutomaton):
        to_game(net)


# ---------------------------------------------------------------------------
# Q table


def test_q_update_matches_bellman():
    table = QTable(lr=0.1, gamma=0.99)
    s, s2 = ("a",), ("b",)
    table.q[s2] = {"on": 3.0, WAIT: 1.0}
    got = table.update(s, "on", reward=2.0, next_state=s2, next_choices=["on", WAIT], terminal=False)
    expected = 0.0 + 0.1 * ((2.0 + 0.99 * 3.0) - 0.0)
    assert got == pytest.approx(expected, abs=1e-12)
    got2 = table.update(s, "on", reward=1.0, next_state=s2, next_choices=["on", WAIT], terminal=True)
    expected2 = expected + 0.1 * (1.0 - expected)
    assert got2 == pytest.approx(expected2, abs=1e-12)


# ---------------------------------------------------------------------------
# synthesis on the toy game


def test_toy_strategy_turns_ventilator_on(toy_game):
    strategy = synthesize(toy_game, ["stable"], horizon=50.0, episodes=400, master_seed=3)
    initial = toy_game.network.initial_configuration(None, noise=False)
    state = toy_game.abstract_state(initial)
    assert strategy.recommend(state) == "on"


def test_goal_with_no_exits_learns_wait():
    game = to_game(
        parse_network_text(
            """
automaton doc
controller
var vent unit bool init 0
location hub
edge hub -> hub on on! reset vent:=1
initial hub

automaton pat
var TV unit mL init 400
location stable flow TV a 0 b 0
initial stable
"""
        )
    )
    strategy = synthesize(game, ["stable"], horizon=30.0, episodes=300, master_seed=1)
    for state, action in strategy.mapping.items():
        assert action == WAIT  # acting cannot beat waiting inside the goal


def test_empty_goal_rejected(toy_game):
    with pytest.raises(EmptyGoal):
        synthesize(toy_game, [], horizon=10.0, episodes=1)


def test_unvisited_state_maps_to_wait(toy_game):
    strategy = Strategy({}, toy_game.actions)
    assert recommend(strategy, ("nowhere", "x", True, True, True, True, True, False)) == WAIT


def test_synthesized_beats_random_policy(toy_game):
    strategy = synthesize(toy_game, ["stable"], horizon=50.0, episodes=400, master_seed=5)
    synth = evaluate_strategy(toy_game, strategy, 50.0, 300, master_seed=7)
    rand = evaluate_strategy(toy_game, None, 50.0, 300, master_seed=7, random_policy=True)
    assert synth.mean_sojourn > rand.mean_sojourn


def test_zero_horizon_zero_sojourn(toy_game):
    strategy = Strategy({}, toy_game.actions)
    out = evaluate_strategy(toy_game, strategy, 0.0, 10, master_seed=1)
    assert out.mean_sojourn == 0.0


def test_all_wait_on_self_stabilizing_patient():
    game = to_game(
        parse_network_text(
            """
automaton doc
controller
var vent unit bool init 0
location hub
edge hub -> hub on on! reset vent:=1
initial hub

automaton pat
var TV unit mL init 340
location pre flow TV a 0 b 2 invariant TV <= 350
location stable flow TV a 0 b 0
edge pre -> stable on TV^ok! guard TV >= 349
initial pre
"""
        )
    )
    all_wait = Strategy({}, game.actions)
    out = evaluate_strategy(game, all_wait, 60.0, 50, master_seed=2)
    # patient reaches TV=350 after 5 s on its own; sojourn = horizon - 5
    assert out.mean_sojourn == pytest.approx(55.0, abs=0.5)


# ---------------------------------------------------------------------------
# running example: the paper's illustrative mapping


def test_running_example_recommends_on_in_paper_state():
    game = to_game(game_network())
    strategy = synthesize(game, ["stable"], horizon=600.0, episodes=4000, master_seed=17)
    paper_state = ("acting_A", "q9", True, True, True, True, False, False)
    assert strategy.mapping.get(paper_state) == "on"


# ---------------------------------------------------------------------------
# strategy file round trip


def test_strategy_csv_roundtrip(toy_game):
    strategy = synthesize(toy_game, ["stable"], horizon=50.0, episodes=200, master_seed=2)
    text = strategy_to_csv(strategy)
    again = strategy_from_csv(text)
    assert again.mapping == strategy.mapping


def test_strategy_csv_rejects_bad_header():
    with pytest.raises(PdpError):
        strategy_from_csv("nope\n")
