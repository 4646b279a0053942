import numpy as np
import pytest

from qcheck import (
    QueryError,
    build_state_space,
    fully_obs_values,
    heuristic_policy,
    label_states,
    parse_jani_file,
    unfold_with_cutoffs,
)
from qcheck.queries import parse_expression

from conftest import make_em, model_path
from oracles import exact_pomdp_value


@pytest.fixture(scope="module")
def peek():
    em, _ = build_state_space(parse_jani_file(model_path("peek_guess.jani")))
    label_states(em, {"goal": parse_expression("s=7")})
    return em, em.labels["goal"]


def test_peek_guess_budget_monotone(peek):
    em, goal = peek
    prev = -1.0
    values = {}
    for budget in (1, 2, 4, 8, 16, 32, 64):
        _, bound = unfold_with_cutoffs(em, goal, "max", budget=budget)
        assert bound >= prev - 1e-12
        prev = bound
        values[budget] = bound
    # blind play guesses a coin flip; full unfolding tracks the reveal
    assert abs(values[1] - 0.5) <= 1e-6
    assert abs(values[64] - 1.0) <= 1e-6


def test_peek_guess_matches_exact(peek):
    em, goal = peek
    exact = exact_pomdp_value(em, goal, "max")
    _, bound = unfold_with_cutoffs(em, goal, "max", budget=256)
    assert bound <= exact + 1e-9
    assert abs(bound - exact) <= 1e-6


def test_bounds_are_one_sided(peek):
    em, goal = peek
    exact = exact_pomdp_value(em, goal, "max")
    for budget in (1, 2, 4, 16):
        _, lo = unfold_with_cutoffs(em, goal, "max", budget=budget)
        assert lo <= exact + 1e-9
    exact_min = exact_pomdp_value(em, goal, "min")
    for budget in (1, 2, 4, 16):
        _, hi = unfold_with_cutoffs(em, goal, "min", budget=budget)
        assert hi >= exact_min - 1e-9


def _fully_observable_pomdp():
    """Every state has its own observation: the belief MDP is the MDP."""
    em = make_em("mdp", [
        [[(1, 0.5), (2, 0.5)], [(2, 1.0)]],
        [[(3, 1.0)], [(4, 1.0)]],
        [[(4, 1.0)]],
        [[(3, 1.0)]],
        [[(4, 1.0)]],
    ])
    em.model_type = "pomdp"
    em.observation = np.arange(em.n, dtype=np.int64)
    em.n_observations = em.n
    goal = np.array([False, False, False, True, False])
    return em, goal


def test_fully_observable_degenerates_to_mdp():
    em, goal = _fully_observable_pomdp()
    from qcheck import reach_prob

    mdp = em.__class__.__new__(em.__class__)
    mdp.__dict__.update(em.__dict__)
    mdp.model_type = "mdp"
    ref = 0.5 * sum(reach_prob(mdp, goal, "max").at(0))
    _, bound = unfold_with_cutoffs(em, goal, "max", budget=64)
    assert abs(bound - ref) <= 2e-6


def test_heuristic_policy_is_observation_based(peek):
    em, goal = peek
    picks = heuristic_policy(em, goal, "max")
    assert len(picks) == em.n_observations
    vals = fully_obs_values(em, goal, "max")
    # a policy value is always a valid lower bound on the optimum
    exact = exact_pomdp_value(em, goal, "max")
    assert vals.value[em.initial] <= exact + 1e-9


def test_unfold_reward(peek):
    em, goal = peek
    # every transient state pays 1 per step; the blind optimum takes
    # 3 steps (start -> side -> guess -> outcome) before absorption
    transient = np.array(
        [em.state_dict(s)["s"] <= 6 for s in range(em.n)]
    )
    em.state_rewards.setdefault(
        "steps", np.where(transient, 1.0, 0.0)
    )
    em.choice_rewards.setdefault("steps", np.zeros(em.num_choices))
    _, bound = unfold_with_cutoffs(em, goal, "min", budget=256, reward="steps")
    assert bound >= 3.0 - 1e-6


def test_needs_observations():
    em = make_em("mdp", [[[(0, 1.0)]]])
    with pytest.raises(QueryError):
        unfold_with_cutoffs(em, np.array([True]), "max")


def test_budget_validation(peek):
    em, goal = peek
    with pytest.raises(QueryError):
        unfold_with_cutoffs(em, goal, "max", budget=0)
