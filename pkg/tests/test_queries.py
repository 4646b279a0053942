import pytest

from qcheck import QueryError, parse_query


def test_reach_max():
    q = parse_query("Pmax=?[F x=3]")
    assert q.kind == "reach-prob" and q.direction == "max"


def test_reach_directionless():
    q = parse_query("P=?[F done]")
    assert q.kind == "reach-prob" and q.direction is None


def test_time_bounded():
    q = parse_query("P=?[F<=12.5 full]")
    assert q.kind == "transient-prob" and q.time_bound == 12.5


def test_robust_directions():
    q = parse_query("Pmaxmin=?[F g]")
    assert q.kind == "robust-reach"
    assert (q.direction, q.inner_direction) == ("max", "min")
    assert parse_query("Pminmax=?[F g]").inner_direction == "max"


def test_reward_named():
    q = parse_query('R{"time"}min=?[F stop]')
    assert q.kind == "total-reward" and q.reward == "time" and q.direction == "min"


def test_reward_unnamed():
    q = parse_query("Rmax=?[F stop]")
    assert q.reward is None


def test_lra():
    q = parse_query("LRAmax=?[gain]")
    assert q.kind == "lra-reward" and q.reward == "gain"
    assert parse_query('LRA min =? [ "gain" ]').direction == "min"


def test_steady_state():
    q = parse_query("S=?[up]")
    assert q.kind == "steady-state"


def test_game_coalition():
    q = parse_query("<<a,b>> Pmax=?[F win]")
    assert q.kind == "game-reach" and q.coalition == ["a", "b"]
    q = parse_query("game<a> Rmin=?[F end]")
    assert q.kind == "game-reward" and q.coalition == ["a"]


def test_multi_achieve():
    q = parse_query("multi(Pmax[F a], Pmin[F b]) >= (0.5, 0.25)")
    assert q.kind == "multi-achieve" and q.point == [0.5, 0.25]
    assert q.objectives[1].direction == "min"


def test_multi_achieve_inline_bounds():
    q = parse_query("multi(Pmax[F a]>=0.5, Pmin[F b]<=0.1)")
    assert q.kind == "multi-achieve" and q.point == [0.5, 0.1]


def test_multi_numerical():
    q = parse_query("multi(Pmax[F a], Pmax[F b]>=0.5)")
    assert q.kind == "multi-numerical"
    assert q.objectives[0].bound is None


def test_pareto():
    q = parse_query("pareto(Pmax[F a], R{\"r\"}max[F b])")
    assert q.kind == "multi-pareto"
    assert q.objectives[1].reward == "r"


def test_rare():
    q = parse_query("rare P=?[F<=100 overflow]")
    assert q.kind == "rare-estimate" and q.time_bound == 100


def test_goal_expression_grammar():
    q = parse_query("Pmax=?[F (x>1 & y<=2) | !done]")
    assert q.goal is not None


@pytest.mark.parametrize("bad", [
    "Q=?[F x]",
    "Pmax=?[G x]",
    "Pmax=?[F x] trailing",
    "multi(Pmax[F a])",
    "pareto(Pmax[F a])",
    "Pup=?[F x]",
    "<<>> Pmax=?[F x]",
    "multi(Pmax[F a], Pmax[F b]) >= (0.5)",
])
def test_rejects(bad):
    with pytest.raises(QueryError):
        parse_query(bad)
