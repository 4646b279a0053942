#!/usr/bin/env python3
"""Regenerate the bundled JANI models.

Run from the repository root:  python3 models/generate.py
Every file in this directory except the manifest and this script is
produced here; edit the builders, not the JSON.
"""

import json
import os

OUT = os.path.dirname(os.path.abspath(__file__))


def op(o, left, right):
    return {"op": o, "left": left, "right": right}


def ite(c, t, e):
    return {"op": "ite", "if": c, "then": t, "else": e}


def conj(*terms):
    e = terms[0]
    for t in terms[1:]:
        e = op("∧", e, t)
    return e


def intvar(name, lo, hi, init=None):
    return {
        "name": name,
        "type": {"kind": "bounded", "base": "int", "lower-bound": lo, "upper-bound": hi},
        "initial-value": lo if init is None else init,
    }


def edge(guard, dests, action=None, rate=None):
    e = {"location": "l", "guard": {"exp": guard}, "destinations": dests}
    if action is not None:
        e["action"] = action
    if rate is not None:
        e["rate"] = {"exp": rate}
    return e


def dest(prob, assigns):
    return {
        "location": "l",
        "probability": {"exp": prob},
        "assignments": [{"ref": k, "value": v} for k, v in assigns],
    }


def model(name, mtype, variables, edges, **extra):
    doc = {
        "jani-version": 1,
        "name": name,
        "type": mtype,
        "variables": variables,
        "automata": [
            {
                "name": name,
                "locations": [{"name": "l"}],
                "initial-locations": ["l"],
                "edges": edges,
            }
        ],
    }
    doc.update(extra)
    return doc


def write(doc, filename):
    path = os.path.join(OUT, filename)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    print(f"wrote {path}")


# ---------------------------------------------------------------- coin / consensus
def shared_coin(n, k_default):
    """Randomized consensus shared-coin protocol, n processes.

    Each process repeatedly flips a local coin and moves a shared counter;
    once the counter leaves the middle band the process decides. The
    scheduler picks which process acts, so the model is an MDP.
    """
    rng = op("*", op("*", 2, op("+", "K", 1)), n)  # counter range
    left, right = n, op("-", rng, n)
    variables = [intvar("counter", 0, op("*", op("*", 2, op("+", "K", 1)), n),
                        init=op("*", op("+", "K", 1), n))]
    edges = []
    for i in range(1, n + 1):
        pc, coin = f"pc{i}", f"coin{i}"
        variables += [intvar(pc, 0, 3), intvar(coin, 0, 1)]
        edges += [
            edge(op("=", pc, 0), [
                dest(op("/", 1, 2), [(coin, 0), (pc, 1)]),
                dest(op("/", 1, 2), [(coin, 1), (pc, 1)]),
            ]),
            edge(conj(op("=", pc, 1), op("=", coin, 0), op(">", "counter", 0)),
                 [dest(1, [("counter", op("-", "counter", 1)), (pc, 2), (coin, 0)])]),
            edge(conj(op("=", pc, 1), op("=", coin, 1), op("<", "counter", rng)),
                 [dest(1, [("counter", op("+", "counter", 1)), (pc, 2), (coin, 0)])]),
            edge(conj(op("=", pc, 2), op("≤", "counter", left)),
                 [dest(1, [(pc, 3), (coin, 0)])]),
            edge(conj(op("=", pc, 2), op("≥", "counter", right)),
                 [dest(1, [(pc, 3), (coin, 1)])]),
            edge(conj(op("=", pc, 2), op(">", "counter", left), op("<", "counter", right)),
                 [dest(1, [(pc, 0)])]),
        ]
    all_done = conj(*[op("=", f"pc{i}", 3) for i in range(1, n + 1)])
    edges.append(edge(all_done, [dest(1, [])]))
    return model(
        f"shared-coin-{n}", "mdp", variables, edges,
        constants=[{"name": "K"}] if k_default is None
        else [{"name": "K", "value": k_default}],
        **{"x-rewards": [
            {"name": "done", "state-reward": ite(all_done, 1, 0)},
        ]},
    )


# ---------------------------------------------------------------- token ring
def token_ring(n):
    """Self-stabilising token ring: a scheduled token holder passes its
    token to a uniformly random neighbour; colliding tokens merge. From
    the all-tokens state every non-empty token set is reachable."""
    variables = [intvar(f"q{i}", 0, 1, init=1) for i in range(1, n + 1)]
    edges = []
    for i in range(1, n + 1):
        left = (i - 2) % n + 1
        right = i % n + 1
        edges.append(edge(op("=", f"q{i}", 1), [
            dest(op("/", 1, 2), [(f"q{i}", 0), (f"q{left}", 1)]),
            dest(op("/", 1, 2), [(f"q{i}", 0), (f"q{right}", 1)]),
        ]))
    total = f"q{1}"
    for i in range(2, n + 1):
        total = op("+", total, f"q{i}")
    return model(
        f"token-ring-{n}", "mdp", variables, edges,
        **{"x-rewards": [
            {"name": "stable", "state-reward": ite(op("=", total, 1), 1, 0)},
        ]},
    )


# ---------------------------------------------------------------- small fixtures
def die():
    """Knuth-Yao six-sided die from a fair coin (13-state DTMC)."""
    variables = [intvar("s", 0, 7), intvar("d", 0, 6)]
    half = op("/", 1, 2)
    steps = {0: (1, 2), 1: (3, 4), 2: (5, 6), 3: (1, None), 6: (2, None)}
    edges = []
    for s, (a, b) in steps.items():
        if b is None:  # loop-back state: second branch rolls a value
            val = {3: 1, 6: 6}[s]
            edges.append(edge(op("=", "s", s), [
                dest(half, [("s", a)]),
                dest(half, [("s", 7), ("d", val)]),
            ]))
        else:
            edges.append(edge(op("=", "s", s), [
                dest(half, [("s", a)]),
                dest(half, [("s", b)]),
            ]))
    for s, (lo, hi) in {4: (2, 3), 5: (4, 5)}.items():
        edges.append(edge(op("=", "s", s), [
            dest(half, [("s", 7), ("d", lo)]),
            dest(half, [("s", 7), ("d", hi)]),
        ]))
    edges.append(edge(op("=", "s", 7), [dest(1, [])]))
    return model("knuth-yao-die", "dtmc", variables, edges, **{"x-rewards": [
        {"name": "flips", "edge-rewards": [
            {"action": None, "value": ite(op("<", "s", 7), 1, 0)},
        ]},
    ]})


def two_goal_mdp():
    """One controlled split between two absorbing goals plus a costed
    detour; exercises multi-objective queries from the command line."""
    variables = [intvar("s", 0, 2)]
    edges = [
        edge(op("=", "s", 0), [dest(1, [("s", 1)])], action="a"),
        edge(op("=", "s", 0), [dest(1, [("s", 2)])], action="b"),
        edge(op("=", "s", 1), [dest(1, [])]),
        edge(op("=", "s", 2), [dest(1, [])]),
    ]
    return model("two-goal", "mdp", variables, edges, **{"x-rewards": [
        {"name": "cost", "edge-rewards": [
            {"action": "a", "value": 1},
            {"action": "b", "value": 3},
        ]},
    ]})


def simple_game():
    """Four-outcome turn game: the maximizer either takes a fair lottery
    or hands the move to the minimizer, who picks between goal and sink."""
    variables = [intvar("s", 0, 4)]
    edges = [
        edge(op("=", "s", 0), [dest(1, [("s", 1)])], action="a"),
        edge(op("=", "s", 0), [
            dest(op("/", 1, 2), [("s", 2)]),
            dest(op("/", 1, 2), [("s", 3)]),
        ], action="b"),
        edge(op("=", "s", 1), [dest(1, [("s", 2)])], action="c"),
        edge(op("=", "s", 1), [dest(1, [("s", 3)])], action="d"),
        edge(op("≥", "s", 2), [dest(1, [])]),
    ]
    return model(
        "handoff-game", "tsg", variables, edges,
        **{"x-players": [
            {"name": "one", "states": op("≠", "s", 1)},
            {"name": "two", "states": op("=", "s", 1)},
        ],
           "x-rewards": [{"name": "moves", "edge-rewards": [
               {"action": "a", "value": 1},
               {"action": "b", "value": 1},
               {"action": "c", "value": 1},
               {"action": "d", "value": 1},
           ]}]},
    )


def peek_guess_pomdp():
    """Peek-then-guess: a hidden fair choice is revealed on the way, but
    the two guessing states share an observation, so only a belief-aware
    policy can exploit the reveal."""
    variables = [intvar("s", 0, 8)]
    # 0 start; 1/2 hidden sides (shared obs); 3/4 reveal; 5/6 guess
    # states (shared obs); 7 goal; 8 sink
    edges = [
        edge(op("=", "s", 0), [
            dest(op("/", 1, 2), [("s", 1)]),
            dest(op("/", 1, 2), [("s", 2)]),
        ]),
        edge(op("=", "s", 1), [dest(1, [("s", 3)])], action="peek"),
        edge(op("=", "s", 2), [dest(1, [("s", 4)])], action="peek"),
        edge(op("=", "s", 3), [dest(1, [("s", 5)])], action="go"),
        edge(op("=", "s", 4), [dest(1, [("s", 6)])], action="go"),
        edge(op("=", "s", 5), [dest(1, [("s", 7)])], action="guessL"),
        edge(op("=", "s", 5), [dest(1, [("s", 8)])], action="guessR"),
        edge(op("=", "s", 6), [dest(1, [("s", 8)])], action="guessL"),
        edge(op("=", "s", 6), [dest(1, [("s", 7)])], action="guessR"),
        edge(op("≥", "s", 7), [dest(1, [])]),
    ]
    obs = ite(op("≤", "s", 2), 0,
              ite(op("=", "s", 3), 1,
                  ite(op("=", "s", 4), 2,
                      ite(op("≤", "s", 6), 3,
                          ite(op("=", "s", 7), 4, 5)))))
    return model(
        "peek-guess", "pomdp", variables, edges,
        **{"x-observations": [obs],
           "x-rewards": [{"name": "peeks", "edge-rewards": [
               {"action": "peek", "value": 1},
           ]}]},
    )


def rare_chain(levels=6, p=0.1):
    """Geometric failure chain: each level advances with probability p and
    drops into the absorbing miss state otherwise; P(F top) = p^levels."""
    top, miss = levels, levels + 1
    variables = [intvar("v", 0, miss)]
    edges = [
        edge(op("<", "v", top), [
            dest(p, [("v", op("+", "v", 1))]),
            dest(1 - p, [("v", miss)]),
        ]),
        edge(op("≥", "v", top), [dest(1, [])]),
    ]
    return model(f"rare-chain-{levels}", "dtmc", variables, edges)


def tandem(cap=6, lam=1.0, mu=1.5):
    """Two exponential queues in series; the rare event is the second
    queue overflowing within a deadline."""
    variables = [intvar("q1", 0, cap), intvar("q2", 0, cap)]
    edges = [
        edge(op("<", "q1", cap),
             [dest(1, [("q1", op("+", "q1", 1))])], rate=lam),
        edge(conj(op(">", "q1", 0), op("<", "q2", cap)),
             [dest(1, [("q1", op("-", "q1", 1)), ("q2", op("+", "q2", 1))])],
             rate=mu),
        edge(op(">", "q2", 0),
             [dest(1, [("q2", op("-", "q2", 1))])], rate=mu),
    ]
    return model("tandem-overflow", "ctmc", variables, edges)


def birth_chain():
    """Pure birth process at rate 1; effectively infinite, meant for the
    truncated transient analysis (never explore this one exhaustively)."""
    variables = [intvar("x", 0, 100000)]
    edges = [
        edge(op("<", "x", 100000), [dest(1, [("x", op("+", "x", 1))])], rate=1),
    ]
    return model("birth-chain", "ctmc", variables, edges)


def erlang3(rate=2):
    """Three exponential stages in series; completion time is Erlang(3)."""
    variables = [intvar("stage", 0, 3)]
    edges = [
        edge(op("<", "stage", 3),
             [dest(1, [("stage", op("+", "stage", 1))])], rate=rate),
    ]
    return model("erlang3", "ctmc", variables, edges)


def idest(lo, hi, assigns):
    return {
        "location": "l",
        "probability": {"exp": {"lower": lo, "upper": hi}},
        "assignments": [{"ref": k, "value": v} for k, v in assigns],
    }


def interval_chain():
    """Three-state interval DTMC: one uncertain split, then absorption."""
    variables = [intvar("s", 0, 2)]
    edges = [
        edge(op("=", "s", 0), [
            idest(op("/", 3, 10), op("/", 6, 10), [("s", 1)]),
            idest(op("/", 4, 10), op("/", 7, 10), [("s", 2)]),
        ]),
        edge(op(">", "s", 0), [idest(1, 1, [])]),
    ]
    return model("uncertain-chain", "interval-dtmc", variables, edges)


def interval_mdp():
    """Interval MDP: a certain middling action against an uncertain
    gamble; robust directions order its four values."""
    variables = [intvar("s", 0, 2)]
    edges = [
        edge(op("=", "s", 0), [
            idest(op("/", 1, 2), op("/", 9, 10), [("s", 1)]),
            idest(op("/", 1, 10), op("/", 1, 2), [("s", 2)]),
        ], action="gamble"),
        edge(op("=", "s", 0), [
            idest(op("/", 6, 10), op("/", 6, 10), [("s", 1)]),
            idest(op("/", 4, 10), op("/", 4, 10), [("s", 2)]),
        ], action="safe"),
        edge(op(">", "s", 0), [idest(1, 1, [])]),
    ]
    return model("uncertain-choice", "interval-mdp", variables, edges)


def main():
    write(shared_coin(2, 5), "coin.jani")
    write(shared_coin(4, 10), "consensus4.jani")
    write(token_ring(10), "ij10.jani")
    write(die(), "die.jani")
    write(two_goal_mdp(), "two_goal.jani")
    write(simple_game(), "handoff_game.jani")
    write(peek_guess_pomdp(), "peek_guess.jani")
    write(rare_chain(), "rare_chain.jani")
    write(tandem(), "tandem.jani")
    write(birth_chain(), "birth_chain.jani")
    write(erlang3(), "erlang3.jani")
    write(interval_chain(), "interval_chain.jani")
    write(interval_mdp(), "interval_mdp.jani")


if __name__ == "__main__":
    main()
