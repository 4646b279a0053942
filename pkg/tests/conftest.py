import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from qcheck.explore import ExplicitModel

MODELS = os.path.join(os.path.dirname(__file__), os.pardir, "models")


def model_path(name):
    return os.path.abspath(os.path.join(MODELS, name))


def make_em(model_type, choices, owner=None, players=None, lo=None, hi=None):
    """Hand-build an ExplicitModel from nested lists.

    choices[s] = list of choices; each choice = list of (dest, prob).
    Interval models take parallel nested lists `lo`/`hi` per branch.
    """
    em = ExplicitModel()
    em.model_type = model_type
    em.n = len(choices)
    cp, bp = [0], [0]
    cols, probs = [], []
    ilo, ihi = [], []
    for s, row in enumerate(choices):
        for ci, branches in enumerate(row):
            em.choice_action.append(None)
            for bi, (dest, prob) in enumerate(branches):
                cols.append(dest)
                probs.append(prob)
                if lo is not None:
                    ilo.append(lo[s][ci][bi])
                    ihi.append(hi[s][ci][bi])
            bp.append(len(cols))
        cp.append(len(em.choice_action))
    em.choice_ptr = np.asarray(cp, dtype=np.int64)
    em.branch_ptr = np.asarray(bp, dtype=np.int64)
    em.branch_col = np.asarray(cols, dtype=np.int64)
    em.branch_prob = np.asarray(probs, dtype=np.float64)
    if lo is not None:
        em.branch_lo = np.asarray(ilo, dtype=np.float64)
        em.branch_hi = np.asarray(ihi, dtype=np.float64)
    if owner is not None:
        em.owner = np.asarray(owner, dtype=np.int64)
        em.player_names = players or ["p1", "p2"]
    if model_type == "ctmc":
        em.branch_rate = em.branch_prob.copy()
        em.exit_rate = np.zeros(em.n)
        for s in range(em.n):
            c0 = em.choice_ptr[s]
            em.exit_rate[s] = em.branch_rate[
                em.branch_ptr[c0]:em.branch_ptr[c0 + 1]
            ].sum()
    return em


def random_mdp(rng, n, max_choices=3, max_branches=3, goal_frac=0.15):
    """Random MDP with a guaranteed absorbing goal and sink state."""
    goal_state, sink = n - 2, n - 1
    choices = []
    for s in range(n - 2):
        row = []
        for _ in range(rng.integers(1, max_choices + 1)):
            k = int(rng.integers(1, max_branches + 1))
            dests = rng.integers(0, n, size=k)
            w = rng.random(k) + 0.05
            w /= w.sum()
            row.append([(int(d), float(p)) for d, p in zip(dests, w)])
        choices.append(row)
    choices.append([[(goal_state, 1.0)]])
    choices.append([[(sink, 1.0)]])
    em = make_em("mdp", choices)
    goal = np.zeros(n, dtype=bool)
    goal[goal_state] = True
    return em, goal


def random_tsg(rng, n, max_choices=2):
    """Random two-player game, states assigned to players uniformly;
    the last two states are an absorbing goal and sink."""
    em, goal = random_mdp(rng, n, max_choices=max_choices, max_branches=2)
    em.model_type = "tsg"
    em.owner = rng.integers(0, 2, size=n).astype(np.int64)
    em.player_names = ["one", "two"]
    return em, goal


def random_imdp(rng, n, max_choices=2, max_branches=3, degenerate=False):
    """Random interval MDP shaped as a DAG toward an absorbing goal/sink
    pair, so every interval assignment admits a proper distribution."""
    goal_state, sink = n - 2, n - 1
    choices, lo, hi = [], [], []
    for s in range(n - 2):
        row, lrow, hrow = [], [], []
        for _ in range(rng.integers(1, max_choices + 1)):
            k = int(rng.integers(2, min(max_branches, n - s - 1) + 1))
            dests = rng.choice(np.arange(s + 1, n), size=k, replace=False)
            w = rng.random(k) + 0.05
            w /= w.sum()
            if degenerate:
                l = h = w
            else:
                slack = rng.random(k) * np.minimum(w, 1 - w) * 0.8
                l, h = w - slack, w + slack
            row.append([(int(d), float(p)) for d, p in zip(dests, w)])
            lrow.append([float(x) for x in l])
            hrow.append([float(x) for x in h])
        choices.append(row)
        lo.append(lrow)
        hi.append(hrow)
    for s in (goal_state, sink):
        choices.append([[(s, 1.0)]])
        lo.append([[1.0]])
        hi.append([[1.0]])
    em = make_em("interval-mdp", choices, lo=lo, hi=hi)
    goal = np.zeros(n, dtype=bool)
    goal[goal_state] = True
    return em, goal


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
