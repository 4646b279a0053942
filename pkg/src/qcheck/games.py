"""Zero-sum turn-based stochastic games: coalition-optimal reachability
and total reward.

The numeric kernel is the mixed-selector BellmanSystem from the solver
core; states owned by the coalition use the coalition's direction, all
other states use the opposite one. Interval iteration gains a periodic
deflation step: inside end components the upper iterates can stall above
the value, so the upper vector is capped by the best value the maximizing
side can secure by actually leaving the component.
"""

from __future__ import annotations

import numpy as np

from .bellman import (
    BellmanSystem,
    ValueBounds,
    _backward_reach,
    _graph_views,
    mec_decompose,
    solve_bellman,
)
from .bellman import _ii, _ovi, _vi
from .errors import QueryError, SolverError

DEFLATE_PERIOD = 50


def _selectors(em, coalition, coalition_dir):
    if em.owner is None:
        raise QueryError("game query on a model without a player partition")
    ids = []
    for name in coalition:
        if name not in em.player_names:
            raise QueryError(f"unknown player {name!r}")
        ids.append(em.player_names.index(name))
    if not ids:
        raise QueryError("empty coalition")
    in_coalition = np.isin(em.owner, ids)
    if coalition_dir == "max":
        return in_coalition, in_coalition
    return ~in_coalition, in_coalition


def _choice_subview(em, choice_mask):
    """View with a subset of choices, for end-component analysis."""
    choice_state, _ = _graph_views(em)

    class View:
        pass

    v = View()
    v.n = em.n
    cp = [0]
    bp = [0]
    cols, probs = [], []
    choice_ids = []
    for s in range(em.n):
        for c in range(em.choice_ptr[s], em.choice_ptr[s + 1]):
            if not choice_mask[c]:
                continue
            choice_ids.append(c)
            for b in range(em.branch_ptr[c], em.branch_ptr[c + 1]):
                cols.append(int(em.branch_col[b]))
                probs.append(float(em.branch_prob[b]))
            bp.append(len(cols))
        cp.append(len(choice_ids))
    v.choice_ptr = np.asarray(cp, dtype=np.int64)
    v.branch_ptr = np.asarray(bp, dtype=np.int64)
    v.branch_col = np.asarray(cols, dtype=np.int64)
    v.branch_prob = np.asarray(probs, dtype=np.float64)
    v.num_choices = len(choice_ids)
    return v, np.asarray(choice_ids, dtype=np.int64)


def _make_deflate(em, sys, maximize, known):
    """Deflation callback for interval iteration on games.

    Every call: restrict the minimizing side to its currently-optimal
    choices (w.r.t. the upper vector), find the end components of that
    restriction, and cap the upper values inside each component by the
    best exit value the maximizing side controls (0 if it controls none).
    """
    choice_state, _ = _graph_views(em)

    def deflate(lo, hi):
        q = sys.q_values(hi)
        choice_mask = np.zeros(em.num_choices, dtype=bool)
        for s in range(em.n):
            a, b = em.choice_ptr[s], em.choice_ptr[s + 1]
            if a == b:
                continue
            if maximize[s]:
                choice_mask[a:b] = True
            else:
                best = q[a:b].min()
                choice_mask[a:b] = q[a:b] <= best + 1e-12
        view, choice_ids = _choice_subview(em, choice_mask)
        new_hi = hi.copy()
        work = [frozenset(states) for states, _ in mec_decompose(view)]
        while work:
            comp = work.pop()
            orig = sorted(comp)
            if any(known[s] for s in orig):
                continue
            in_t = np.zeros(em.n, dtype=bool)
            for s in orig:
                in_t[s] = True
            best_exit = 0.0
            state_exit = {}
            for s in orig:
                if not maximize[s]:
                    continue
                for c in range(em.choice_ptr[s], em.choice_ptr[s + 1]):
                    bs = slice(em.branch_ptr[c], em.branch_ptr[c + 1])
                    if in_t[em.branch_col[bs]].all():
                        continue
                    state_exit[s] = max(state_exit.get(s, 0.0), float(q[c]))
                    best_exit = max(best_exit, float(q[c]))
            for s in orig:
                new_hi[s] = min(new_hi[s], best_exit)
            # the minimizer may confine the play to a sub-component that
            # avoids the maximizer's best exit states; such nested end
            # components need their own (smaller) exit cap
            exiting = {s for s, v in state_exit.items() if v >= best_exit - 1e-12}
            rest = comp - exiting
            if exiting and rest:
                in_r = np.zeros(em.n, dtype=bool)
                for s in rest:
                    in_r[s] = True
                sub_mask = choice_mask.copy()
                for s in range(em.n):
                    a, b = em.choice_ptr[s], em.choice_ptr[s + 1]
                    if not in_r[s]:
                        sub_mask[a:b] = False
                        continue
                    for c in range(a, b):
                        bs = slice(em.branch_ptr[c], em.branch_ptr[c + 1])
                        if not in_r[em.branch_col[bs]].all():
                            sub_mask[c] = False
                subview, _ = _choice_subview(em, sub_mask)
                for states, _choices in mec_decompose(subview):
                    work.append(frozenset(states))
        return np.maximum(new_hi, lo)

    return deflate


def solve_tsg(em, goal, coalition, coalition_dir, method="ii", epsilon=1e-6):
    """Bounds on the coalition-optimal reach probability of `goal`.

    Coalition states optimize `coalition_dir`; the rest take the opposite
    direction. ii and ovi give the 2-epsilon guarantee (upper iterates are
    deflated periodically); vi is the unguaranteed variant.
    """
    goal = np.asarray(goal, dtype=bool)
    maximize, in_coalition = _selectors(em, coalition, coalition_dir)
    unreachable = ~_backward_reach(em, goal)
    known = goal | unreachable
    known_value = np.where(goal, 1.0, 0.0)
    sys = BellmanSystem(
        em.choice_ptr,
        em.branch_ptr,
        em.branch_col,
        em.branch_prob,
        maximize=maximize,
        known=known,
        known_value=known_value,
    )
    lo = np.where(known, known_value, 0.0)
    hi = np.where(known, known_value, 1.0)
    deflate = _make_deflate(em, sys, maximize, known)
    if method == "vi":
        vb = _vi(sys, epsilon, 2_000_000, lo, None)
    elif method == "ii":
        vb = _ii(sys, epsilon, 2_000_000, lo, hi, None, deflate=deflate)
    elif method == "ovi":
        # bounded attempt: OVI's own fallback lacks deflation, so give it a
        # short leash and finish with deflated interval iteration if needed
        vb = _ovi(sys, epsilon, 100_000, lo, hi, 1.0, None)
        if not vb.converged or float(np.max(vb.upper - vb.lower)) > 2 * epsilon:
            vb = _ii(sys, epsilon, 2_000_000, vb.lower, hi, None, deflate=deflate)
    else:
        raise SolverError(f"unknown method {method!r}")
    vb.lower[known] = known_value[known]
    vb.upper[known] = known_value[known]
    return vb


def solve_tsg_reward(em, reward, goal, coalition, coalition_dir, epsilon=1e-6):
    """Coalition-optimal expected total reward until `goal` (games).

    Only supported when the game graph has no end component off the goal
    (checked); then plain interval iteration with a reward upper seed is
    sound without deflation.
    """
    from .objectives import _mecs_in, _reward_upper_seed, _step_rewards

    goal = np.asarray(goal, dtype=bool)
    maximize, _ = _selectors(em, coalition, coalition_dir)
    step = _step_rewards(em, reward)
    if _mecs_in(em, ~goal):
        raise SolverError(
            "game total reward with end components off the goal is not "
            "supported; the value may be ill-defined"
        )
    known = goal.copy()
    sys = BellmanSystem(
        em.choice_ptr,
        em.branch_ptr,
        em.branch_col,
        em.branch_prob,
        choice_reward=step,
        maximize=maximize,
        known=known,
        known_value=np.zeros(em.n),
    )
    seed = _reward_upper_seed(sys, step)
    vb = solve_bellman(
        sys, "ii", epsilon, upper_init=np.where(known, 0.0, seed)
    )
    return vb


def extract_strategy(em, bounds, coalition, coalition_dir):
    """One optimal choice per state for both sides: the coalition plays
    greedily against the lower vector, the opponent against the upper."""
    if not bounds.converged:
        raise SolverError("strategy extraction needs converged bounds")
    maximize, in_coalition = _selectors(em, coalition, coalition_dir)
    sys = BellmanSystem(
        em.choice_ptr,
        em.branch_ptr,
        em.branch_col,
        em.branch_prob,
        maximize=maximize,
    )
    q_lo = sys.q_values(bounds.lower)
    q_hi = sys.q_values(bounds.upper)
    picks = np.full(em.n, -1, dtype=np.int64)
    for s in range(em.n):
        a, b = em.choice_ptr[s], em.choice_ptr[s + 1]
        if a == b:
            continue
        q = q_lo[a:b] if in_coalition[s] else q_hi[a:b]
        k = int(np.argmax(q)) if maximize[s] else int(np.argmin(q))
        picks[s] = a + k
    return picks
