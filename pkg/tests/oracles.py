"""Independent reference solvers used to pin down expected values.

Everything here is deliberately written against a tiny dict-of-lists model
shape and plain linear algebra / linear programming, sharing no numeric
code with the package under test. Slow is fine; wrong is not.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog


class TinyMdp:
    """choices[s] = list of (action, [(dest, prob)], reward)."""

    def __init__(self, choices):
        self.choices = choices
        self.n = len(choices)

    @classmethod
    def from_explicit(cls, em, reward=None):
        step = None
        if reward is not None:
            srew = em.state_rewards[reward]
            crew = em.choice_rewards[reward]
        choices = []
        for s in range(em.n):
            row = []
            for c in range(em.choice_ptr[s], em.choice_ptr[s + 1]):
                branches = [
                    (int(em.branch_col[b]), float(em.branch_prob[b]))
                    for b in range(em.branch_ptr[c], em.branch_ptr[c + 1])
                ]
                r = 0.0
                if reward is not None:
                    r = float(srew[s]) + float(crew[c])
                row.append((em.choice_action[c], branches, r))
            choices.append(row)
        return cls(choices)


def can_reach(m, goal):
    """States with some path to the goal set (any choices)."""
    preds = [[] for _ in range(m.n)]
    for s in range(m.n):
        for _, branches, _ in m.choices[s]:
            for t, p in branches:
                if p > 0:
                    preds[t].append(s)
    seen = set(np.flatnonzero(goal))
    stack = list(seen)
    while stack:
        t = stack.pop()
        for s in preds[t]:
            if s not in seen:
                seen.add(s)
                stack.append(s)
    out = np.zeros(m.n, dtype=bool)
    out[list(seen)] = True
    return out


def avoid_set(m, goal):
    """States from which some scheduler avoids the goal forever: the
    greatest fixpoint of 'has a choice staying inside'."""
    alive = ~np.asarray(goal, dtype=bool)
    changed = True
    while changed:
        changed = False
        for s in range(m.n):
            if not alive[s]:
                continue
            ok = any(
                all(alive[t] for t, p in branches if p > 0)
                for _, branches, _ in m.choices[s]
            )
            if not ok and m.choices[s]:
                alive[s] = False
                changed = True
            if not m.choices[s]:
                pass  # absorbing non-goal state trivially avoids
    return alive


def chain_reach(m, goal, picks):
    """Exact reach probability of the chain induced by `picks` (one choice
    index per state), by linear elimination."""
    goal = np.asarray(goal, dtype=bool)
    P = np.zeros((m.n, m.n))
    for s in range(m.n):
        if goal[s] or not m.choices[s]:
            P[s, s] = 1.0
            continue
        for t, p in m.choices[s][picks[s]][1]:
            P[s, t] += p
    # states never reaching goal under this chain get exactly 0
    sub = TinyMdp(
        [[(None, [(t, P[s, t]) for t in np.flatnonzero(P[s])], 0.0)]
         for s in range(m.n)]
    )
    reach = can_reach(sub, goal)
    x = np.zeros(m.n)
    x[goal] = 1.0
    solve = np.flatnonzero(reach & ~goal)
    if len(solve):
        A = np.eye(len(solve)) - P[np.ix_(solve, solve)]
        b = P[np.ix_(solve, np.flatnonzero(goal))].sum(axis=1)
        x[solve] = np.linalg.solve(A, b)
    return x


def chain_reward(m, goal, picks):
    """Expected accumulated reward before the goal under `picks`; only
    valid when the chain reaches the goal almost surely from everywhere
    that matters (the caller guarantees that)."""
    goal = np.asarray(goal, dtype=bool)
    P = np.zeros((m.n, m.n))
    r = np.zeros(m.n)
    for s in range(m.n):
        if goal[s] or not m.choices[s]:
            P[s, s] = 1.0
            continue
        _, branches, rew = m.choices[s][picks[s]]
        r[s] = rew
        for t, p in branches:
            P[s, t] += p
    x = np.zeros(m.n)
    solve = np.flatnonzero(~goal & (np.diag(P) < 1.0 - 1e-12))
    if len(solve):
        A = np.eye(len(solve)) - P[np.ix_(solve, solve)]
        x[solve] = np.linalg.solve(A, r[solve])
    return x


def lp_reach(m, goal, direction):
    """Optimal reach probability by linear programming (exact up to the
    LP solver's tolerance, independent of any value iteration)."""
    goal = np.asarray(goal, dtype=bool)
    if direction == "max":
        zero = ~can_reach(m, goal)
    else:
        zero = avoid_set(m, goal)
    free = np.flatnonzero(~goal & ~zero)
    idx = {s: i for i, s in enumerate(free)}
    nv = len(free)
    if nv == 0:
        return goal.astype(float)
    # max: minimise sum(x) subject to x_s >= sum_t P(s,a,t) x_t + const
    # min: maximise sum(x) subject to x_s <= ...
    A_ub, b_ub = [], []
    for s in free:
        for _, branches, _ in m.choices[s]:
            row = np.zeros(nv)
            row[idx[s]] = -1.0
            const = 0.0
            for t, p in branches:
                if goal[t]:
                    const += p
                elif t in idx:
                    row[idx[t]] += p
            if direction == "max":
                A_ub.append(row)
                b_ub.append(-const)
            else:
                A_ub.append(-row)
                b_ub.append(const)
    c = np.ones(nv) if direction == "max" else -np.ones(nv)
    res = linprog(c, A_ub=np.array(A_ub), b_ub=np.array(b_ub),
                  bounds=[(0, 1)] * nv, method="highs")
    assert res.success, res.message
    x = np.zeros(m.n)
    x[goal] = 1.0
    x[free] = res.x
    return x


def enumerate_schedulers(m, states=None):
    """All deterministic memoryless schedulers over `states` (default:
    every state with more than one choice); yields full pick arrays."""
    if states is None:
        states = [s for s in range(m.n) if len(m.choices[s]) > 1]
    options = [range(len(m.choices[s])) for s in states]
    base = [0] * m.n
    for combo in itertools.product(*options):
        picks = list(base)
        for s, k in zip(states, combo):
            picks[s] = k
        yield picks


def scheduler_count(m, states=None):
    if states is None:
        states = [s for s in range(m.n) if len(m.choices[s]) > 1]
    total = 1
    for s in states:
        total *= len(m.choices[s])
    return total


def brute_force_reach(m, goal, direction):
    """Optimal reach probability by full scheduler enumeration."""
    best = None
    pick_fn = np.maximum if direction == "max" else np.minimum
    for picks in enumerate_schedulers(m):
        v = chain_reach(m, goal, picks)
        best = v if best is None else pick_fn(best, v)
    return best


def game_value(m, goal, coalition_mask, coalition_dir="max"):
    """Exact TSG value by strategy-pair enumeration: best coalition
    strategy against its worst opponent reply, per state."""
    goal = np.asarray(goal, dtype=bool)
    c_states = [s for s in range(m.n)
                if coalition_mask[s] and len(m.choices[s]) > 1]
    o_states = [s for s in range(m.n)
                if not coalition_mask[s] and len(m.choices[s]) > 1]
    outer_best = None
    for cp in enumerate_schedulers(m, c_states):
        inner_worst = None
        for op_ in enumerate_schedulers(m, o_states):
            picks = [cp[s] if coalition_mask[s] else op_[s] for s in range(m.n)]
            v = chain_reach(m, goal, picks)
            if inner_worst is None:
                inner_worst = v
            else:
                inner_worst = (np.minimum if coalition_dir == "max"
                               else np.maximum)(inner_worst, v)
        if outer_best is None:
            outer_best = inner_worst
        else:
            outer_best = (np.maximum if coalition_dir == "max"
                          else np.minimum)(outer_best, inner_worst)
    return outer_best


def lp_inner(dests_lo_hi, values, inner):
    """Optimal interval-distribution value by LP: optimise sum(p_i v_i)
    over lo <= p <= hi, sum p = 1."""
    lo = np.array([b[1] for b in dests_lo_hi])
    hi = np.array([b[2] for b in dests_lo_hi])
    v = np.array([values[b[0]] for b in dests_lo_hi])
    c = v if inner == "min" else -v
    res = linprog(c, A_eq=np.ones((1, len(v))), b_eq=[1.0],
                  bounds=list(zip(lo, hi)), method="highs")
    assert res.success, res.message
    return float(v @ res.x)


# ---------------------------------------------------------------- multi-objective
def goal_product(m, goals):
    """Goal-memory product as a TinyMdp plus the per-objective target
    masks (bit j set). Built independently of the engine's product."""
    ell = len(goals)
    index = {}
    states = []

    def bits_of(s, bits):
        out = bits
        for j in range(ell):
            if goals[j][s]:
                out |= 1 << j
        return out

    def intern(s, bits):
        key = (s, bits_of(s, bits))
        if key not in index:
            index[key] = len(states)
            states.append(key)
        return index[key]

    init = intern(0, 0)
    choices = []
    i = 0
    while i < len(states):
        s, bits = states[i]
        row = []
        for action, branches, _ in m.choices[s]:
            row.append((action, [(None, t, p) for t, p in branches], 0.0))
        resolved = []
        for action, branches, r in row:
            resolved.append(
                (action, [(intern(t, bits), p) for _, t, p in branches], r)
            )
        choices.append(resolved)
        i += 1
    prod = TinyMdp(choices)
    masks = []
    for j in range(ell):
        mask = np.array([(b >> j) & 1 == 1 for _, b in states])
        masks.append(mask)
    return prod, masks, init


def achievable_points(m, goals, limit=1 << 14):
    """Objective vectors of every deterministic product scheduler, or
    None when there are too many schedulers to enumerate."""
    prod, masks, init = goal_product(m, goals)
    if scheduler_count(prod) > limit:
        return None
    pts = []
    for picks in enumerate_schedulers(prod):
        vec = [chain_reach(prod, mask, picks)[init] for mask in masks]
        pts.append(vec)
    return np.array(pts)


def hull_distance(p, points):
    """Scalarised signed distance of `p` to the downward closure of the
    convex hull of `points` (maximise orientation): positive means
    outside by that margin, <= 0 means inside."""
    p = np.asarray(p, dtype=float)
    pts = np.asarray(points, dtype=float)
    ell = len(p)
    # variables: w (ell), t; maximise w.p - t  s.t.  w.q <= t, sum w = 1
    n = pts.shape[0]
    c = np.concatenate([-p, [1.0]])
    A_ub = np.hstack([pts, -np.ones((n, 1))])
    b_ub = np.zeros(n)
    A_eq = np.concatenate([np.ones(ell), [0.0]]).reshape(1, -1)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * ell + [(None, None)], method="highs")
    assert res.success, res.message
    return float(-res.fun)


def pareto_frontier(points):
    """Undominated subset of maximise-orientation points, sorted by the
    first coordinate descending."""
    pts = np.asarray(points, dtype=float)
    keep = []
    tol = 1e-9  # linear-solve dust must not hide a dominating point
    for i, p in enumerate(pts):
        dominated = any(
            (q >= p - tol).all() and (q > p + tol).any()
            for j, q in enumerate(pts) if j != i
        )
        if not dominated:
            keep.append(tuple(np.round(p, 12)))
    uniq = sorted(set(keep), key=lambda t: (-t[0], t[1]))
    return np.array(uniq)


def convex_frontier(points):
    """Pareto front of the randomized-scheduler achievable set: the
    undominated points that are also vertices of the upper convex hull
    (randomization makes hull-interior points dominated)."""
    front = pareto_frontier(points)
    if len(front) <= 2:
        return front
    # front is sorted by x descending; walk keeping the boundary concave
    hull = [front[0]]
    for p in front[1:]:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
            if cross <= 1e-12:
                hull.pop()  # b lies on or below the chord a-p
            else:
                break
        hull.append(p)
    return np.array(hull)


def _seg_dist(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def frontier_hausdorff(front_a, front_b):
    """Symmetric Hausdorff distance between two 2-d Pareto polylines."""

    def one_way(src, dst):
        worst = 0.0
        for p in src:
            if len(dst) == 1:
                d = float(np.linalg.norm(p - dst[0]))
            else:
                d = min(_seg_dist(p, dst[i], dst[i + 1])
                        for i in range(len(dst) - 1))
            worst = max(worst, d)
        return worst

    a = np.asarray(front_a, dtype=float)
    b = np.asarray(front_b, dtype=float)
    return max(one_way(a, b), one_way(b, a))


# ---------------------------------------------------------------- belief MDP
def exact_pomdp_value(em, goal, direction="max", epsilon=1e-12, max_beliefs=100_000):
    """Exact optimal POMDP value by full belief-MDP construction (the
    fixtures are chosen so the reachable belief space is finite).

    Beliefs are keyed on coordinates rounded to 12 digits; the belief MDP
    is solved by high-precision value iteration.
    """
    goal = np.asarray(goal, dtype=bool)
    counts = np.diff(em.choice_ptr)

    def key(belief):
        return tuple(sorted((s, round(p, 12)) for s, p in belief.items()))

    index = {}
    beliefs = []

    def intern(belief):
        k = key(belief)
        if k not in index:
            index[k] = len(beliefs)
            beliefs.append(dict(belief))
        return index[k]

    init = intern({em.initial: 1.0})
    rows = []
    i = 0
    while i < len(beliefs):
        if len(beliefs) > max_beliefs:
            raise RuntimeError("belief space not finite enough for the oracle")
        b = beliefs[i]
        gmass = sum(p for s, p in b.items() if goal[s])
        if gmass > 1.0 - 1e-12:
            rows.append(None)  # absorbing goal belief
            i += 1
            continue
        support = [s for s in b if not goal[s] and counts[s] > 0]
        if not support:
            rows.append([])  # dead end (only the goal mass can score)
            i += 1
            continue
        k_max = min(int(counts[s]) for s in support)
        row = []
        for k in range(k_max):
            groups = {}
            for s, ps in b.items():
                if goal[s] or counts[s] == 0:
                    # goal/deadlock mass freezes: model as staying put
                    groups.setdefault(("stay", s), {}).setdefault(s, 0.0)
                    groups[("stay", s)][s] += ps
                    continue
                c = em.choice_ptr[s] + k
                for j in range(em.branch_ptr[c], em.branch_ptr[c + 1]):
                    t = int(em.branch_col[j])
                    o = int(em.observation[t]) if not goal[t] else -1
                    groups.setdefault(("obs", o), {}).setdefault(t, 0.0)
                    groups[("obs", o)][t] += ps * float(em.branch_prob[j])
            branches = []
            for _, masses in sorted(groups.items()):
                mass = sum(masses.values())
                if mass <= 0:
                    continue
                nb = {t: w / mass for t, w in masses.items()}
                branches.append((intern(nb), mass))
            row.append(branches)
        rows.append(row)
        i += 1

    # goal value of a belief: eventual goal mass; solve by VI on beliefs
    n = len(beliefs)
    value = np.zeros(n)
    for i, b in enumerate(beliefs):
        if rows[i] is None:
            value[i] = 1.0
        elif rows[i] == []:
            value[i] = sum(p for s, p in b.items() if goal[s])
    better = max if direction == "max" else min
    for _ in range(1_000_000):
        delta = 0.0
        for i in range(n):
            if rows[i] is None or rows[i] == []:
                continue
            best = None
            for branches in rows[i]:
                q = sum(p * value[j] for j, p in branches)
                best = q if best is None else better(best, q)
            delta = max(delta, abs(best - value[i]))
            value[i] = best
        if delta < epsilon:
            break
    return float(value[init])
