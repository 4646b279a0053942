"""POMDP under-approximation: finite unfolding of the belief MDP with
cut-off values taken from an observation-based heuristic policy.

The unfolding is exact while the node budget lasts; beliefs past the
budget become frontier nodes whose value is the belief-weighted value of
the heuristic policy. Since that policy is observation-based, its values
are attainable, so the solved finite MDP yields a sound lower bound for
maximal objectives (upper for minimal ones).
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .bellman import BellmanSystem, solve_bellman
from .errors import QueryError
from .explore import ExplicitModel
from .bellman import _graph_views
from .objectives import _step_rewards, reach_prob, total_reward

QUANT = 1e-9  # belief coordinate quantization for node identity
MIN_MASS = 1e-15


def _check_pomdp(em):
    if em.observation is None:
        raise QueryError("belief analysis needs a pomdp model with observations")


def heuristic_policy(em, goal, direction="max", epsilon=1e-6, reward=None):
    """Observation-based policy: per observation, the choice position that
    optimizes the fully-observable value averaged over its states."""
    _check_pomdp(em)
    goal = np.asarray(goal, dtype=bool)
    if reward is None:
        base = reach_prob(em, goal, direction, epsilon=epsilon)
        step = np.zeros(em.num_choices)
    else:
        base = total_reward(em, reward, goal, direction, epsilon=epsilon)
        step = _step_rewards(em, reward)
    v = base.value
    choice_state, _ = _graph_views(em)
    q = np.add.reduceat(
        em.branch_prob * v[em.branch_col], em.branch_ptr[:-1]
    ) if em.num_choices else np.empty(0)
    q = q + step
    better = max if direction == "max" else min

    counts = np.diff(em.choice_ptr)
    groups = {}
    for s in range(em.n):
        groups.setdefault(int(em.observation[s]), []).append(s)
    pick_of_obs = {}
    for o, members in groups.items():
        acting = [s for s in members if counts[s] > 0 and not goal[s]]
        if not acting:
            pick_of_obs[o] = 0
            continue
        k_max = min(int(counts[s]) for s in acting)
        best_k, best_q = 0, None
        for k in range(k_max):
            avg = float(np.mean([q[em.choice_ptr[s] + k] for s in acting]))
            if best_q is None or better(avg, best_q) != best_q:
                best_k, best_q = k, avg
        pick_of_obs[o] = best_k
    return pick_of_obs


def fully_obs_values(em, goal, direction="max", epsilon=1e-6, reward=None):
    """Values of the heuristic observation-based policy, solved on its
    induced chain; valid cut-off values (the policy actually exists)."""
    _check_pomdp(em)
    goal = np.asarray(goal, dtype=bool)
    pick_of_obs = heuristic_policy(em, goal, direction, epsilon, reward)
    counts = np.diff(em.choice_ptr)

    chain = ExplicitModel()
    chain.model_type = "dtmc"
    chain.n = em.n
    chain.initial = em.initial
    cp, bp = [0], [0]
    cols, probs = [], []
    step = None if reward is None else _step_rewards(em, reward)
    crew = []
    for s in range(em.n):
        if counts[s] == 0:
            cols.append(s)  # keep deadlocks absorbing
            probs.append(1.0)
            c = None
        else:
            k = min(pick_of_obs.get(int(em.observation[s]), 0), int(counts[s]) - 1)
            c = em.choice_ptr[s] + k
            for b in range(em.branch_ptr[c], em.branch_ptr[c + 1]):
                cols.append(int(em.branch_col[b]))
                probs.append(float(em.branch_prob[b]))
        bp.append(len(cols))
        chain.choice_action.append(None)
        cp.append(len(chain.choice_action))
        if step is not None:
            crew.append(0.0 if c is None else float(step[c]))
    chain.choice_ptr = np.asarray(cp, dtype=np.int64)
    chain.branch_ptr = np.asarray(bp, dtype=np.int64)
    chain.branch_col = np.asarray(cols, dtype=np.int64)
    chain.branch_prob = np.asarray(probs, dtype=np.float64)
    if reward is None:
        return reach_prob(chain, goal, None, epsilon=epsilon)
    chain.state_rewards[reward] = np.zeros(em.n)
    chain.choice_rewards[reward] = np.asarray(crew)
    return total_reward(chain, reward, goal, None, epsilon=epsilon)


@dataclass
class UnfoldedBeliefMdp:
    em: ExplicitModel  # finite MDP over belief nodes (+ absorbing goal/sink)
    beliefs: list  # per node: dict state -> probability
    observations: list  # per node: observation id (goal nodes: synthetic)
    frontier: set  # node ids cut off instead of expanded
    cutoff: dict  # node id -> assigned cut-off value
    expanded: int = 0


def unfold_with_cutoffs(
    em, goal, direction="max", budget=1000, epsilon=1e-6, reward=None
):
    """Unfold the belief MDP breadth-first up to `budget` expanded nodes.

    Returns (UnfoldedBeliefMdp, bound at the initial belief). The bound is
    a sound lower bound for direction max, upper for min. Beliefs are
    deduplicated after quantizing coordinates to 1e-9; when two beliefs
    merge, the more conservative cut-off value is kept.
    """
    _check_pomdp(em)
    if budget < 1:
        raise QueryError("belief budget must be at least 1")
    goal = np.asarray(goal, dtype=bool)
    hv = np.clip(
        fully_obs_values(em, goal, direction, epsilon, reward).value,
        0.0,
        None if reward is not None else 1.0,
    )
    step = None if reward is None else _step_rewards(em, reward)
    counts = np.diff(em.choice_ptr)
    goal_obs = em.n_observations  # synthetic: goal states are absorbing

    def obs_of(s):
        return goal_obs if goal[s] else int(em.observation[s])

    def quant_key(obs, items):
        return obs, tuple((s, round(p / QUANT) * QUANT) for s, p in items)

    conserve = min if direction == "max" else max

    nodes = []  # belief dicts
    node_obs = []
    index = {}
    cutoff = {}

    def intern(obs, belief):
        items = tuple(sorted(belief.items()))
        key = quant_key(obs, items)
        value = float(sum(p * hv[s] for s, p in items))
        if key in index:
            i = index[key]
            cutoff[i] = conserve(cutoff[i], value)
            return i
        i = len(nodes)
        index[key] = i
        nodes.append(dict(items))
        node_obs.append(obs)
        cutoff[i] = value
        return i

    init = intern(obs_of(em.initial), {em.initial: 1.0})
    queue = deque([init])
    queued = {init}
    edges = {}  # node -> list of (reward, [(child, prob)])
    expanded_order = []
    while queue and len(expanded_order) < budget:
        i = queue.popleft()
        if node_obs[i] == goal_obs:
            continue  # absorbing by construction
        belief = nodes[i]
        support = [s for s in belief if counts[s] > 0]
        if not support:
            continue  # pure deadlock belief: stays a frontier node
        k_max = min(int(counts[s]) for s in support)
        rows = []
        for k in range(k_max):
            masses = {}
            crew = 0.0
            for s, ps in belief.items():
                if counts[s] == 0:
                    continue
                c = em.choice_ptr[s] + k
                if step is not None:
                    crew += ps * float(step[c])
                for b in range(em.branch_ptr[c], em.branch_ptr[c + 1]):
                    t = int(em.branch_col[b])
                    w = ps * float(em.branch_prob[b])
                    masses.setdefault(obs_of(t), {}).setdefault(t, 0.0)
                    masses[obs_of(t)][t] += w
            row = []
            for o, group in sorted(masses.items()):
                mass = sum(group.values())
                if mass < MIN_MASS:
                    warnings.warn(
                        "belief support collapsed below 1e-15; branch dropped"
                    )
                    continue
                posterior = {t: w / mass for t, w in group.items()}
                row.append((intern(o, posterior), mass))
            total = sum(p for _, p in row)
            row = [(j, p / total) for j, p in row]
            rows.append((crew, row))
        edges[i] = rows
        expanded_order.append(i)
        for _, row in rows:
            for j, _ in row:
                if j not in queued and node_obs[j] != goal_obs:
                    queued.add(j)
                    queue.append(j)

    frontier = {
        i for i in range(len(nodes)) if i not in edges and node_obs[i] != goal_obs
    }

    # assemble the finite MDP; two absorbing tail states encode goal (1)
    # and loss (0), so frontier cut-offs become plain transitions and the
    # standard solvers provide the guarantees
    n = len(nodes) + 2
    tgt, snk = n - 2, n - 1
    unf = ExplicitModel()
    unf.model_type = "mdp"
    unf.n = n
    unf.initial = init
    cp, bp = [0], [0]
    cols, probs, crew_out = [], [], []
    for i in range(len(nodes)):
        if node_obs[i] == goal_obs:
            cols.append(tgt)
            probs.append(1.0)
            bp.append(len(cols))
            unf.choice_action.append(None)
            crew_out.append(0.0)
        elif i in frontier:
            v = cutoff[i]
            if reward is None:
                if v > 0:
                    cols.append(tgt)
                    probs.append(v)
                if v < 1:
                    cols.append(snk)
                    probs.append(1.0 - v)
            else:
                cols.append(tgt)
                probs.append(1.0)
            bp.append(len(cols))
            unf.choice_action.append("cutoff")
            crew_out.append(v if reward is not None else 0.0)
        else:
            for crew, row in edges[i]:
                for j, p in row:
                    cols.append(j)
                    probs.append(p)
                bp.append(len(cols))
                unf.choice_action.append(None)
                crew_out.append(crew)
        cp.append(len(unf.choice_action))
    for t in (tgt, snk):
        cols.append(t)
        probs.append(1.0)
        bp.append(len(cols))
        unf.choice_action.append(None)
        crew_out.append(0.0)
        cp.append(len(unf.choice_action))
    unf.choice_ptr = np.asarray(cp, dtype=np.int64)
    unf.branch_ptr = np.asarray(bp, dtype=np.int64)
    unf.branch_col = np.asarray(cols, dtype=np.int64)
    unf.branch_prob = np.asarray(probs, dtype=np.float64)

    mdp = UnfoldedBeliefMdp(
        unf, nodes, node_obs, frontier, cutoff, len(expanded_order)
    )
    goal_mask = np.zeros(n, dtype=bool)
    if reward is None:
        goal_mask[tgt] = True
        vb = reach_prob(unf, goal_mask, direction, epsilon=epsilon)
        bound = float(vb.lower[init] if direction == "max" else vb.upper[init])
        return mdp, bound
    name = "__unfold__"
    unf.state_rewards[name] = np.zeros(n)
    unf.choice_rewards[name] = np.asarray(crew_out)
    goal_mask[tgt] = True
    goal_mask[snk] = True
    vb = total_reward(unf, name, goal_mask, direction, epsilon=epsilon)
    bound = float(vb.lower[init] if direction == "max" else vb.upper[init])
    return mdp, bound
