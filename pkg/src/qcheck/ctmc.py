"""Time-bounded CTMC analysis: transient probabilities via uniformization
and on-the-fly truncated exploration producing a sound [Pmin, Pmax] window.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .bellman import ValueBounds
from .errors import QueryError, SolverError
from .explore import CompiledModel, ExplicitModel

UNIFORMIZATION_SLACK = 1.01


def poisson_window(lam_t, epsilon):
    """Smallest index window [lo, hi] of Poisson(lam_t) terms whose
    discarded tail mass is at most epsilon (split across both tails)."""
    if lam_t <= 0:
        return 0, 0, np.ones(1)
    dist = stats.poisson(lam_t)
    lo = int(dist.ppf(epsilon / 2))
    hi = int(dist.isf(epsilon / 2))
    ks = np.arange(lo, hi + 1)
    w = dist.pmf(ks)
    # widen until the captured mass definitely covers 1 - epsilon
    while w.sum() < 1.0 - epsilon:
        lo = max(0, lo - 1)
        hi += 1
        ks = np.arange(lo, hi + 1)
        w = dist.pmf(ks)
    return lo, hi, w


def transient_prob(em, goal, t, epsilon=1e-6, absorb_goal=True):
    """P(F<=t goal) per state (with `absorb_goal`) or P(state at t in goal).

    Uniformization: rate = 1.01 x max exit rate; the Poisson mixture over
    DTMC step counts is truncated with discarded mass <= epsilon, so the
    returned bounds are the point estimate widened by epsilon.
    """
    if t < 0:
        raise QueryError("time bound must be non-negative")
    if not em.is_ctmc:
        raise QueryError("transient analysis needs a ctmc model")
    goal = np.asarray(goal, dtype=bool)
    if t == 0 or em.n == 0:
        v = goal.astype(np.float64)
        return ValueBounds(v, v.copy(), 0, True)

    lam = UNIFORMIZATION_SLACK * float(em.exit_rate.max())
    lo, hi, weights = poisson_window(lam * t, epsilon)

    # backward vector iteration on the uniformized chain
    absorbing = goal if absorb_goal else np.zeros(em.n, dtype=bool)
    self_prob = 1.0 - em.exit_rate / lam
    x = goal.astype(np.float64)
    acc = np.zeros(em.n)
    if lo == 0:
        acc += weights[0] * x
    for k in range(1, hi + 1):
        y = np.add.reduceat(
            (em.branch_rate / lam) * x[em.branch_col], em.branch_ptr[em.choice_ptr[:-1]]
        )
        y = y + self_prob * x
        y[absorbing] = x[absorbing]
        x = y
        if k >= lo:
            acc += weights[k - lo] * x
    lower = np.clip(acc - epsilon, 0.0, 1.0)
    upper = np.clip(acc + epsilon, 0.0, 1.0)
    return ValueBounds(lower, upper, hi, True)


@dataclass
class TruncatedModel:
    em: ExplicitModel  # explored sub-model, last state = abstract sink
    sink: int
    estimates: dict  # state index -> mass estimate used during exploration
    kappa: float
    explored: int = 0


def truncated_build(model, kappa, t=None, max_states=1_000_000):
    """STAMINA-style truncation: breadth-first mass propagation from the
    initial state; a state is expanded only while its estimate >= kappa;
    branches into unexpanded states are redirected to an absorbing sink.
    """
    if not (0 < kappa < 1):
        raise QueryError("kappa must be in (0, 1)")
    cm = model if isinstance(model, CompiledModel) else CompiledModel(model)
    if not cm.is_ctmc:
        raise QueryError("truncated exploration targets ctmc models")
    layout = cm.layout
    init = cm.initial_state().values
    init_p = layout.pack(init)

    est = {init_p: 1.0}
    propagated = {}
    depth = {init_p: 0}
    values_of = {init_p: init}
    expanded = {}
    queue = deque([init_p])
    in_queue = {init_p}
    while queue:
        p = queue.popleft()
        in_queue.discard(p)
        if est[p] < kappa:
            continue
        delta = est[p] - propagated.get(p, 0.0)
        if p in expanded and delta < kappa / 10:
            continue
        values = values_of[p]
        if p not in expanded:
            choices = cm.choices(values)
            if not choices:
                choices = [(None, [(1.0, None, values)])]
            expanded[p] = choices
        total = sum(b[0] for b in expanded[p][0][1])
        propagated[p] = est[p]
        # with a time horizon, deeper states need more jumps to be reached
        # in time; the k-th jump contributes a Poisson-tail-style factor
        # rate*t/k, which makes the estimate vanish along long paths
        step_factor = 1.0
        if t is not None and total > 0:
            step_factor = min(1.0, total * t / (depth[p] + 1))
        for rate, _, nv in expanded[p][0][1]:
            if len(expanded) >= max_states:
                break
            q = layout.pack(nv)
            if q == p:
                continue  # mass staying put is not new reachable mass
            values_of.setdefault(q, nv)
            depth[q] = min(depth.get(q, depth[p] + 1), depth[p] + 1)
            # estimates are reach probabilities: capped at 1 so cyclic
            # re-propagation terminates (deltas vanish at the cap)
            est[q] = min(
                1.0,
                est.get(q, 0.0)
                + delta * step_factor * (rate / total if total > 0 else 0.0),
            )
            if q not in in_queue:
                queue.append(q)
                in_queue.add(q)

    # assemble: expanded states in insertion order, then the sink
    order = list(expanded.keys())
    index = {p: i for i, p in enumerate(order)}
    n = len(order) + 1
    sink = n - 1
    em = ExplicitModel()
    em.model_type = "ctmc"
    em.layout = layout
    em.compiled = cm
    em.n = n
    em.packed = order + [b"\xff" * layout.nbytes]
    em.initial = index[init_p]
    choice_ptr = [0]
    branch_ptr = [0]
    actions = []
    cols, probs, rates = [], [], []
    exit_rate = np.zeros(n)
    for p in order:
        branches = expanded[p][0][1]
        total = sum(b[0] for b in branches)
        exit_rate[index[p]] = total
        actions.append(None)
        for rate, _, nv in branches:
            q = layout.pack(nv)
            cols.append(index.get(q, sink))
            rates.append(rate)
            probs.append(rate / total if total > 0 else 0.0)
        branch_ptr.append(len(cols))
        choice_ptr.append(len(actions))
    # absorbing sink
    actions.append(None)
    cols.append(sink)
    rates.append(1.0)
    probs.append(1.0)
    branch_ptr.append(len(cols))
    choice_ptr.append(len(actions))
    exit_rate[sink] = 0.0  # absorbing: no real transitions
    em.choice_ptr = np.asarray(choice_ptr, dtype=np.int64)
    em.branch_ptr = np.asarray(branch_ptr, dtype=np.int64)
    em.choice_action = actions
    em.branch_col = np.asarray(cols, dtype=np.int64)
    em.branch_prob = np.asarray(probs, dtype=np.float64)
    em.branch_rate = np.asarray(rates, dtype=np.float64)
    em.exit_rate = exit_rate
    return TruncatedModel(
        em=em,
        sink=sink,
        estimates={index[p]: est[p] for p in order},
        kappa=kappa,
        explored=len(order),
    )


def transient_window(tm, goal, t, epsilon=1e-6):
    """(Pmin, Pmax) at the initial state: sink counted as non-goal for the
    lower value and as goal for the upper; the exact full-model value lies
    in between."""
    goal = np.asarray(goal, dtype=bool)
    if len(goal) == tm.em.n - 1:
        goal = np.append(goal, False)
    g_lo = goal.copy()
    g_lo[tm.sink] = False
    g_hi = goal.copy()
    g_hi[tm.sink] = True
    lo = transient_prob(tm.em, g_lo, t, epsilon)
    hi = transient_prob(tm.em, g_hi, t, epsilon)
    i = tm.em.initial
    return float(lo.lower[i]), float(hi.upper[i])


def eval_goal(tm, expr_fn):
    """Evaluate a compiled goal predicate over the explored states; the
    sink is excluded (its truth value is unknowable by construction)."""
    g = np.zeros(tm.em.n, dtype=bool)
    for s in range(tm.em.n - 1):
        g[s] = bool(expr_fn(tm.em.layout.unpack(tm.em.packed[s])))
    return g
