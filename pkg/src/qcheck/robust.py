"""Robust reachability for interval DTMCs and interval MDPs.

Uncertainty semantics are dynamic/rectangular: nature re-picks a
distribution inside the interval polytope at every visit, independently
per state. The Bellman backup therefore composes the outer selector
(schedulers) with an exact inner optimization over each choice's polytope.
"""

from __future__ import annotations

import numpy as np

from .bellman import BellmanSystem, ValueBounds, _backward_reach, solve_bellman
from .errors import InvariantViolation, QueryError


def inner_optimize(branches, values, inner):
    """Extremize sum(p_i * values[dest_i]) over the interval polytope.

    `branches` is a list of (destination, lo, hi). Order statistics: give
    every branch its lower bound, then raise branches toward their upper
    bound in value order (best first for inner=max, worst first for min)
    until the mass reaches one. Exact for this class of polytopes.
    """
    k = len(branches)
    dest = [b[0] for b in branches]
    lo = [float(b[1]) for b in branches]
    hi = [float(b[2]) for b in branches]
    p = list(lo)
    mass = 1.0 - sum(lo)
    if mass < -1e-9 or sum(hi) < 1.0 - 1e-9:
        raise InvariantViolation("empty interval polytope")
    order = sorted(range(k), key=lambda i: values[dest[i]], reverse=(inner == "max"))
    last = None
    for i in order:
        if mass <= 0:
            break
        take = min(hi[i] - lo[i], mass)
        if take > 0:
            p[i] += take
            mass -= take
            last = i
    if last is not None:
        residual = 1.0 - sum(p)
        assert abs(residual) <= 1e-12, residual
        p[last] += residual
    value = sum(pi * values[d] for pi, d in zip(p, dest))
    return p, value


def _reweight_fn(em, inner):
    """Per-iteration branch probabilities realizing the inner optimum."""
    spans = [
        (em.branch_ptr[c], em.branch_ptr[c + 1]) for c in range(em.num_choices)
    ]

    def reweight(x):
        out = np.empty(len(em.branch_col))
        for a, b in spans:
            cols = em.branch_col[a:b]
            lo = em.branch_lo[a:b]
            hi = em.branch_hi[a:b]
            vals = x[cols]
            order = np.argsort(-vals if inner == "max" else vals, kind="stable")
            p = lo.copy()
            mass = 1.0 - float(lo.sum())
            for i in order:
                if mass <= 0:
                    break
                take = min(float(hi[i] - lo[i]), mass)
                p[i] += take
                mass -= take
            out[a:b] = p
        return out

    return reweight


def robust_reach(em, goal, outer, inner, method="ii", epsilon=1e-6):
    """Bounds on outer-over-schedulers, inner-over-nature P(F goal).

    Qualitative preprocessing is conservative and sound for every
    direction pair: states with no goal path even in the may-graph
    (upper bound > 0) are pinned to 0; goal states to 1. Everything else
    is solved numerically by robust value iteration.
    """
    if not em.is_interval:
        raise QueryError("robust queries need an interval model")
    if outer not in ("max", "min") or inner not in ("max", "min"):
        raise QueryError("robust directions must be max or min")
    goal = np.asarray(goal, dtype=bool)

    may = em.branch_hi > 0
    unreachable = ~_backward_reach(em, goal, may=may)
    known = goal | unreachable
    known_value = np.where(goal, 1.0, 0.0)

    if em.num_choices != em.n and outer is None:
        raise QueryError("interval MDP queries need an outer direction")

    sys = BellmanSystem(
        em.choice_ptr,
        em.branch_ptr,
        em.branch_col,
        np.zeros(len(em.branch_col)),  # replaced by reweight every backup
        maximize=(outer == "max"),
        known=known,
        known_value=known_value,
        reweight=_reweight_fn(em, inner),
    )
    vb = solve_bellman(sys, method, epsilon, cap=1.0)
    vb.lower[known] = known_value[known]
    vb.upper[known] = known_value[known]
    return vb
