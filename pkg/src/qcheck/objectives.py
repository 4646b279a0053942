"""Single-objective queries on explored models: reachability probability,
expected total reward, and expected long-run average reward.

All solvers return ValueBounds over the original state indexing; quotient
constructions (end components collapsed) stay internal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bellman import (
    BellmanSystem,
    ValueBounds,
    _backward_reach,
    _graph_views,
    mec_decompose,
    mec_quotient,
    prob01,
    solve_bellman,
    strongly_connected_components,
)
from .errors import InfiniteRewardError, QueryError, SolverError

UNIFORMIZATION_SLACK = 1.01


def _resolve_direction(em, direction):
    if direction is not None:
        return direction
    if em.num_choices != em.n:
        raise QueryError(
            "directionless query on a model with nondeterminism; use max/min"
        )
    return "max"


def reach_prob(em, goal, direction, method="ii", epsilon=1e-6, topological=False):
    """Bounds on the optimal probability of eventually reaching `goal`.

    CTMCs are handled through their embedded jump chain (time plays no
    role for unbounded reachability). ii/ovi results carry the 2-epsilon
    gap guarantee; vi results are best-effort.
    """
    direction = _resolve_direction(em, direction)
    goal = np.asarray(goal, dtype=bool)
    s0, s1 = prob01(em, goal, direction)
    unknown = ~(s0 | s1)

    values_known = np.where(s1, 1.0, 0.0)
    if not unknown.any():
        return ValueBounds(values_known, values_known.copy(), 0, True)

    if direction == "max":
        vb, state_map = _solve_reach_quotient(
            em, unknown, s1, method, epsilon, topological
        )
        lower = values_known.copy()
        upper = values_known.copy()
        lower[unknown] = vb.lower[state_map[unknown]]
        upper[unknown] = vb.upper[state_map[unknown]]
        return ValueBounds(lower, upper, vb.iterations, vb.converged)

    sys = BellmanSystem(
        em.choice_ptr,
        em.branch_ptr,
        em.branch_col,
        em.branch_prob,
        maximize=False,
        known=~unknown,
        known_value=values_known,
    )
    vb = solve_bellman(sys, method, epsilon, topological=topological, cap=1.0)
    vb.lower[~unknown] = values_known[~unknown]
    vb.upper[~unknown] = values_known[~unknown]
    return vb


def _restricted_view(em, state_mask):
    """Sub-model over `state_mask` keeping only choices whose branches all
    stay inside; used for end-component analysis of the unknown region."""
    idx = np.flatnonzero(state_mask)
    new_of = np.full(em.n, -1, dtype=np.int64)
    new_of[idx] = np.arange(len(idx))
    choice_state, _ = _graph_views(em)
    choice_ptr = [0]
    branch_ptr = [0]
    cols, probs = [], []
    choice_ids = []
    for s in idx:
        for c in range(em.choice_ptr[s], em.choice_ptr[s + 1]):
            bs = em.branch_col[em.branch_ptr[c]:em.branch_ptr[c + 1]]
            if not state_mask[bs].all():
                continue
            choice_ids.append(c)
            cols.extend(int(new_of[t]) for t in bs)
            probs.extend(em.branch_prob[em.branch_ptr[c]:em.branch_ptr[c + 1]])
            branch_ptr.append(len(cols))
        choice_ptr.append(len(choice_ids))

    class View:
        pass

    v = View()
    v.n = len(idx)
    v.choice_ptr = np.asarray(choice_ptr, dtype=np.int64)
    v.branch_ptr = np.asarray(branch_ptr, dtype=np.int64)
    v.branch_col = np.asarray(cols, dtype=np.int64)
    v.branch_prob = np.asarray(probs, dtype=np.float64)
    v.num_choices = len(choice_ids)
    return v, idx, np.asarray(choice_ids, dtype=np.int64)


def _mecs_in(em, state_mask):
    """MECs of `em` lying entirely within `state_mask` (original ids)."""
    view, state_ids, choice_ids = _restricted_view(em, state_mask)
    if view.num_choices == 0:
        return []
    out = []
    for states, choices in mec_decompose(view):
        out.append(
            (
                frozenset(int(state_ids[s]) for s in states),
                frozenset(int(choice_ids[c]) for c in choices),
            )
        )
    return out


def _solve_reach_quotient(em, unknown, s1, method, epsilon, topological):
    """Max-reachability on the MEC quotient of the unknown region (upper
    value iteration does not converge inside end components otherwise)."""
    mecs = _mecs_in(em, unknown)
    skip = ~unknown
    qv, state_map = mec_quotient(em, mecs, skip=skip)
    known = np.zeros(qv.n, dtype=bool)
    known_value = np.zeros(qv.n)
    for s in range(em.n):
        if not unknown[s]:
            q = state_map[s]
            known[q] = True
            known_value[q] = 1.0 if s1[s] else 0.0
    sys = BellmanSystem(
        qv.choice_ptr,
        qv.branch_ptr,
        qv.branch_col,
        qv.branch_prob,
        maximize=True,
        known=known,
        known_value=known_value,
    )
    vb = solve_bellman(sys, method, epsilon, topological=topological, cap=1.0)
    return vb, state_map


def _step_rewards(em, reward):
    """(state part folded in) one-step reward per choice; CTMC state
    rewards are per unit time and scale with the expected sojourn."""
    if reward not in em.state_rewards:
        raise QueryError(f"unknown reward structure {reward!r}")
    srew = em.state_rewards[reward]
    crew = em.choice_rewards[reward]
    if (srew < 0).any() or (crew < 0).any():
        raise QueryError(
            "negative rewards are not supported; shift the structure to be "
            "non-negative and rescale the result"
        )
    choice_state, _ = _graph_views(em)
    per_state = srew.copy()
    if em.is_ctmc:
        with np.errstate(divide="ignore", invalid="ignore"):
            per_state = np.where(em.exit_rate > 0, srew / em.exit_rate, 0.0)
    return per_state[choice_state] + crew


def total_reward(em, reward, goal, direction, method="ii", epsilon=1e-6, topological=False):
    """Bounds on optimal expected reward accumulated until `goal`.

    Runs that never reach the goal keep accumulating; the value is infinite
    (reported as an error) when a positive-reward end component is
    exploitable (max) or unavoidable (min).
    """
    direction = _resolve_direction(em, direction)
    goal = np.asarray(goal, dtype=bool)
    step = _step_rewards(em, reward)
    choice_state, _ = _graph_views(em)

    mecs = _mecs_in(em, ~goal)
    zero_mecs, positive_states = [], np.zeros(em.n, dtype=bool)
    for states, choices in mecs:
        pos = any(step[c] > 0 for c in choices)
        if pos:
            for s in states:
                positive_states[s] = True
        else:
            zero_mecs.append((states, choices))

    if direction == "max":
        if positive_states.any() and _backward_reach(em, positive_states)[em.initial]:
            raise InfiniteRewardError(
                "a positive-reward end component is reachable; the maximal "
                "expected total reward diverges"
            )
    else:
        safe = goal.copy()
        for states, _ in zero_mecs:
            for s in states:
                safe[s] = True
        _, s1 = prob01(em, safe, "max")
        if not s1[em.initial]:
            raise InfiniteRewardError(
                "every scheduler accumulates reward forever; the minimal "
                "expected total reward diverges"
            )

    # collapse zero-reward end components; inside them the optimal play can
    # idle at no cost, modelled by a free move to a zero-value terminal
    qv, state_map = mec_quotient(em, zero_mecs, skip=goal)
    mec_qstates = sorted(
        {int(state_map[next(iter(states))]) for states, _ in zero_mecs}
    )
    nq = qv.n
    known = np.zeros(nq + 1, dtype=bool)
    known_value = np.zeros(nq + 1)
    known[nq] = True  # idle terminal, value 0
    for s in range(em.n):
        if goal[s]:
            known[state_map[s]] = True

    # rebuild the quotient rows with an extra idle choice on MEC states
    new_choice_ptr = [0]
    new_branch_ptr = [0]
    new_cols, new_probs, new_crew = [], [], []
    is_mec_q = np.zeros(nq, dtype=bool)
    is_mec_q[mec_qstates] = True
    for qs in range(nq):
        for c in range(qv.choice_ptr[qs], qv.choice_ptr[qs + 1]):
            for b in range(qv.branch_ptr[c], qv.branch_ptr[c + 1]):
                new_cols.append(int(qv.branch_col[b]))
                new_probs.append(float(qv.branch_prob[b]))
            new_branch_ptr.append(len(new_cols))
            new_crew.append(float(step[qv.choice_src[c]]))
        if is_mec_q[qs] and not known[qs]:
            new_cols.append(nq)
            new_probs.append(1.0)
            new_branch_ptr.append(len(new_cols))
            new_crew.append(0.0)
        new_choice_ptr.append(len(new_crew))
    new_choice_ptr.append(len(new_crew))  # idle terminal: no choices (known)

    sys = BellmanSystem(
        new_choice_ptr,
        new_branch_ptr,
        new_cols,
        new_probs,
        choice_reward=new_crew,
        maximize=(direction == "max"),
        known=known,
        known_value=known_value,
    )
    upper_seed = _reward_upper_seed(sys, np.asarray(new_crew))
    vb = solve_bellman(
        sys,
        method,
        epsilon,
        topological=topological,
        upper_init=np.where(known, known_value, upper_seed),
    )
    lower = np.zeros(em.n)
    upper = np.zeros(em.n)
    lower[:] = vb.lower[state_map]
    upper[:] = vb.upper[state_map]
    lower[goal] = 0.0
    upper[goal] = 0.0
    return ValueBounds(lower, upper, vb.iterations, vb.converged)


def _reward_upper_seed(sys, crew):
    """A sound (if crude) upper bound on the optimal total reward: per SCC,
    any scheduler escapes within |C| steps with probability at least the
    product of the smallest branch probabilities, bounding expected visits."""
    succ_ptr = sys.branch_ptr[sys.choice_ptr]
    comps = strongly_connected_components(sys.n, succ_ptr, sys.branch_col)
    total = 0.0
    for comp in comps:
        if len(comp) == 1:
            s = comp[0]
            if sys.known[s]:
                continue
            has_self = any(
                s in sys.branch_col[sys.branch_ptr[c]:sys.branch_ptr[c + 1]]
                for c in range(sys.choice_ptr[s], sys.choice_ptr[s + 1])
            )
            if not has_self:
                rmax = 0.0
                for c in range(sys.choice_ptr[s], sys.choice_ptr[s + 1]):
                    rmax = max(rmax, crew[c])
                total += rmax
                continue
        in_c = set(comp)
        rmax, pmin = 0.0, 1.0
        for s in comp:
            for c in range(sys.choice_ptr[s], sys.choice_ptr[s + 1]):
                rmax = max(rmax, crew[c])
                for b in range(sys.branch_ptr[c], sys.branch_ptr[c + 1]):
                    if sys.branch_prob[b] > 0:
                        pmin = min(pmin, sys.branch_prob[b])
        if rmax == 0:
            continue
        escape = pmin ** len(comp)
        total += rmax * len(comp) / escape
    return max(total, 1.0)


@dataclass
class LraResult:
    mec_gains: list  # (state frozenset, gain_lower, gain_upper)
    bounds: ValueBounds
    witness: np.ndarray  # choice index per state (original indexing)


def lra_reward(em, reward, direction, epsilon=1e-6, max_iters=2_000_000):
    """Optimal expected long-run average reward, two-phase.

    Phase 1 bounds each maximal end component's gain by value iteration
    with span-seminorm stopping (an added lazy self-loop removes
    periodicity without changing the gain; CTMC gains are computed per
    uniformized step and rescaled by the uniformization rate). Phase 2 is
    a weighted reachability problem on the MEC quotient where each MEC may
    be entered and absorbed at its gain.
    """
    direction = _resolve_direction(em, direction)
    if reward not in em.state_rewards:
        raise QueryError(f"unknown reward structure {reward!r}")
    srew = em.state_rewards[reward]
    crew = em.choice_rewards[reward]
    if (srew < 0).any() or (crew < 0).any():
        raise QueryError(
            "negative rewards are not supported; shift the structure to be "
            "non-negative and rescale the result"
        )

    lam = None
    if em.is_ctmc:
        lam = UNIFORMIZATION_SLACK * float(em.exit_rate.max())

    mecs = mec_decompose(em)
    if not mecs:
        raise SolverError("model has no end component; long-run average undefined")
    gains = []
    witness = np.full(em.n, -1, dtype=np.int64)
    for states, choices in mecs:
        g_lo, g_hi, picks = _mec_gain(
            em, states, choices, srew, crew, direction, epsilon, lam, max_iters
        )
        gains.append((states, g_lo, g_hi))
        for s, c in picks.items():
            witness[s] = c

    qv, state_map = mec_quotient(em, mecs, skip=None)
    vb = _weighted_reach(em, qv, state_map, gains, direction, epsilon)
    lower = vb.lower[state_map]
    upper = vb.upper[state_map]
    out = ValueBounds(lower, upper, vb.iterations, vb.converged)

    # transient states: greedy witness against the final value estimates
    mid = out.value
    for s in range(em.n):
        if witness[s] != -1:
            continue
        best, best_c = None, -1
        for c in range(em.choice_ptr[s], em.choice_ptr[s + 1]):
            bs = slice(em.branch_ptr[c], em.branch_ptr[c + 1])
            q = float(np.dot(em.branch_prob[bs], mid[em.branch_col[bs]]))
            if best is None or (q > best if direction == "max" else q < best):
                best, best_c = q, c
        witness[s] = best_c
    return LraResult(gains, out, witness)


def _mec_gain(em, states, choices, srew, crew_in, direction, epsilon, lam, max_iters):
    """Span-seminorm value iteration for one MEC's optimal gain.

    Discrete time: the lazy transform P' = 0.9 P + 0.1 I keeps the
    stationary distribution (hence the gain) and removes periodicity.
    Continuous time: value iteration runs on the uniformized chain with
    per-step reward r(s)/lam + c(s,a)*exit(s)/lam; the per-step gain is
    rescaled by lam to a per-time gain at the end.
    """
    members = sorted(states)
    local = {s: i for i, s in enumerate(members)}
    choice_state, _ = _graph_views(em)
    choice_ptr = [0]
    branch_ptr = [0]
    cols, probs, crew = [], [], []
    by_state = [[] for _ in members]
    for c in sorted(choices):
        by_state[local[int(choice_state[c])]].append(c)
    laziness = 0.1
    for i, s in enumerate(members):
        for c in by_state[i]:
            bs = slice(em.branch_ptr[c], em.branch_ptr[c + 1])
            if em.is_ctmc:
                rates = em.branch_rate[bs]
                for t, r in zip(em.branch_col[bs], rates):
                    cols.append(local[int(t)])
                    probs.append(float(r) / lam)
                cols.append(i)
                probs.append(1.0 - float(rates.sum()) / lam)
                crew.append(
                    (float(srew[s]) + float(crew_in[c]) * float(em.exit_rate[s]))
                    / lam
                )
            else:
                for t, p in zip(em.branch_col[bs], em.branch_prob[bs]):
                    cols.append(local[int(t)])
                    probs.append((1.0 - laziness) * float(p))
                cols.append(i)
                probs.append(laziness)
                crew.append(float(srew[s]) + float(crew_in[c]))
            branch_ptr.append(len(cols))
        choice_ptr.append(len(crew))

    sys = BellmanSystem(
        choice_ptr,
        branch_ptr,
        cols,
        probs,
        choice_reward=crew,
        maximize=(direction == "max"),
    )
    x = np.zeros(len(members))
    g_lo, g_hi = 0.0, float(np.max(crew)) if crew else 0.0
    for it in range(max_iters):
        x2 = sys.backup(x)
        diff = x2 - x
        g_lo, g_hi = float(diff.min()), float(diff.max())
        if g_hi - g_lo <= epsilon:
            x = x2
            break
        x = x2 - diff.min()  # keep the iterates bounded
    picks = {}
    greedy = sys.greedy_choices(x)
    flat_choices = [c for i in range(len(members)) for c in by_state[i]]
    for i, s in enumerate(members):
        k = int(greedy[i])
        picks[s] = flat_choices[k] if 0 <= k < len(flat_choices) else -1
    if em.is_ctmc:
        g_lo, g_hi = g_lo * lam, g_hi * lam
    return g_lo, g_hi, picks


def _weighted_reach(em, qv, state_map, gains, direction, epsilon):
    """Phase 2: optimal expected gain of the end component the play settles
    in; each MEC quotient state gets an extra absorb option at its gain."""
    nq = qv.n
    gain_lo_of = np.zeros(nq)
    gain_hi_of = np.zeros(nq)
    is_mec_q = np.zeros(nq, dtype=bool)
    for states, g_lo, g_hi in gains:
        q = int(state_map[next(iter(states))])
        is_mec_q[q] = True
        gain_lo_of[q] = g_lo
        gain_hi_of[q] = g_hi

    def build(gain_of):
        # states 0..nq-1 plus one absorbing terminal per MEC
        terminals = {q: nq + i for i, q in enumerate(np.flatnonzero(is_mec_q))}
        n_all = nq + len(terminals)
        choice_ptr = [0]
        branch_ptr = [0]
        cols, probs = [], []
        n_choices = 0
        for qs in range(nq):
            for c in range(qv.choice_ptr[qs], qv.choice_ptr[qs + 1]):
                for b in range(qv.branch_ptr[c], qv.branch_ptr[c + 1]):
                    cols.append(int(qv.branch_col[b]))
                    probs.append(float(qv.branch_prob[b]))
                branch_ptr.append(len(cols))
                n_choices += 1
            if is_mec_q[qs]:
                cols.append(terminals[qs])
                probs.append(1.0)
                branch_ptr.append(len(cols))
                n_choices += 1
            choice_ptr.append(n_choices)
        choice_ptr.extend([n_choices] * len(terminals))
        known = np.zeros(n_all, dtype=bool)
        known_value = np.zeros(n_all)
        for q, t in terminals.items():
            known[t] = True
            known_value[t] = gain_of[q]
        return BellmanSystem(
            choice_ptr,
            branch_ptr,
            cols,
            probs,
            maximize=(direction == "max"),
            known=known,
            known_value=known_value,
        )

    cap = float(gain_hi_of.max(initial=0.0))
    sys_lo = build(gain_lo_of)
    sys_hi = build(gain_hi_of)
    vb_lo = solve_bellman(sys_lo, "ii", epsilon, cap=cap if cap > 0 else 1.0)
    vb_hi = solve_bellman(sys_hi, "ii", epsilon, cap=cap if cap > 0 else 1.0)
    return ValueBounds(
        vb_lo.lower[:nq],
        vb_hi.upper[:nq],
        vb_lo.iterations + vb_hi.iterations,
        vb_lo.converged and vb_hi.converged,
    )


def steady_state(em, goal, epsilon=1e-6):
    """S=? sugar: long-run fraction of time spent in `goal` states, i.e.
    the long-run average of the goal indicator reward."""
    goal = np.asarray(goal, dtype=bool)
    name = "__steady__"
    saved_s = em.state_rewards.get(name)
    saved_c = em.choice_rewards.get(name)
    em.state_rewards[name] = goal.astype(np.float64)
    em.choice_rewards[name] = np.zeros(em.num_choices)
    try:
        res = lra_reward(em, name, None, epsilon)
    finally:
        if saved_s is None:
            del em.state_rewards[name]
            del em.choice_rewards[name]
        else:
            em.state_rewards[name] = saved_s
            em.choice_rewards[name] = saved_c
    return res
