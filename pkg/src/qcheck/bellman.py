"""Fixpoint machinery: qualitative precomputation, end components, and
value / interval / optimistic iteration over a generic Bellman operator.

The solver works on a BellmanSystem, a self-contained CSR view of choices
and branches with a per-state selector (maximize or minimize), so MDPs,
chains (one choice per state) and turn-based games (mixed selectors) all go
through the same code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError

DEFAULT_MAX_ITERS = 2_000_000


@dataclass
class ValueBounds:
    lower: np.ndarray
    upper: np.ndarray
    iterations: int
    converged: bool

    @property
    def value(self):
        return 0.5 * (self.lower + self.upper)

    def at(self, s):
        return (float(self.lower[s]), float(self.upper[s]))


class BellmanSystem:
    """States with choice rows; rows stochastic; selector total.

    known states have their value pinned (e.g. targets at 1); the backup
    never overwrites them. `maximize` is a bool array (mixed selectors
    support games); `reweight`, when set, recomputes branch probabilities
    from the current value vector (interval uncertainty hooks in there).
    """

    def __init__(
        self,
        choice_ptr,
        branch_ptr,
        branch_col,
        branch_prob,
        choice_reward=None,
        maximize=True,
        known=None,
        known_value=None,
        reweight=None,
    ):
        self.choice_ptr = np.asarray(choice_ptr, dtype=np.int64)
        self.branch_ptr = np.asarray(branch_ptr, dtype=np.int64)
        self.branch_col = np.asarray(branch_col, dtype=np.int64)
        self.branch_prob = np.asarray(branch_prob, dtype=np.float64)
        self.n = len(self.choice_ptr) - 1
        self.choice_reward = (
            None if choice_reward is None else np.asarray(choice_reward, dtype=np.float64)
        )
        if isinstance(maximize, (bool, np.bool_)):
            maximize = np.full(self.n, bool(maximize))
        self.maximize = np.asarray(maximize, dtype=bool)
        self.known = (
            np.zeros(self.n, dtype=bool) if known is None else np.asarray(known, dtype=bool)
        )
        self.known_value = (
            np.zeros(self.n) if known_value is None else np.asarray(known_value, dtype=np.float64)
        )
        self.reweight = reweight
        self._mixed = not (self.maximize.all() or (~self.maximize).all())
        counts = np.diff(self.choice_ptr)
        if (counts == 0).any() and not self.known[counts == 0].all():
            raise SolverError("state without choices and without a known value")
        self._state_of_choice = np.repeat(np.arange(self.n), counts)

    def q_values(self, x):
        """Per-choice backup values under the current value vector."""
        prob = self.branch_prob if self.reweight is None else self.reweight(x)
        contrib = prob * x[self.branch_col]
        q = np.add.reduceat(contrib, self.branch_ptr[:-1]) if len(contrib) else np.empty(0)
        if self.choice_reward is not None:
            q = q + self.choice_reward
        return q

    def backup(self, x, mask=None):
        """One Bellman application; known states keep their pinned value."""
        q = self.q_values(x)
        ptr = self.choice_ptr
        counts = np.diff(ptr)
        nonempty = counts > 0
        out = x.copy()
        starts = ptr[:-1][nonempty]
        if len(q) == 0 or not nonempty.any():
            pass
        elif self._mixed:
            vmax = np.maximum.reduceat(q, starts)
            vmin = np.minimum.reduceat(q, starts)
            out[nonempty] = np.where(self.maximize[nonempty], vmax, vmin)
        elif self.maximize[0]:
            out[nonempty] = np.maximum.reduceat(q, starts)
        else:
            out[nonempty] = np.minimum.reduceat(q, starts)
        out[self.known] = self.known_value[self.known]
        if mask is not None:
            out = np.where(mask, out, x)
        return out

    def greedy_choices(self, x):
        """Argmax/argmin choice per state under value vector x."""
        q = self.q_values(x)
        pick = np.zeros(self.n, dtype=np.int64)
        for s in range(self.n):
            a, b = self.choice_ptr[s], self.choice_ptr[s + 1]
            if a == b:
                pick[s] = -1
                continue
            seg = q[a:b]
            k = int(np.argmax(seg)) if self.maximize[s] else int(np.argmin(seg))
            pick[s] = a + k
        return pick


def solve_bellman(
    sys,
    method="ii",
    epsilon=1e-6,
    topological=False,
    max_iters=DEFAULT_MAX_ITERS,
    lower_init=None,
    upper_init=None,
    cap=None,
):
    """Solve the fixpoint of `sys` to ValueBounds.

    vi: single sequence from below, relative-difference stop (no guarantee).
    ii: synchronized lower/upper sequences, stop when max gap <= 2*epsilon.
    ovi: vi from below, then a guessed upper vector verified inductively;
    inflated and retried on failure, falling back to ii.

    `cap` bounds values from above (1.0 for probabilities). topological
    solves SCCs of the dependency graph in reverse topological order.
    """
    lo = np.where(sys.known, sys.known_value, 0.0) if lower_init is None else lower_init.copy()
    if upper_init is None:
        hi = np.where(sys.known, sys.known_value, cap if cap is not None else 1.0)
    else:
        hi = upper_init.copy()

    if topological and sys.n > 1:
        return _solve_topological(sys, method, epsilon, max_iters, lo, hi, cap)
    return _solve_block(sys, method, epsilon, max_iters, lo, hi, cap, mask=None)


def _solve_block(sys, method, epsilon, max_iters, lo, hi, cap, mask):
    if method == "vi":
        return _vi(sys, epsilon, max_iters, lo, mask)
    if method == "ii":
        return _ii(sys, epsilon, max_iters, lo, hi, mask)
    if method == "ovi":
        return _ovi(sys, epsilon, max_iters, lo, hi, cap, mask)
    raise SolverError(f"unknown method {method!r}")


def _rel_diff(a, b):
    denom = np.maximum(np.abs(b), 1e-300)
    return float(np.max(np.abs(a - b) / denom)) if len(a) else 0.0


def _vi(sys, epsilon, max_iters, lo, mask):
    x = lo
    for it in range(1, max_iters + 1):
        x2 = sys.backup(x, mask)
        if _rel_diff(x2, x) < epsilon:
            return ValueBounds(x2, x2.copy(), it, True)
        x = x2
    return ValueBounds(x, x.copy(), max_iters, False)


def _ii(sys, epsilon, max_iters, lo, hi, mask, deflate=None):
    for it in range(1, max_iters + 1):
        lo = np.maximum(lo, sys.backup(lo, mask))
        hi = np.minimum(hi, sys.backup(hi, mask))
        if deflate is not None and it % 50 == 0:
            hi = deflate(lo, hi)
        gap = hi - lo
        sel = gap if mask is None else gap[mask]
        if len(sel) == 0 or float(np.max(sel)) <= 2 * epsilon:
            return ValueBounds(lo, hi, it, True)
    return ValueBounds(lo, hi, max_iters, False)


def _ovi(sys, epsilon, max_iters, lo, hi, cap, mask):
    x = lo
    eps_vi = epsilon
    total_it = 0
    for attempt in range(10):
        # value iteration from below until relative stop
        while total_it < max_iters:
            total_it += 1
            x2 = sys.backup(x, mask)
            if _rel_diff(x2, x) < eps_vi:
                x = x2
                break
            x = x2
        # a tight guess keeps the verified gap at epsilon; failed attempts
        # refine the iterate from below (eps_vi shrinks) rather than
        # inflating the guess, which would widen the result
        guess = x + np.maximum(epsilon, epsilon * np.abs(x))
        guess = np.minimum(guess, hi)
        if cap is not None:
            guess = np.minimum(guess, cap)
        guess[sys.known] = sys.known_value[sys.known]
        if mask is not None:
            guess = np.where(mask, guess, x)
        b = sys.backup(guess, mask)
        if np.all(b <= guess + 1e-14):
            # inductive upper bound verified: value <= guess everywhere
            return ValueBounds(x, np.minimum(guess, b + 1e-14), total_it + 1, True)
        eps_vi /= 2.0
    # verification kept failing: fall back to the sound interval iteration
    return _ii(sys, epsilon, max_iters - total_it, x, hi, mask)


def _solve_topological(sys, method, epsilon, max_iters, lo, hi, cap):
    # dependency graph: s -> branch targets of its choices (known states
    # have fixed values and form their own trivial blocks)
    succ_ptr, succ_col = _successor_csr(sys)
    comps = strongly_connected_components(sys.n, succ_ptr, succ_col)
    x_lo, x_hi = lo, hi
    iterations = 0
    converged = True
    for comp in comps:  # Tarjan emits sinks first: dependencies are solved
        comp = np.asarray(comp, dtype=np.int64)
        unknown = comp[~sys.known[comp]]
        if len(unknown) == 0:
            continue
        mask = np.zeros(sys.n, dtype=bool)
        mask[unknown] = True
        vb = _solve_block(sys, method, epsilon, max_iters, x_lo, x_hi, cap, mask)
        x_lo, x_hi = vb.lower, vb.upper
        # downstream blocks read a single point estimate; keep the bounds
        iterations += vb.iterations
        converged = converged and vb.converged
    return ValueBounds(x_lo, x_hi, iterations, converged)


def _successor_csr(sys):
    # branches are already grouped by state (choices are CSR per state)
    return sys.branch_ptr[sys.choice_ptr], sys.branch_col


def strongly_connected_components(n, succ_ptr, succ_col):
    """Iterative Tarjan; returns SCCs with sinks first (reverse topological
    order of the condensation)."""
    index = np.full(n, -1, dtype=np.int64)
    lowlink = np.zeros(n, dtype=np.int64)
    on_stack = np.zeros(n, dtype=bool)
    stack = []
    comps = []
    counter = [0]

    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = lowlink[v] = counter[0]
                counter[0] += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            for j in range(succ_ptr[v] + pi, succ_ptr[v + 1]):
                w = succ_col[j]
                if index[w] == -1:
                    work[-1] = (v, j - succ_ptr[v] + 1)
                    work.append((int(w), 0))
                    advanced = True
                    break
                if on_stack[w]:
                    lowlink[v] = min(lowlink[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                u = work[-1][0]
                lowlink[u] = min(lowlink[u], lowlink[v])
            if lowlink[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comps.append(comp)
    return comps


# ---------------------------------------------------------------------------
# Qualitative precomputation (graph fixpoints, no numerics)


def _graph_views(em):
    """(state of each choice, choice of each branch) index maps."""
    choice_state = np.repeat(np.arange(em.n), np.diff(em.choice_ptr))
    branch_choice = np.repeat(
        np.arange(em.num_choices), np.diff(em.branch_ptr)
    )
    return choice_state, branch_choice


def _backward_reach(em, start_mask, may=None):
    """States with some path into `start_mask` (any choice, any branch).

    `may` optionally masks out branches (bool array over branches).
    """
    choice_state, branch_choice = _graph_views(em)
    src = choice_state[branch_choice]
    dst = em.branch_col
    if may is not None:
        src, dst = src[may], dst[may]
    # predecessor CSR
    order = np.argsort(dst, kind="stable")
    dst_sorted = dst[order]
    src_sorted = src[order]
    ptr = np.zeros(em.n + 1, dtype=np.int64)
    np.add.at(ptr, dst_sorted + 1, 1)
    ptr = np.cumsum(ptr)
    seen = start_mask.copy()
    frontier = list(np.flatnonzero(start_mask))
    while frontier:
        t = frontier.pop()
        for j in range(ptr[t], ptr[t + 1]):
            s = src_sorted[j]
            if not seen[s]:
                seen[s] = True
                frontier.append(int(s))
    return seen


def prob01(em, goal, direction):
    """(S0, S1): states with reach probability exactly 0 / exactly 1 for
    the sup (direction='max') or inf ('min') over schedulers.

    Pure graph fixpoints. For interval models the may-graph (upper bound
    > 0) must be passed through `em` branch structure by the caller; point
    models use all branches.
    """
    goal = np.asarray(goal, dtype=bool)
    choice_state, branch_choice = _graph_views(em)
    if direction == "max":
        s0 = ~_backward_reach(em, goal)
        s1 = _prob1_forall_exists(em, goal, choice_state)
    else:
        avoid = _avoid_forever(em, goal, choice_state)
        s0 = avoid
        s1 = ~_backward_reach(em, avoid)
        s1 |= goal
    s0 = s0 & ~goal
    return s0, s1


def _avoid_forever(em, goal, choice_state):
    """Greatest fixpoint: non-goal states where some choice keeps all
    branches inside the set (a scheduler can avoid `goal` forever)."""
    a = ~goal
    while True:
        # choice ok if all its branches stay in a
        branch_ok = a[em.branch_col]
        choice_ok = np.logical_and.reduceat(branch_ok, em.branch_ptr[:-1])
        state_ok = np.zeros(em.n, dtype=bool)
        np.logical_or.at(state_ok, choice_state, choice_ok)
        new_a = a & state_ok
        if (new_a == a).all():
            return a
        a = new_a


def _prob1_forall_exists(em, goal, choice_state):
    """States where sup over schedulers of P(F goal) = 1 (classic nested
    fixpoint: shrink the safe set until stable)."""
    u = np.ones(em.n, dtype=bool)
    while True:
        v = goal.copy()
        while True:
            stay = u[em.branch_col]
            hit = v[em.branch_col]
            choice_stay = np.logical_and.reduceat(stay, em.branch_ptr[:-1])
            choice_hit = np.logical_or.reduceat(hit, em.branch_ptr[:-1])
            good_choice = choice_stay & choice_hit
            state_good = np.zeros(em.n, dtype=bool)
            np.logical_or.at(state_good, choice_state, good_choice)
            new_v = v | (state_good & ~v)
            if (new_v == v).all():
                break
            v = new_v
        if (v == u).all():
            return u
        u = v


# ---------------------------------------------------------------------------
# End components


def mec_decompose(em):
    """Maximal end components: list of (state set, retained choice set).

    A retained choice keeps every branch inside the component; each MEC is
    strongly connected under its retained choices and maximal. Singleton
    states without a self-staying choice are not end components.
    """
    choice_state, _ = _graph_views(em)
    result = []
    work = [np.arange(em.n, dtype=np.int64)]
    while work:
        comp = work.pop()
        in_comp = np.zeros(em.n, dtype=bool)
        in_comp[comp] = True
        # retained choices: owned by the component, all branches inside it
        branch_in = in_comp[em.branch_col]
        choice_in = (
            np.logical_and.reduceat(branch_in, em.branch_ptr[:-1])
            if em.num_choices
            else np.zeros(0, dtype=bool)
        )
        choice_in &= in_comp[choice_state]
        retained = np.flatnonzero(choice_in)
        if len(retained) == 0:
            continue
        # drop states without a retained choice and retry on the remainder
        has_choice = np.zeros(em.n, dtype=bool)
        has_choice[choice_state[retained]] = True
        keep = comp[has_choice[comp]]
        if len(keep) < len(comp):
            if len(keep):
                work.append(keep)
            continue
        # subgraph over retained choices only
        sub_index = {int(s): i for i, s in enumerate(comp)}
        adj = [[] for _ in range(len(comp))]
        for c in retained:
            s = sub_index[int(choice_state[c])]
            for b in range(em.branch_ptr[c], em.branch_ptr[c + 1]):
                adj[s].append(sub_index[int(em.branch_col[b])])
        succ_ptr = np.zeros(len(comp) + 1, dtype=np.int64)
        flat = []
        for i, lst in enumerate(adj):
            flat.extend(lst)
            succ_ptr[i + 1] = len(flat)
        comps = strongly_connected_components(
            len(comp), succ_ptr, np.asarray(flat, dtype=np.int64)
        )
        if len(comps) == 1 and len(comps[0]) == len(comp):
            # closed, strongly connected, every state has a retained choice
            result.append(
                (
                    frozenset(int(s) for s in comp),
                    frozenset(int(c) for c in retained),
                )
            )
        else:
            for sub in comps:
                work.append(comp[np.asarray(sub, dtype=np.int64)])
    return result


def mec_quotient(em, mecs, skip=None):
    """Collapse each MEC into one state; returns (QuotientView, state_map).

    state_map[s] is the quotient index of original state s. Choices fully
    inside a MEC disappear; other choices survive with redirected branches.
    `skip` marks states (bit-set) excluded from collapsing (e.g. goal).
    """
    state_map = np.full(em.n, -1, dtype=np.int64)
    nq = 0
    mec_of_state = {}
    for mi, (states, _) in enumerate(mecs):
        if skip is not None and any(skip[s] for s in states):
            continue
        for s in states:
            mec_of_state[s] = mi
    assigned = {}
    for s in range(em.n):
        mi = mec_of_state.get(s)
        if mi is None:
            state_map[s] = nq
            nq += 1
        else:
            if mi not in assigned:
                assigned[mi] = nq
                nq += 1
            state_map[s] = assigned[mi]
    choice_state, _ = _graph_views(em)
    choice_keep = np.ones(em.num_choices, dtype=bool)
    for states, choices in mecs:
        if skip is not None and any(skip[s] for s in states):
            continue
        for c in choices:
            choice_keep[c] = False
    ptr_c = [0]
    b_cols, b_probs = [], []
    choice_src = []
    rows = [[] for _ in range(nq)]
    for c in range(em.num_choices):
        if not choice_keep[c]:
            continue
        qs = int(state_map[choice_state[c]])
        rows[qs].append(c)
    choice_ptr_list = [0]
    for qs in range(nq):
        for c in rows[qs]:
            merged = {}
            for b in range(em.branch_ptr[c], em.branch_ptr[c + 1]):
                t = int(state_map[em.branch_col[b]])
                merged[t] = merged.get(t, 0.0) + float(em.branch_prob[b])
            for t, p in sorted(merged.items()):
                b_cols.append(t)
                b_probs.append(p)
            ptr_c.append(len(b_cols))
            choice_src.append(c)
        choice_ptr_list.append(len(choice_src))

    class QuotientView:
        pass

    qv = QuotientView()
    qv.n = nq
    qv.choice_ptr = np.asarray(choice_ptr_list, dtype=np.int64)
    qv.branch_ptr = np.asarray(ptr_c, dtype=np.int64)
    qv.branch_col = np.asarray(b_cols, dtype=np.int64)
    qv.branch_prob = np.asarray(b_probs, dtype=np.float64)
    qv.choice_src = np.asarray(choice_src, dtype=np.int64)  # original choice
    qv.num_choices = len(choice_src)
    return qv, state_map
