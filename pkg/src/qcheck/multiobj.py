"""Multi-objective analysis on MDPs: achievability, numerical and Pareto
queries over reachability-probability and total-reward objectives.

Everything is reduced to weighted-sum total-reward solves on a product of
the model with one memory bit per objective (the bit records whether that
objective's goal has been hit). A reach objective pays reward 1 the moment
its bit flips; a reward objective accumulates its structure while its bit
is unset. Minimise-style reach objectives are negated internally so every
coordinate is maximise-style; the public results are in the original
orientation.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .bellman import BellmanSystem, solve_bellman
from .errors import InfiniteRewardError, QueryError, UnsupportedFeatureError
from .objectives import _mecs_in, _reward_upper_seed, _step_rewards

MAX_OBJECTIVES = 4


@dataclass
class MultiObjective:
    """One coordinate: reach-prob with a goal mask, or total-reward with a
    reward structure accumulated until the goal mask is hit."""

    kind: str  # "reach-prob" | "total-reward"
    goal: np.ndarray  # bool mask over model states
    reward: str | None = None
    negate: bool = False  # minimise-style coordinate


@dataclass
class OraclePoint:
    weight: np.ndarray  # internal weight (sums to 1)
    point: np.ndarray  # raw objective values of the witness scheduler
    internal: np.ndarray  # maximise-style (negated where applicable)
    scalar_ub: float  # sound upper bound on max over schedulers of w.internal
    picks: np.ndarray  # product-state choice indices of the witness


@dataclass
class Verdict:
    status: str  # "achievable" | "not-achievable" | "undecided"
    witness_weight: np.ndarray | None = None  # separating weight
    witness_mix: list = field(default_factory=list)  # (lambda, OraclePoint)
    margin: float = 0.0
    oracle_calls: int = 0


@dataclass
class ParetoApprox:
    vertices: list  # OraclePoint per undominated vertex, sorted by coord 0
    halfspaces: list  # (weight, ub) outer constraints, internal orientation
    gap: float  # max scalarized distance between inner hull and outer bound


class Product:
    """Goal-memory product with everything the oracle needs precomputed:
    the zero-reward end components are already collapsed (each gets a free
    idle move to a zero-value terminal), so a single weighted solve is a
    contraction and the induced chain of any scheduler is absorbing."""

    def __init__(self, em, objs):
        if em.is_ctmc or em.is_interval:
            raise QueryError("multi-objective queries support DTMC/MDP models")
        if len(objs) < 2:
            raise QueryError("multi-objective queries need at least 2 objectives")
        if len(objs) > MAX_OBJECTIVES:
            raise UnsupportedFeatureError(
                f"more than {MAX_OBJECTIVES} objectives", "multi-objective product"
            )
        self.objs = objs
        self.ell = len(objs)
        steps = []
        for o in objs:
            if o.kind == "total-reward":
                if o.negate:
                    raise UnsupportedFeatureError(
                        "minimise-style total-reward objectives",
                        "multi-objective product",
                    )
                steps.append(_step_rewards(em, o.reward))
            else:
                steps.append(None)
        goals = [np.asarray(o.goal, dtype=bool) for o in objs]
        self.signs = np.array([-1.0 if o.negate else 1.0 for o in objs])

        def hits(s, bits):
            for i in range(self.ell):
                if not (bits >> i) & 1 and goals[i][s]:
                    bits |= 1 << i
            return bits

        # breadth-first product exploration over (state, bits)
        init_bits = hits(em.initial, 0)
        index = {(em.initial, init_bits): 0}
        order = [(em.initial, init_bits)]
        cp, bp = [0], [0]
        cols, probs = [], []
        rew_rows = [[] for _ in range(self.ell)]
        qi = 0
        while qi < len(order):
            s, bits = order[qi]
            qi += 1
            for c in range(em.choice_ptr[s], em.choice_ptr[s + 1]):
                rvec = [0.0] * self.ell
                for i in range(self.ell):
                    if steps[i] is not None and not (bits >> i) & 1:
                        rvec[i] = float(steps[i][c])
                for b in range(em.branch_ptr[c], em.branch_ptr[c + 1]):
                    t = int(em.branch_col[b])
                    p = float(em.branch_prob[b])
                    nbits = hits(t, bits)
                    key = (t, nbits)
                    if key not in index:
                        index[key] = len(order)
                        order.append(key)
                    cols.append(index[key])
                    probs.append(p)
                    for i in range(self.ell):
                        if objs[i].kind == "reach-prob" and (nbits >> i) & 1 and not (bits >> i) & 1:
                            rvec[i] += p  # expected flip reward
                bp.append(len(cols))
                for i in range(self.ell):
                    rew_rows[i].append(rvec[i])
            cp.append(len(bp) - 1)
        self.n = len(order)
        self.initial = 0
        self.choice_ptr = np.asarray(cp, dtype=np.int64)
        self.branch_ptr = np.asarray(bp, dtype=np.int64)
        self.branch_col = np.asarray(cols, dtype=np.int64)
        self.branch_prob = np.asarray(probs, dtype=np.float64)
        self.num_choices = len(bp) - 1
        self.rewards = np.asarray(rew_rows)  # (ell, num_choices), raw >= 0
        self.init_credit = np.array(
            [1.0 if objs[i].kind == "reach-prob" and (init_bits >> i) & 1 else 0.0
             for i in range(self.ell)]
        )

        # bits never flip along a cycle, so end components carry no reach
        # reward; a reward objective active inside one diverges
        mecs = _mecs_in(self, np.ones(self.n, dtype=bool))
        for _, choices in mecs:
            for c in choices:
                if self.rewards[:, c].sum() > 1e-15:
                    raise InfiniteRewardError(
                        "a reward objective accumulates inside an end "
                        "component; its value diverges"
                    )
        self._collapse(mecs)

    def _collapse(self, mecs):
        from .bellman import mec_quotient

        qv, state_map = mec_quotient(self, mecs, skip=None)
        mec_q = sorted({int(state_map[next(iter(st))]) for st, _ in mecs})
        nq = qv.n
        cp, bp = [0], [0]
        cols, probs = [], []
        src = []  # original product choice per collapsed choice (-1: idle)
        is_mec = np.zeros(nq, dtype=bool)
        is_mec[mec_q] = True
        for qs in range(nq):
            for c in range(qv.choice_ptr[qs], qv.choice_ptr[qs + 1]):
                for b in range(qv.branch_ptr[c], qv.branch_ptr[c + 1]):
                    cols.append(int(qv.branch_col[b]))
                    probs.append(float(qv.branch_prob[b]))
                bp.append(len(cols))
                src.append(int(qv.choice_src[c]))
            if is_mec[qs]:
                cols.append(nq)
                probs.append(1.0)
                bp.append(len(cols))
                src.append(-1)
            cp.append(len(src))
        cp.append(len(src))  # terminal: no choices
        self.c_n = nq + 1
        self.c_choice_ptr = np.asarray(cp, dtype=np.int64)
        self.c_branch_ptr = np.asarray(bp, dtype=np.int64)
        self.c_branch_col = np.asarray(cols, dtype=np.int64)
        self.c_branch_prob = np.asarray(probs, dtype=np.float64)
        self.c_src = np.asarray(src, dtype=np.int64)
        self.c_known = np.zeros(self.c_n, dtype=bool)
        self.c_known[nq] = True
        self.c_initial = int(state_map[self.initial])
        rew = np.zeros((self.ell, len(src)))
        live = self.c_src >= 0
        rew[:, live] = self.rewards[:, self.c_src[live]]
        self.c_rewards = rew


def weighted_oracle(prod, w, epsilon=1e-6):
    """Best scheduler for the scalarization w . internal-objectives.

    Returns its evaluated objective vector (each coordinate solved to
    epsilon) plus a sound upper bound on the scalarized optimum. Ties are
    broken toward the smallest choice index.
    """
    w = np.asarray(w, dtype=np.float64)
    if (w < 0).any() or w.sum() <= 0 or len(w) != prod.ell:
        raise QueryError("oracle weights must be non-negative and non-zero")
    w = w / w.sum()
    crew = (prod.signs * w) @ prod.c_rewards
    sys = BellmanSystem(
        prod.c_choice_ptr,
        prod.c_branch_ptr,
        prod.c_branch_col,
        prod.c_branch_prob,
        choice_reward=crew,
        maximize=True,
        known=prod.c_known,
        known_value=np.zeros(prod.c_n),
    )
    up = _reward_upper_seed(sys, np.maximum(crew, 0.0))
    dn = _reward_upper_seed(sys, np.maximum(-crew, 0.0))
    vb = solve_bellman(
        sys,
        "ii",
        epsilon,
        lower_init=np.where(prod.c_known, 0.0, -dn),
        upper_init=np.where(prod.c_known, 0.0, up),
    )
    picks = sys.greedy_choices(vb.lower)
    internal = np.empty(prod.ell)
    for i in range(prod.ell):
        vi = _chain_value(prod, picks, prod.c_rewards[i], epsilon)
        internal[i] = prod.signs[i] * (vi + prod.init_credit[i])
    credit = float((prod.signs * w) @ prod.init_credit)
    scalar_ub = float(vb.upper[prod.c_initial]) + credit
    # the evaluated point also scalarizes below the bound, up to solver slack
    scalar_ub = max(scalar_ub, float(w @ internal))
    point = prod.signs * internal  # undo negation for the raw view
    return OraclePoint(w, point, internal, scalar_ub, picks)


def _chain_value(prod, picks, crew, epsilon):
    """Expected total `crew` reward at the initial state of the chain the
    scheduler `picks` induces on the collapsed product."""
    cp, bp = [0], [0]
    cols, probs, rew = [], [], []
    for s in range(prod.c_n):
        if prod.c_known[s]:
            cp.append(len(rew))
            continue
        c = int(picks[s])
        for b in range(prod.c_branch_ptr[c], prod.c_branch_ptr[c + 1]):
            cols.append(int(prod.c_branch_col[b]))
            probs.append(float(prod.c_branch_prob[b]))
        bp.append(len(cols))
        rew.append(float(crew[c]))
        cp.append(len(rew))
    sys = BellmanSystem(
        cp, bp, cols, probs,
        choice_reward=rew,
        maximize=True,
        known=prod.c_known,
        known_value=np.zeros(prod.c_n),
    )
    seed = _reward_upper_seed(sys, np.asarray(rew))
    vb = solve_bellman(
        sys, "ii", epsilon,
        upper_init=np.where(prod.c_known, 0.0, seed),
    )
    return float(vb.value[prod.c_initial])


def _separating_weight(p, points):
    """Weight w >= 0, sum 1, maximizing w.p - max_j w.point_j; the optimum
    is <= 0 exactly when p lies in the downward closure of the hull."""
    ell = len(p)
    if not points:
        return np.full(ell, 1.0 / ell), np.inf
    # vars: w (ell), t; minimize -(w.p - t)
    c = np.concatenate([-p, [1.0]])
    A_ub = np.hstack([np.array([q.internal for q in points]), -np.ones((len(points), 1))])
    b_ub = np.zeros(len(points))
    A_eq = np.concatenate([np.ones(ell), [0.0]])[None, :]
    res = linprog(
        c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
        bounds=[(0, None)] * ell + [(None, None)],
    )
    if not res.success:
        raise QueryError(f"separation LP failed: {res.message}")
    w = np.maximum(res.x[:ell], 0.0)
    return w / w.sum(), float(-res.fun)


def _hull_witness(p, points, tol):
    """Convex combination of oracle points dominating p, or None."""
    if not points:
        return None
    P = np.array([q.internal for q in points])  # (k, ell)
    k = len(points)
    res = linprog(
        np.zeros(k),
        A_ub=-P.T, b_ub=-(p - tol),
        A_eq=np.ones((1, k)), b_eq=[1.0],
        bounds=[(0, None)] * k,
    )
    if not res.success:
        return None
    return [(float(l), q) for l, q in zip(res.x, points) if l > 1e-12]


def achievability(em, objs, point, epsilon=1e-6, max_calls=50, prod=None):
    """Is the objective vector `point` (raw orientation) achievable by a
    single (possibly randomized) scheduler?

    Three-valued: near-boundary points whose distance to the front is not
    resolvable with margin > 2*epsilon come back "undecided" rather than
    as an arbitrary verdict.
    """
    if prod is None:
        prod = Product(em, objs)
    p = prod.signs * np.asarray(point, dtype=np.float64)
    points: list[OraclePoint] = []
    calls = 0
    margin = 2 * epsilon
    while calls < max_calls:
        w, sep = _separating_weight(p, points)
        if sep <= epsilon:
            # p lies (within epsilon) in the downward closure of the hull
            mix = _hull_witness(p, points, tol=epsilon) or []
            return Verdict(
                "achievable", witness_mix=mix, margin=float(-sep), oracle_calls=calls
            )
        prev = max((float(w @ q.internal) for q in points), default=-np.inf)
        r = weighted_oracle(prod, w, epsilon)
        calls += 1
        excess = float(w @ p) - r.scalar_ub
        if excess > margin:
            return Verdict(
                "not-achievable", witness_weight=w, margin=excess, oracle_calls=calls
            )
        points.append(r)
        if float(w @ r.internal) <= prev + epsilon:
            # the oracle cannot push the hull further along the separating
            # direction, yet the bound does not separate with margin either:
            # p sits within the 2-epsilon boundary band
            return Verdict(
                "undecided", witness_weight=w, margin=excess, oracle_calls=calls
            )
    return Verdict("undecided", oracle_calls=calls)


def pareto2(em, objs, epsilon=1e-4, max_calls=200, prod=None):
    """Sandwich approximation of the 2-objective Pareto front.

    Axis weights seed the inner hull; facets are refined largest-gap-first
    by probing their outward normal until the scalarized distance between
    the inner hull and the outer half-space bound drops to epsilon.
    """
    if prod is None:
        prod = Product(em, objs)
    if prod.ell != 2:
        raise QueryError("pareto queries support exactly 2 objectives")
    halfspaces = []
    calls = 0

    def probe(w):
        nonlocal calls
        r = weighted_oracle(prod, np.asarray(w, dtype=np.float64), epsilon)
        calls += 1
        halfspaces.append((r.weight, r.scalar_ub))
        return r

    r10 = probe([1.0, 0.0])
    r01 = probe([0.0, 1.0])
    verts = [r10]
    if np.abs(r01.internal - r10.internal).max() > epsilon:
        verts.append(r01)
    verts.sort(key=lambda r: (-r.internal[0], r.internal[1]))

    def facet(va, vb):
        d = vb.internal - va.internal
        w = np.array([d[1], -d[0]])
        if w.min() < 0 or w.sum() <= 0:
            return None
        w = w / w.sum()
        inner = max(float(w @ v.internal) for v in verts)
        return (w, inner)

    heap = []
    counter = 0

    def push(va, vb):
        nonlocal counter
        f = facet(va, vb)
        if f is None:
            return
        w, inner = f
        r = probe(w)
        gap = r.scalar_ub - max(inner, float(w @ r.internal))
        if float(w @ r.internal) > inner + epsilon:
            heapq.heappush(heap, (-gap, counter, va, r, vb))
            counter += 1

    gap_done = 0.0
    if len(verts) == 2:
        push(verts[0], verts[1])
    while heap and calls < max_calls:
        negg, _, va, vm, vb = heapq.heappop(heap)
        verts.append(vm)
        verts.sort(key=lambda r: (-r.internal[0], r.internal[1]))
        push(va, vm)
        push(vm, vb)

    # drop dominated vertices, recompute the residual gap from recorded cuts
    # tolerance-aware domination: each vertex coordinate carries solver
    # error up to epsilon (differences up to 2 epsilon), so a point must be
    # distinguishably better somewhere (and not distinguishably worse
    # anywhere) to dominate
    undominated = []
    slack = 2 * epsilon
    for r in verts:
        if not any(
            (o.internal >= r.internal - slack).all()
            and (o.internal > r.internal + slack).any()
            for o in verts
        ):
            undominated.append(r)
    undominated.sort(key=lambda r: (-r.internal[0], r.internal[1]))
    gap = 0.0
    for w, ub in halfspaces:
        inner = max(float(w @ v.internal) for v in undominated)
        gap = max(gap, ub - inner)
    for negg, _, va, vm, vb in heap:
        gap = max(gap, -negg)  # unrefined facets keep their measured gap
    return ParetoApprox(undominated, halfspaces, gap)


def numerical(em, objs, free_index, thresholds, epsilon=1e-6, max_calls=400):
    """Optimize objective `free_index` subject to the other objectives
    meeting `thresholds` (raw orientation; the free entry is ignored), by
    bisection with achievability as the decision procedure.

    Returns (lower, upper) on the optimal raw value of the free objective;
    an undecided bisection step stops the refinement and the current
    honest enclosure is returned.
    """
    prod = Product(em, objs)
    point = [float(t) if t is not None else 0.0 for t in thresholds]

    # free coordinate range (internal orientation): from the trivially
    # achievable floor to the unconstrained optimum for that coordinate
    e = np.zeros(prod.ell)
    e[free_index] = 1.0
    top = weighted_oracle(prod, e, epsilon)
    hi_int = top.scalar_ub
    lo_int = -1.0 if prod.objs[free_index].negate else 0.0
    sign = prod.signs[free_index]
    calls = 1

    def decide(c_int):
        nonlocal calls
        pt = list(point)
        pt[free_index] = sign * c_int  # raw value for this internal level
        v = achievability(
            em, objs, pt, epsilon, max_calls=max(max_calls - calls, 4), prod=prod
        )
        calls += v.oracle_calls
        return v.status

    # the thresholds alone must be achievable at the floor
    if decide(lo_int) == "not-achievable":
        raise QueryError("the bounded objectives are not jointly achievable")
    while hi_int - lo_int > epsilon and calls < max_calls:
        mid = 0.5 * (lo_int + hi_int)
        s = decide(mid)
        if s == "achievable":
            lo_int = mid
        elif s == "not-achievable":
            hi_int = mid
        else:
            break  # undecided: report the current enclosure honestly
    if sign > 0:
        return lo_int, hi_int
    return -hi_int, -lo_int
