"""Explicit state-space construction and per-state stepping.

States are bit-packed: a bounded int over [lo, hi] takes ceil(log2(hi-lo+1))
bits, a bool takes one bit, and each automaton with more than one location
contributes a location counter. Exploration is exhaustive BFS; with
workers > 1 the frontier is processed by a thread pool and the final index
is compacted to a canonical order (sorted packed bytes) so that results do
not depend on the worker count.
"""

from __future__ import annotations

import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import expressions as ex
from .errors import BudgetExceededError, InvariantViolation, StateDomainError

PROB_SUM_TOL = 1e-12


@dataclass(frozen=True)
class StateVar:
    name: str
    lo: int  # bools use [0, 1]
    hi: int
    bits: int
    offset: int
    is_bool: bool


class StateLayout:
    """Bit-packing layout over the model's state variables."""

    def __init__(self, model):
        self.vars = []
        offset = 0
        ordered = list(model.variables)
        for v in ordered:
            if v.type == ex.BOOL:
                lo, hi = 0, 1
            else:
                lo, hi = v.lo, v.hi
            span = hi - lo + 1
            bits = max(1, math.ceil(math.log2(span))) if span > 1 else 0
            self.vars.append(StateVar(v.name, lo, hi, bits, offset, v.type == ex.BOOL))
            offset += bits
        for a in model.automata:
            if len(a.locations) > 1:
                bits = max(1, math.ceil(math.log2(len(a.locations))))
                self.vars.append(
                    StateVar(f"_loc_{a.name}", 0, len(a.locations) - 1, bits, offset, False)
                )
                offset += bits
        self.total_bits = offset
        self.nbytes = max(1, (offset + 7) // 8)
        self.index = {sv.name: i for i, sv in enumerate(self.vars)}

    def pack(self, values):
        acc = 0
        for sv, val in zip(self.vars, values):
            acc |= (int(val) - sv.lo) << sv.offset
        return acc.to_bytes(self.nbytes, "little")

    def unpack(self, packed):
        acc = int.from_bytes(packed, "little")
        out = []
        for sv in self.vars:
            raw = (acc >> sv.offset) & ((1 << sv.bits) - 1) if sv.bits else 0
            val = raw + sv.lo
            out.append(bool(val) if sv.is_bool else val)
        return tuple(out)

    def naive_bytes(self):
        # one machine word per variable, the straightforward representation
        return 8 * len(self.vars)


@dataclass(frozen=True)
class State:
    """A model state: the full variable valuation (locations included)."""

    values: tuple

    def as_dict(self, layout):
        return {sv.name: v for sv, v in zip(layout.vars, self.values)}


@dataclass
class ExplorationStats:
    states: int = 0
    transitions: int = 0
    wall_time: float = 0.0
    bytes_per_state: int = 0
    state_table_bytes: int = 0
    transition_bytes: int = 0
    workers: int = 1
    deadlocks_repaired: int = 0


class CompiledModel:
    """A Model compiled for fast successor computation.

    Guards and assignments become Python bytecode over the state tuple;
    branch weights are evaluated exactly (Fractions) so probability-sum
    checks are not subject to rounding.
    """

    def __init__(self, model):
        self.model = model
        self.layout = StateLayout(model)
        idx = self.layout.index
        self.var_index = idx
        self.is_ctmc = model.is_ctmc
        self.is_interval = model.is_interval
        self.discrete_points = model.model_type in ("dtmc", "mdp", "tsg", "pomdp")

        self._domains = [
            (sv.lo, sv.hi, sv.name, sv.is_bool) for sv in self.layout.vars
        ]

        # compiled edges per automaton: (loc, action, guard_fn, branches)
        # branch: (weight_const | weight_fn | (lo,hi), [(var_pos, fn)], dest_loc)
        self.automata = []
        self.loc_pos = {}
        for a in model.automata:
            if len(a.locations) > 1:
                self.loc_pos[a.name] = idx[f"_loc_{a.name}"]
            edges = []
            for e in a.edges:
                guard = self._guard_fn(e.guard)
                branches = []
                for b, dest in zip(e.branches, e.destinations):
                    if b.is_interval:
                        weight = (float(b.weight[0].value), float(b.weight[1].value))
                        w_kind = "interval"
                    elif isinstance(b.weight, ex.Lit):
                        weight = Fraction(b.weight.value)
                        w_kind = "const"
                    else:
                        weight = ex.compile_expr(b.weight, idx, exact=True)
                        w_kind = "expr"
                    assigns = [
                        (idx[name], ex.compile_expr(val, idx))
                        for name, val in b.assignments
                    ]
                    branches.append((w_kind, weight, assigns, dest))
                edges.append((e.location, e.action, guard, branches))
            self.automata.append((a.name, edges, len(a.locations)))

        self._init_sync(model)

        self.player_fns = [
            (name, ex.compile_expr(e, idx)) for name, e in model.players
        ]
        self.observation_fns = [ex.compile_expr(o, idx) for o in model.observations]
        self.reward_fns = {}
        for rname, r in model.rewards.items():
            state_fn = (
                ex.compile_expr(r.state_reward, idx) if r.state_reward is not None else None
            )
            edge_map = {}
            for action, val in r.edge_rewards:
                edge_map.setdefault(action, []).append(ex.compile_expr(val, idx))
            self.reward_fns[rname] = (state_fn, edge_map)

    def _guard_fn(self, guard):
        if isinstance(guard, ex.Lit):
            val = bool(guard.value)
            return None if val else False  # None means "always true"
        return ex.compile_expr(guard, self.var_index)

    def _init_sync(self, model):
        # action -> list of automata indices that declare it
        declared = {}
        for ai, (aname, edges, _) in enumerate(self.automata):
            for _, action, _, _ in edges:
                if action is not None:
                    declared.setdefault(action, set()).add(ai)
        if model.syncs is None:
            # default composition: every automaton declaring an action takes
            # part in it; actions declared by one automaton stay local
            self.sync_vectors = [
                ({ai: act for ai in sorted(ais)}, act)
                for act, ais in sorted(declared.items())
            ]
        else:
            name_to_ai = {au[0]: ai for ai, au in enumerate(self.automata)}
            self.sync_vectors = [
                ({name_to_ai[n]: act for n, act in mapping.items()}, result)
                for mapping, result in model.syncs
            ]

    def initial_state(self):
        values = []
        for v in self.model.variables:
            values.append(v.init)
        for a in self.model.automata:
            if len(a.locations) > 1:
                values.append(a.initial_location)
        return State(tuple(values))

    def _apply(self, values, assigns, loc_updates):
        new = list(values)
        for pos, fn in assigns:
            val = fn(values)
            lo, hi, name, is_bool = self._domains[pos]
            if is_bool:
                new[pos] = bool(val)
            else:
                val = int(val)
                if not lo <= val <= hi:
                    raise StateDomainError(name, val, lo, hi, state=values)
                new[pos] = val
        for pos, loc in loc_updates:
            new[pos] = loc
        return tuple(new)

    def _enabled(self, values, ai):
        """Enabled edges of automaton ai at `values`, grouped by action."""
        aname, edges, nlocs = self.automata[ai]
        loc = values[self.loc_pos[aname]] if nlocs > 1 else 0
        out = []
        for e in edges:
            eloc, action, guard, branches = e
            if eloc != loc:
                continue
            if guard is False:
                continue
            if guard is not None and not guard(values):
                continue
            out.append(e)
        return out

    def _branch_outcomes(self, values, ai, edge):
        """(weight, assignments, location-updates) per branch of one edge."""
        aname, _, nlocs = self.automata[ai]
        loc_pos = self.loc_pos.get(aname)
        out = []
        for w_kind, weight, assigns, dest in edge[3]:
            if w_kind == "expr":
                w = weight(values)
                if not isinstance(w, (int, Fraction)):
                    w = Fraction(repr(float(w)))
            else:
                w = weight
            locs = ((loc_pos, dest),) if nlocs > 1 else ()
            out.append((w, tuple(assigns), locs))
        return out

    def choices(self, values):
        """All composed choices at a state.

        Returns a list of (action, branches); each branch is
        (prob: float, interval: (lo,hi) or None, next_values: tuple).
        For CTMCs the weights are rates. Deadlocks are NOT repaired here.
        """
        n_aut = len(self.automata)
        raw = []  # (action_label, [ (weight, assignments, loc_updates) ])

        enabled_by_action = {}
        for ai in range(n_aut):
            for e in self._enabled(values, ai):
                if e[1] is None:  # silent edge: interleave
                    raw.append((None, self._branch_outcomes(values, ai, e)))
                else:
                    enabled_by_action.setdefault((ai, e[1]), []).append(e)

        for vec, result in self.sync_vectors:
            per_aut = []
            for ai, act in vec.items():
                options = enabled_by_action.get((ai, act))
                if not options:
                    per_aut = None
                    break
                per_aut.append((ai, options))
            if per_aut is not None:
                raw.extend(self._sync_choices(values, per_aut, result))

        out = []
        for action, branches in raw:
            bs = []
            if self.is_interval:
                for w, assigns, locs in branches:
                    nv = self._apply(values, assigns, locs)
                    bs.append((None, w, nv))
            else:
                total = Fraction(0)
                for w, assigns, locs in branches:
                    nv = self._apply(values, assigns, locs)
                    total += w
                    bs.append((float(w), None, nv))
                if self.discrete_points and total != 1:
                    raise InvariantViolation(
                        f"branch weights sum != 1 (got {total}) at state {values}"
                    )
            out.append((action, bs))

        if self.is_ctmc and out:
            merged = []
            for action, bs in out:
                merged.extend(bs)
            out = [(None, merged)]
        return out

    def _sync_choices(self, values, per_aut, result):
        """One composed choice per combination of participating edges;
        branch distributions multiply."""
        edge_combos = [()]
        for ai, options in per_aut:
            edge_combos = [c + ((ai, e),) for c in edge_combos for e in options]
        choices = []
        for combo in edge_combos:
            branches = [(Fraction(1), (), ())]
            for ai, e in combo:
                new_branches = []
                for w0, assigns0, locs0 in branches:
                    for w, assigns, locs in self._branch_outcomes(values, ai, e):
                        if isinstance(w, tuple):  # interval weight
                            if isinstance(w0, tuple):
                                w2 = (w0[0] * w[0], w0[1] * w[1])
                            elif w0 == 1:
                                w2 = w
                            else:
                                w2 = (float(w0) * w[0], float(w0) * w[1])
                        elif isinstance(w0, tuple):
                            w2 = (w0[0] * float(w), w0[1] * float(w))
                        else:
                            w2 = w0 * w
                        new_branches.append((w2, assigns0 + assigns, locs0 + locs))
                branches = new_branches
            choices.append((result, branches))
        return choices

    def owner_of(self, values):
        owners = [i for i, (_, fn) in enumerate(self.player_fns) if fn(values)]
        if len(owners) != 1:
            names = [self.player_fns[i][0] for i in owners]
            raise InvariantViolation(
                f"state {values} owned by {names or 'no player'}; "
                "the player partition must be total and disjoint"
            )
        return owners[0]

    def observation_of(self, values):
        return tuple(fn(values) for fn in self.observation_fns)


class ExplicitModel:
    """Sparse explored model: CSR-style choice and branch arrays."""

    def __init__(self):
        self.model_type = None
        self.layout = None
        self.n = 0
        self.packed = []  # packed bytes per state index
        self.initial = 0
        self.choice_ptr = None  # (n+1,)
        self.choice_action = []  # per choice
        self.branch_ptr = None  # (num_choices+1,)
        self.branch_col = None
        self.branch_prob = None  # normalised probabilities (ctmc: embedded)
        self.branch_rate = None  # raw rates (ctmc only)
        self.branch_lo = None  # interval models
        self.branch_hi = None
        self.exit_rate = None  # per state (ctmc)
        self.state_rewards = {}
        self.choice_rewards = {}
        self.labels = {}
        self.owner = None
        self.player_names = []
        self.observation = None
        self.n_observations = 0
        self.deadlocks_repaired = 0
        self.compiled = None  # CompiledModel, kept for labelling

    @property
    def num_choices(self):
        return len(self.choice_action)

    def choices_of(self, s):
        return range(self.choice_ptr[s], self.choice_ptr[s + 1])

    def branches_of(self, c):
        return range(self.branch_ptr[c], self.branch_ptr[c + 1])

    def values_of(self, s):
        return self.layout.unpack(self.packed[s])

    def state_dict(self, s):
        vals = self.values_of(s)
        return {sv.name: v for sv, v in zip(self.layout.vars, vals)}

    @property
    def is_interval(self):
        return self.branch_lo is not None

    @property
    def is_ctmc(self):
        return self.model_type == "ctmc"


def build_state_space(model, workers=1, max_states=None):
    """Exhaustively explore `model`; returns (ExplicitModel, ExplorationStats).

    BFS order defines the state indexing for workers=1; for workers>1 the
    explored set is identical and indices follow the canonical sorted order
    of packed states.
    """
    cm = model if isinstance(model, CompiledModel) else CompiledModel(model)
    t0 = time.perf_counter()

    init = cm.initial_state().values
    layout = cm.layout
    init_packed = layout.pack(init)
    seen = {init_packed: 0}
    order = [init_packed]
    rows = {}  # index -> list of (action, [(prob, interval, dest_index)])
    deadlocks = [0]
    lock = threading.Lock()
    frontier = deque([(0, init)])
    budget_hit = []

    def process(s_idx, values):
        local_new = []
        choices = cm.choices(values)
        if not choices:
            with lock:
                deadlocks[0] += 1
            if cm.is_interval:
                choices = [(None, [(None, (1.0, 1.0), values)])]
            else:
                choices = [(None, [(1.0, None, values)])]
        row = []
        for action, branches in choices:
            bs = []
            for prob, interval, nv in branches:
                p = layout.pack(nv)
                with lock:
                    j = seen.get(p)
                    if j is None:
                        j = len(order)
                        if max_states is not None and j >= max_states:
                            budget_hit.append(True)
                            raise BudgetExceededError(len(order), max_states)
                        seen[p] = j
                        order.append(p)
                        local_new.append((j, nv))
                bs.append((prob, interval, j))
            row.append((action, bs))
        rows[s_idx] = (row, values)
        return local_new

    if workers <= 1:
        while frontier:
            s_idx, values = frontier.popleft()
            for item in process(s_idx, values):
                frontier.append(item)
    else:
        _parallel_bfs(frontier, process, workers)

    em = _assemble(cm, order, rows, deadlocks[0])
    if workers > 1:
        perm = np.asarray(
            sorted(range(len(order)), key=order.__getitem__), dtype=np.int64
        )
        em = _reindex(em, perm)

    stats = ExplorationStats(
        states=em.n,
        transitions=int(em.branch_col.shape[0]),
        wall_time=time.perf_counter() - t0,
        bytes_per_state=layout.nbytes,
        state_table_bytes=em.n * layout.nbytes,
        transition_bytes=int(em.branch_col.shape[0]) * 16,
        workers=workers,
        deadlocks_repaired=deadlocks[0],
    )
    return em, stats


def _parallel_bfs(frontier, process, workers):
    lock = threading.Lock()
    active = [0]
    error = []
    cond = threading.Condition(lock)

    def worker():
        while True:
            with cond:
                while not frontier and active[0] > 0 and not error:
                    cond.wait()
                if error or (not frontier and active[0] == 0):
                    cond.notify_all()
                    return
                item = frontier.popleft()
                active[0] += 1
            try:
                new_items = process(*item)
            except Exception as err:  # propagate the first failure
                with cond:
                    error.append(err)
                    active[0] -= 1
                    cond.notify_all()
                return
            with cond:
                frontier.extend(new_items)
                active[0] -= 1
                cond.notify_all()

    threads = [threading.Thread(target=worker) for _ in range(workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if error:
        raise error[0]


def _assemble(cm, order, rows, deadlocks):
    em = ExplicitModel()
    em.model_type = cm.model.model_type
    em.layout = cm.layout
    em.compiled = cm
    em.n = len(order)
    em.packed = order
    em.initial = 0
    em.deadlocks_repaired = deadlocks

    choice_ptr = [0]
    branch_ptr = [0]
    actions = []
    cols, probs, los, his, rates = [], [], [], [], []
    exit_rates = np.zeros(em.n) if cm.is_ctmc else None
    values_by_idx = {}
    for s in range(em.n):
        row, values = rows[s]
        values_by_idx[s] = values
        for action, bs in row:
            actions.append(action)
            if cm.is_ctmc:
                total = sum(b[0] for b in bs)
                exit_rates[s] = total
                for rate, _, j in bs:
                    cols.append(j)
                    rates.append(rate)
                    probs.append(rate / total if total > 0 else 0.0)
            elif cm.is_interval:
                for _, (lo, hi), j in bs:
                    cols.append(j)
                    los.append(lo)
                    his.append(hi)
                    probs.append(0.5 * (lo + hi))
            else:
                ssum = sum(b[0] for b in bs)
                if abs(ssum - 1.0) > PROB_SUM_TOL:
                    raise InvariantViolation(
                        f"choice probabilities sum to {ssum} at state {values}"
                    )
                for prob, _, j in bs:
                    cols.append(j)
                    probs.append(prob)
            branch_ptr.append(len(cols))
        choice_ptr.append(len(actions))

    em.choice_ptr = np.asarray(choice_ptr, dtype=np.int64)
    em.branch_ptr = np.asarray(branch_ptr, dtype=np.int64)
    em.choice_action = actions
    em.branch_col = np.asarray(cols, dtype=np.int64)
    em.branch_prob = np.asarray(probs, dtype=np.float64)
    if cm.is_ctmc:
        em.branch_rate = np.asarray(rates, dtype=np.float64)
        em.exit_rate = exit_rates
    if cm.is_interval:
        em.branch_lo = np.asarray(los, dtype=np.float64)
        em.branch_hi = np.asarray(his, dtype=np.float64)

    if cm.player_fns:
        em.player_names = [name for name, _ in cm.player_fns]
        em.owner = np.asarray(
            [cm.owner_of(values_by_idx[s]) for s in range(em.n)], dtype=np.int64
        )
    if cm.observation_fns:
        obs_ids = {}
        obs = np.zeros(em.n, dtype=np.int64)
        for s in range(em.n):
            key = cm.observation_of(values_by_idx[s])
            obs[s] = obs_ids.setdefault(key, len(obs_ids))
        em.observation = obs
        em.n_observations = len(obs_ids)

    for rname, (state_fn, edge_map) in cm.reward_fns.items():
        srew = np.zeros(em.n)
        crew = np.zeros(em.num_choices)
        for s in range(em.n):
            values = values_by_idx[s]
            if state_fn is not None:
                srew[s] = float(state_fn(values))
            for c in em.choices_of(s):
                action = em.choice_action[c]
                total = 0.0
                for key in (action, None):
                    for fn in edge_map.get(key, []):
                        total += float(fn(values))
                    if action is None:
                        break
                crew[c] = total
        em.state_rewards[rname] = srew
        em.choice_rewards[rname] = crew
    return em


def _reindex(em, perm):
    """Renumber states by `perm` (new order of old indices)."""
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    new = ExplicitModel()
    new.model_type = em.model_type
    new.layout = em.layout
    new.compiled = em.compiled
    new.n = em.n
    new.packed = [em.packed[i] for i in perm]
    new.initial = int(inv[em.initial])
    new.deadlocks_repaired = em.deadlocks_repaired

    choice_ptr = [0]
    branch_ptr = [0]
    actions = []
    cols, probs, rates, los, his = [], [], [], [], []
    choice_map = []  # old choice index per new choice
    for s_old in perm:
        for c in em.choices_of(int(s_old)):
            actions.append(em.choice_action[c])
            choice_map.append(c)
            for b in em.branches_of(c):
                cols.append(int(inv[em.branch_col[b]]))
                probs.append(em.branch_prob[b])
                if em.branch_rate is not None:
                    rates.append(em.branch_rate[b])
                if em.branch_lo is not None:
                    los.append(em.branch_lo[b])
                    his.append(em.branch_hi[b])
            branch_ptr.append(len(cols))
        choice_ptr.append(len(actions))
    new.choice_ptr = np.asarray(choice_ptr, dtype=np.int64)
    new.branch_ptr = np.asarray(branch_ptr, dtype=np.int64)
    new.choice_action = actions
    new.branch_col = np.asarray(cols, dtype=np.int64)
    new.branch_prob = np.asarray(probs, dtype=np.float64)
    if em.branch_rate is not None:
        new.branch_rate = np.asarray(rates, dtype=np.float64)
        new.exit_rate = em.exit_rate[perm]
    if em.branch_lo is not None:
        new.branch_lo = np.asarray(los, dtype=np.float64)
        new.branch_hi = np.asarray(his, dtype=np.float64)
    if em.owner is not None:
        new.owner = em.owner[perm]
        new.player_names = em.player_names
    if em.observation is not None:
        new.observation = em.observation[perm]
        new.n_observations = em.n_observations
    cmap = np.asarray(choice_map, dtype=np.int64)
    for rname in em.state_rewards:
        new.state_rewards[rname] = em.state_rewards[rname][perm]
        new.choice_rewards[rname] = em.choice_rewards[rname][cmap]
    for lname, bits in em.labels.items():
        new.labels[lname] = bits[perm]
    return new


def successors(model, state):
    """Composed successor distributions of one state; pure.

    Returns a list of (action, [(prob_or_interval, State)]).
    """
    cm = model if isinstance(model, CompiledModel) else CompiledModel(model)
    values = state.values if isinstance(state, State) else tuple(state)
    out = []
    choices = cm.choices(values)
    if not choices:
        w = (1.0, 1.0) if cm.is_interval else 1.0
        return [(None, [(w, State(values))])]
    for action, branches in choices:
        bs = []
        for prob, interval, nv in branches:
            bs.append((interval if interval is not None else prob, State(nv)))
        out.append((action, bs))
    return out


def sample_step(model, state, chooser, rng):
    """Sample one transition; deterministic given (rng state, chooser).

    Returns (action, next State, sojourn time). For CTMCs the sojourn is
    exponential with the exit rate and branches are drawn proportionally to
    rates; absorbing states return sojourn = inf.
    """
    cm = model if isinstance(model, CompiledModel) else CompiledModel(model)
    values = state.values if isinstance(state, State) else tuple(state)
    choices = cm.choices(values)
    if not choices:
        return (None, State(values), math.inf if cm.is_ctmc else 1.0)
    k = 0 if len(choices) == 1 else chooser(State(values), choices)
    action, branches = choices[k]
    if cm.is_ctmc:
        rates = [b[0] for b in branches]
        total = sum(rates)
        if total <= 0:
            return (action, State(values), math.inf)
        sojourn = rng.exponential(1.0 / total)
        u = rng.random() * total
        acc = 0.0
        for rate, _, nv in branches:
            acc += rate
            if u <= acc:
                return (action, State(nv), sojourn)
        return (action, State(branches[-1][2]), sojourn)
    u = rng.random()
    acc = 0.0
    for prob, _, nv in branches:
        acc += prob
        if u <= acc:
            return (action, State(nv), 1.0)
    return (action, State(branches[-1][2]), 1.0)


def label_states(em, named_exprs):
    """Attach one bit-set per named expression, evaluated per state."""
    cm = em.compiled
    for name, expr in named_exprs.items():
        fn = ex.compile_expr(expr, cm.var_index)
        bits = np.zeros(em.n, dtype=bool)
        for s in range(em.n):
            bits[s] = bool(fn(em.values_of(s)))
        em.labels[name] = bits
    return em
