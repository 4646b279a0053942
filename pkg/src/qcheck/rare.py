"""Statistical estimation of (rare) reachability probabilities: crude
Monte Carlo and importance splitting (RESTART and fixed effort) with a
graph-distance importance function and pilot-run threshold selection.

Replications draw from counter-based Philox streams keyed by (seed,
replication index), so results are bit-reproducible regardless of worker
scheduling.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .bellman import _backward_reach, _graph_views
from .errors import QueryError, SolverError

DEFAULT_CONF = 0.95
MAX_STEPS = 10_000_000


@dataclass
class Estimate:
    p_hat: float
    conf: float
    delta: float  # CI half-width: reported as p_hat +/- delta
    replications: int
    wall_time: float
    flags: list = field(default_factory=list)
    lower: float = 0.0
    upper: float = 1.0


@dataclass
class ImportanceFunction:
    values: np.ndarray  # per-state non-negative integer importance
    max_importance: int  # attained exactly on goal states


@dataclass
class ThresholdScheme:
    levels: list  # strictly increasing importance levels
    factors: list  # per-level splitting factor (restart), each >= 2
    effort: int = 64  # per-level effort for fixed-effort runs


def _rng(seed, replication):
    return np.random.Generator(np.random.Philox(key=[seed, replication]))


def _make_chooser(em, scheduler):
    """Per-state choice selection; nondeterminism needs an explicit
    scheduler (the statistical theory assumes a fully stochastic model)."""
    counts = np.diff(em.choice_ptr)
    if scheduler is None:
        if (counts > 1).any():
            warnings.warn(
                "model has nondeterminism and no scheduler was given; "
                "simulating the UNIFORM-RANDOM scheduler — estimates bound "
                "neither the maximal nor the minimal probability"
            )

            def chooser(s, rng):
                return em.choice_ptr[s] + rng.integers(counts[s])

            return chooser

        def chooser(s, rng):
            return em.choice_ptr[s]

        return chooser
    if callable(scheduler):
        return scheduler
    picks = np.asarray(scheduler, dtype=np.int64)

    def chooser(s, rng):
        return em.choice_ptr[s] + picks[s]

    return chooser


def _sample_branch(em, c, rng):
    a, b = em.branch_ptr[c], em.branch_ptr[c + 1]
    u = rng.random()
    acc = 0.0
    for i in range(a, b):
        acc += em.branch_prob[i]
        if u < acc:
            return int(em.branch_col[i])
    return int(em.branch_col[b - 1])


def _simulate(em, goal, dead, chooser, rng, time_bound):
    """One trajectory; returns True on a (timely) goal hit.

    `dead` marks states from which the goal is graph-unreachable, ending
    the run early. Time is continuous (exponential sojourns) for CTMCs
    and the step count otherwise.
    """
    s = em.initial
    t = 0.0
    for _ in range(MAX_STEPS):
        if goal[s]:
            return True
        if dead[s]:
            return False
        if time_bound is not None:
            if em.is_ctmc:
                rate = float(em.exit_rate[s])
                if rate <= 0:
                    return False
                t += rng.exponential(1.0 / rate)
            else:
                t += 1.0
            if t > time_bound:
                return False
        s = _sample_branch(em, chooser(s, rng), rng)
    raise SolverError("simulation exceeded the step safety cap")


def _binomial_ci(k, n, conf):
    """Two-sided CI on a Bernoulli parameter: normal approximation for
    comfortable hit counts, Clopper-Pearson otherwise."""
    p = k / n
    alpha = 1.0 - conf
    flags = []
    if k == 0:
        lo, hi = 0.0, 1.0 - alpha ** (1.0 / n)
        flags.append("no hits")
    elif k >= 30 and (n - k >= 30 or k == n):
        z = stats.norm.ppf(1 - alpha / 2)
        half = z * math.sqrt(p * (1 - p) / n)
        lo, hi = max(0.0, p - half), min(1.0, p + half)
    elif k == n:
        lo, hi = alpha ** (1.0 / n), 1.0
    else:
        lo = stats.beta.ppf(alpha / 2, k, n - k + 1)
        hi = stats.beta.isf(alpha / 2, k + 1, n - k)
    return p, lo, hi, flags


def estimate_crude(
    em,
    goal,
    runs=None,
    seconds=None,
    conf=DEFAULT_CONF,
    time_bound=None,
    seed=0,
    scheduler=None,
):
    """Crude Monte Carlo estimate of P(F goal) (optionally time-bounded)."""
    if runs is None and seconds is None:
        raise QueryError("crude estimation needs a run count or time budget")
    goal = np.asarray(goal, dtype=bool)
    dead = ~_backward_reach(em, goal)
    chooser = _make_chooser(em, scheduler)
    start = time.monotonic()
    k = n = 0
    while True:
        if runs is not None and n >= runs:
            break
        if seconds is not None and time.monotonic() - start > seconds and n > 0:
            break
        k += _simulate(em, goal, dead, chooser, _rng(seed, n), time_bound)
        n += 1
    p, lo, hi, flags = _binomial_ci(k, n, conf)
    delta = max(p - lo, hi - p)
    return Estimate(p, conf, delta, n, time.monotonic() - start, flags, lo, hi)


def derive_importance(em, goal):
    """Importance = D - (backward BFS distance to goal), D the largest
    finite distance; goal states get the unique maximum D."""
    goal = np.asarray(goal, dtype=bool)
    if not goal.any():
        raise QueryError("importance derivation needs a non-empty goal")
    choice_state, branch_choice = _graph_views(em)
    src = choice_state[branch_choice]
    # predecessor adjacency for BFS from the goal
    order = np.argsort(em.branch_col, kind="stable")
    ptr = np.zeros(em.n + 1, dtype=np.int64)
    np.add.at(ptr, em.branch_col + 1, 1)
    ptr = np.cumsum(ptr)
    pred = src[order]
    dist = np.full(em.n, -1, dtype=np.int64)
    frontier = list(np.flatnonzero(goal))
    for s in frontier:
        dist[s] = 0
    while frontier:
        nxt = []
        for t in frontier:
            for j in range(ptr[t], ptr[t + 1]):
                u = int(pred[j])
                if dist[u] < 0:
                    dist[u] = dist[t] + 1
                    nxt.append(u)
        frontier = nxt
    if dist[em.initial] < 0:
        raise SolverError("RES inapplicable: goal unreachable")
    d_max = int(dist.max())
    imp = np.where(dist >= 0, d_max - dist, 0).astype(np.int64)
    if (dist < 0).any():
        warnings.warn(
            f"{int((dist < 0).sum())} states cannot reach the goal; "
            "their importance defaults to 0"
        )
    return ImportanceFunction(imp, d_max)


def _pilot_maxima(em, goal, f, chooser, runs, seed, time_bound):
    goal = np.asarray(goal, dtype=bool)
    dead = ~_backward_reach(em, goal)
    maxima = []
    for rep in range(runs):
        rng = _rng(seed ^ 0x5B5B, rep)
        s = em.initial
        t = 0.0
        best = int(f.values[s])
        for _ in range(MAX_STEPS):
            if goal[s] or dead[s]:
                break
            if time_bound is not None:
                if em.is_ctmc:
                    rate = float(em.exit_rate[s])
                    if rate <= 0:
                        break
                    t += rng.exponential(1.0 / rate)
                else:
                    t += 1.0
                if t > time_bound:
                    break
            s = _sample_branch(em, chooser(s, rng), rng)
            best = max(best, int(f.values[s]))
        maxima.append(best)
    return maxima


def select_thresholds(
    f,
    em,
    goal,
    method="expected-success",
    pilot_runs=1000,
    seed=0,
    scheduler=None,
    time_bound=None,
):
    """Pick threshold levels and splitting factors from pilot runs.

    expected-success: every importance level becomes a threshold whose
    factor is round(1 / up-crossing probability), clamped to [2, 16].
    sequential-mc: a level becomes a threshold each time the surviving
    trajectory fraction drops to 1/3 of the previous threshold's.
    """
    if f.max_importance < 1:
        return ThresholdScheme([f.max_importance], [2])
    chooser = _make_chooser(em, scheduler)
    maxima = _pilot_maxima(em, goal, f, chooser, pilot_runs, seed, time_bound)
    base = int(f.values[em.initial])
    reach = np.array(
        [sum(1 for m in maxima if m >= lvl) for lvl in range(f.max_importance + 1)]
    )
    if reach[min(base + 1, f.max_importance)] == 0:
        warnings.warn(
            "pilot runs never crossed a level; falling back to unit "
            "threshold spacing with factor 2"
        )
        levels = list(range(base + 1, f.max_importance + 1))
        return ThresholdScheme(levels, [2] * len(levels))
    levels, factors = [], []
    if method == "expected-success":
        for lvl in range(base + 1, f.max_importance + 1):
            denom = reach[lvl - 1]
            p = reach[lvl] / denom if denom > 0 else 0.0
            factor = 2 if p <= 0 else int(np.clip(round(1.0 / p), 2, 16))
            levels.append(lvl)
            factors.append(factor)
    elif method == "sequential-mc":
        last = base
        while last < f.max_importance:
            denom = reach[last]
            lvl = last + 1
            while lvl < f.max_importance and denom > 0 and reach[lvl] / denom > 1.0 / 3.0:
                lvl += 1
            p = reach[lvl] / denom if denom > 0 else 0.0
            factor = 2 if p <= 0 else int(np.clip(round(1.0 / p), 2, 16))
            levels.append(lvl)
            factors.append(factor)
            last = lvl
    else:
        raise QueryError(f"unknown threshold method {method!r}")
    return ThresholdScheme(levels, factors)


def estimate_splitting(
    em,
    goal,
    f,
    scheme,
    run_type="restart",
    runs=None,
    seconds=None,
    conf=DEFAULT_CONF,
    time_bound=None,
    seed=0,
    scheduler=None,
    audit=False,
):
    """Importance splitting estimate of P(F goal).

    restart: trajectories split into factor-1 offspring on upward
    threshold crossings, weights divided by the factor, offspring killed
    on falling below their creation threshold; the estimator is the
    weighted goal-hit mass per root run. fixed-effort: per-level
    conditional crossing probabilities with `scheme.effort` trajectories
    each, multiplied; CI by the delta method on the log estimate.
    """
    goal = np.asarray(goal, dtype=bool)
    if run_type == "restart":
        return _restart(
            em, goal, f, scheme, runs, seconds, conf, time_bound, seed,
            scheduler, audit,
        )
    if run_type == "fixed-effort":
        return _fixed_effort(
            em, goal, f, scheme, runs, seconds, conf, time_bound, seed, scheduler
        )
    raise QueryError(f"unknown run type {run_type!r}")


def _restart(em, goal, f, scheme, runs, seconds, conf, time_bound, seed,
             scheduler, audit):
    if runs is None and seconds is None:
        raise QueryError("restart estimation needs a run count or time budget")
    dead = ~_backward_reach(em, goal)
    chooser = _make_chooser(em, scheduler)
    levels = np.asarray(scheme.levels)
    factors = list(scheme.factors)
    imp = f.values

    def region(s):
        # number of thresholds at or below the state's importance
        return int(np.searchsorted(levels, imp[s], side="right"))

    # weight is a function of the current region only (every upcrossing
    # splits and divides it, every downcrossing restores it), normalized
    # to 1 in the root's starting region
    r0 = region(em.initial)
    w_of = np.ones(len(levels) + 1)
    for j, k in enumerate(factors):
        w_of[j + 1] = w_of[j] / k
    w_of /= w_of[r0]
    start = time.monotonic()
    values = []
    while True:
        n = len(values)
        if runs is not None and n >= runs:
            break
        if seconds is not None and time.monotonic() - start > seconds and n > 0:
            break
        rng = _rng(seed, n)
        hit_mass = 0.0
        # stack of (state, time, creation level index or -1, split level)
        stack = [(em.initial, 0.0, -1, r0)]
        while stack:
            s, t, birth, r = stack.pop()
            while True:
                ri = region(s)
                if birth >= 0 and imp[s] < levels[birth]:
                    break  # fell below the creation threshold: killed
                # split once per threshold newly crossed upward; offspring
                # cascade their own remaining splits when popped
                while r < ri:
                    for _ in range(factors[r] - 1):
                        stack.append((s, t, r, r + 1))
                    r += 1
                r = ri  # downcrossings re-arm future splits
                if goal[s]:
                    hit_mass += w_of[ri]
                    if audit:
                        assert ri == len(levels)
                    break
                if dead[s]:
                    break
                if time_bound is not None:
                    if em.is_ctmc:
                        rate = float(em.exit_rate[s])
                        if rate <= 0:
                            break
                        t += rng.exponential(1.0 / rate)
                    else:
                        t += 1.0
                    if t > time_bound:
                        break
                s = _sample_branch(em, chooser(s, rng), rng)
        values.append(hit_mass)
    values = np.asarray(values)
    p = float(values.mean())
    n = len(values)
    if p == 0.0:
        alpha = 1.0 - conf
        hi = 1.0 - alpha ** (1.0 / n)
        return Estimate(0.0, conf, hi, n, time.monotonic() - start,
                        ["no hits"], 0.0, hi)
    se = float(values.std(ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    z = stats.norm.ppf(1 - (1 - conf) / 2)
    delta = z * se
    return Estimate(
        p, conf, delta, n, time.monotonic() - start, [],
        max(0.0, p - delta), min(1.0, p + delta),
    )


def _fixed_effort(em, goal, f, scheme, runs, seconds, conf, time_bound, seed,
                  scheduler):
    """One fixed-effort pass per replication; replications are averaged
    and the CI comes from the delta method on the per-level fractions."""
    dead = ~_backward_reach(em, goal)
    chooser = _make_chooser(em, scheduler)
    effort = max(int(scheme.effort), 8)
    levels = list(scheme.levels)
    imp = f.values
    start = time.monotonic()
    if runs is None and seconds is None:
        runs = 1
    estimates, variances = [], []
    rep = 0
    while True:
        if runs is not None and rep >= runs:
            break
        if seconds is not None and time.monotonic() - start > seconds and rep > 0:
            break
        rng = _rng(seed, rep)
        rep += 1
        entry = [(em.initial, 0.0)]
        p_hat = 1.0
        logvar = 0.0
        ok = True
        for li, lvl in enumerate(levels):
            crossed = []
            hits = 0
            for i in range(effort):
                s, t = entry[int(rng.integers(len(entry)))]
                while True:
                    if imp[s] >= lvl:
                        hits += 1
                        crossed.append((s, t))
                        break
                    if goal[s] or dead[s]:
                        break
                    if time_bound is not None:
                        if em.is_ctmc:
                            rate = float(em.exit_rate[s])
                            if rate <= 0:
                                break
                            t += rng.exponential(1.0 / rate)
                        else:
                            t += 1.0
                        if t > time_bound:
                            break
                    s = _sample_branch(em, chooser(s, rng), rng)
            if hits == 0:
                ok = False
                break
            pl = hits / effort
            p_hat *= pl
            if pl < 1.0:
                logvar += (1.0 - pl) / (effort * pl)
            entry = crossed
        if not ok:
            estimates.append(0.0)
            variances.append(0.0)
            continue
        # final level = goal importance: crossing there means a goal state
        estimates.append(p_hat)
        variances.append(p_hat * p_hat * logvar)
    n = len(estimates)
    p = float(np.mean(estimates))
    wall = time.monotonic() - start
    if p == 0.0:
        alpha = 1.0 - conf
        hi = 1.0 - alpha ** (1.0 / max(n, 1))
        return Estimate(0.0, conf, hi, n, wall, ["no hits"], 0.0, hi)
    if n > 1:
        var = float(np.var(estimates, ddof=1)) / n
    else:
        var = variances[0]
    z = stats.norm.ppf(1 - (1 - conf) / 2)
    delta = z * math.sqrt(var)
    return Estimate(p, conf, delta, n, wall, [],
                    max(0.0, p - delta), min(1.0, p + delta))
