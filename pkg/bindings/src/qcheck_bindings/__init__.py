"""Scripting bindings for the qcheck exploration engine.

The surface is deliberately small: load a JANI model, explore it
exhaustively, inspect individual successors, sample single steps, and
evaluate state labels. Everything crossing the boundary is plain data --
state records are dictionaries of variable name to value, statistics are
dictionaries of scalars. Solvers stay on the engine's command line.

Calls on one handle are serialized; separate handles are independent.
"""

from __future__ import annotations

import threading

import numpy as np

import qcheck
from qcheck import build_state_space, label_states, parse_jani_file, successors
from qcheck import sample_step as _engine_sample_step
from qcheck.explore import CompiledModel, State
from qcheck.queries import parse_expression

__version__ = qcheck.__version__

__all__ = ["BoundModel", "load", "__version__"]


def load(path, constants=None):
    """Load a JANI model file into a :class:`BoundModel` handle.

    Parse and validation problems raise the engine's own exceptions with
    their diagnostic text (malformed JSON includes the position, an
    unsupported feature names the feature).
    """
    model = parse_jani_file(path, constants=constants or {})
    return BoundModel(model)


class BoundModel:
    """Handle to a loaded model; all methods serialize on the handle."""

    def __init__(self, model):
        self._model = model
        self._compiled = CompiledModel(model)
        self._lock = threading.Lock()
        self._explored = None  # cached (ExplicitModel, ExplorationStats)
        self._closed = False

    # -- lifecycle ---------------------------------------------------------

    def close(self):
        """Invalidate the handle; further calls raise ValueError."""
        with self._lock:
            self._closed = True
            self._model = None
            self._compiled = None
            self._explored = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _check_open(self):
        if self._closed:
            raise ValueError("operation on a closed BoundModel")

    # -- state record conversion ------------------------------------------

    def _to_values(self, state):
        layout = self._compiled.layout
        names = [sv.name for sv in layout.vars]
        missing = [n for n in names if n not in state]
        extra = [k for k in state if k not in names]
        if missing or extra:
            raise ValueError(
                f"state record does not match the model's variables; "
                f"missing {missing}, unexpected {extra}"
            )
        return tuple(state[n] for n in names)

    def _to_record(self, values):
        layout = self._compiled.layout
        return {sv.name: v for sv, v in zip(layout.vars, values)}

    # -- operations --------------------------------------------------------

    def initial_state(self):
        """The initial variable valuation as a plain dictionary."""
        with self._lock:
            self._check_open()
            return self._to_record(self._compiled.initial_state().values)

    def explore(self, workers=1, max_states=None):
        """Exhaustively explore the state space; returns a statistics record.

        The record carries states, transitions, wall_time, bytes_per_state,
        workers and deadlocks_repaired; repeated calls reuse the first
        exploration unless the worker count differs.
        """
        with self._lock:
            self._check_open()
            if self._explored is None or self._explored[1].workers != workers:
                self._explored = build_state_space(
                    self._model, workers=workers, max_states=max_states
                )
            stats = self._explored[1]
            return {
                "states": stats.states,
                "transitions": stats.transitions,
                "wall_time": stats.wall_time,
                "bytes_per_state": stats.bytes_per_state,
                "workers": stats.workers,
                "deadlocks_repaired": stats.deadlocks_repaired,
            }

    def successors(self, state):
        """Successor distributions of one state record.

        Returns a list of choices: {"action": name-or-None, "branches":
        [{"probability": p, "state": record}]}; interval-weighted models
        report {"lower": lo, "upper": hi} instead of "probability".
        """
        with self._lock:
            self._check_open()
            out = []
            for action, branches in successors(self._compiled,
                                               self._to_values(state)):
                row = []
                for weight, succ in branches:
                    entry = {"state": self._to_record(succ.values)}
                    if isinstance(weight, tuple):
                        entry["lower"], entry["upper"] = (
                            float(weight[0]), float(weight[1]))
                    else:
                        entry["probability"] = float(weight)
                    row.append(entry)
                out.append({"action": action, "branches": row})
            return out

    def sample_step(self, state, seed):
        """Sample one transition; deterministic for a given (state, seed).

        Returns (action, next state record, sojourn time). Nondeterministic
        choices are resolved uniformly at random from the same seed.
        """
        with self._lock:
            self._check_open()
            rng = np.random.default_rng(seed)

            def chooser(_state, choices):
                return int(rng.integers(len(choices)))

            action, nxt, dt = _engine_sample_step(
                self._compiled, State(self._to_values(state)), chooser, rng
            )
            return action, self._to_record(nxt.values), dt

    def labels(self, exprs):
        """Evaluate boolean expressions over the explored state space.

        `exprs` maps label names to expression strings ("d=6 & s=7" style);
        the result maps each name to the sorted list of state indices where
        the expression holds. Indices refer to the exploration order of
        :meth:`explore` (which is run on demand).
        """
        with self._lock:
            self._check_open()
            if self._explored is None:
                self._explored = build_state_space(self._model)
            em = self._explored[0]
            parsed = {name: parse_expression(text)
                      for name, text in exprs.items()}
            label_states(em, parsed)
            return {
                name: [int(s) for s in np.flatnonzero(em.labels[name])]
                for name in parsed
            }
