"""Parsing and validation of the supported JANI subset.

Supported: bool and bounded-int variables (global or local), multiple
automata composed by shared-action synchronisation, constants, the
`derived-operators` expression sugar, and the custom extensions
`x-interval-weights` (interval branch probabilities), `x-players` (turn-based
game partition), `x-observations` (POMDP observation expressions), and
`x-rewards` (named reward structures).

Rejected with an `unsupported-feature` diagnostic: `functions`, arrays,
clocks and continuous variables, real-valued state variables, transient
variables, non-trivial initial-state restrictions, and input-enabled /
broadcast composition.

A parsed `Model` is immutable in practice (nothing mutates it after
`parse_jani` returns) and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

from . import expressions as ex
from .errors import (
    InvariantViolation,
    ModelSyntaxError,
    ModelTypeError,
    UnsupportedFeatureError,
)

MODEL_TYPES = {
    "dtmc",
    "ctmc",
    "mdp",
    "tsg",
    "pomdp",
    "interval-dtmc",
    "interval-mdp",
}
_TYPE_ALIASES = {"sg": "tsg", "smg": "tsg"}

DISCRETE_TYPES = {"dtmc", "mdp", "tsg", "pomdp", "interval-dtmc", "interval-mdp"}
INTERVAL_TYPES = {"interval-dtmc", "interval-mdp"}


@dataclass(frozen=True)
class VarDecl:
    name: str
    type: str  # ex.BOOL or ex.INT
    lo: int | None
    hi: int | None
    init: object
    owner: str | None = None  # automaton name for local variables


@dataclass(frozen=True)
class Branch:
    weight: object  # expression, or (lo_expr, hi_expr) for interval branches
    assignments: tuple  # of (variable name, expression)

    @property
    def is_interval(self):
        return isinstance(self.weight, tuple)


@dataclass(frozen=True)
class Edge:
    location: int
    action: str | None
    guard: object  # expression
    branches: tuple
    destinations: tuple = ()  # target location index per branch


@dataclass(frozen=True)
class Automaton:
    name: str
    locations: tuple
    initial_location: int
    edges: tuple


@dataclass(frozen=True)
class RewardStructure:
    name: str
    state_reward: object | None  # expression or None
    edge_rewards: tuple = ()  # of (action name or None, expression)


@dataclass
class Model:
    name: str
    model_type: str
    variables: list  # VarDecl, globals first then locals in automaton order
    automata: list
    constants: dict  # name -> exact value
    rewards: dict = field(default_factory=dict)  # name -> RewardStructure
    players: list = field(default_factory=list)  # (player name, state expr)
    observations: list = field(default_factory=list)  # expressions (pomdp)
    syncs: list | None = None  # list of (vector dict automaton->action, result)
    source: dict | None = None  # raw document, kept for provenance

    @property
    def is_ctmc(self):
        return self.model_type == "ctmc"

    @property
    def is_interval(self):
        return self.model_type in INTERVAL_TYPES

    def var_types(self):
        return {v.name: v.type for v in self.variables}

    def to_jani(self):
        return _serialize(self)


def parse_jani(text, constants=None):
    """Parse and validate a JANI document (JSON text or dict)."""
    if isinstance(text, (bytes, str)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise ModelSyntaxError(err.msg, f"line {err.lineno}, col {err.colno}")
    else:
        doc = text
    if not isinstance(doc, dict):
        raise ModelSyntaxError("top-level JANI value must be an object")

    for feat in doc.get("features", []):
        if feat not in ("derived-operators",):
            raise UnsupportedFeatureError(f"jani feature '{feat}'", "features")

    raw_type = doc.get("type")
    model_type = _TYPE_ALIASES.get(raw_type, raw_type)
    if model_type not in MODEL_TYPES:
        raise UnsupportedFeatureError(f"model type '{raw_type}'", "type")

    const_env = dict(constants or {})
    consts = {}
    for c in doc.get("constants", []):
        cname = c["name"]
        if "value" in c:
            val = ex.evaluate(
                ex.substitute(ex.parse_jani_expr(c["value"]), _const_exprs(consts)), {}
            )
        elif cname in const_env:
            val = const_env[cname]
            if isinstance(val, float):
                val = Fraction(repr(val))
        else:
            raise ModelSyntaxError(f"constant '{cname}' has no value", "constants")
        consts[cname] = val

    variables = []
    for v in doc.get("variables", []):
        variables.append(_parse_variable(v, consts, owner=None))

    automata = []
    for a in doc.get("automata", []):
        aname = a["name"]
        for v in a.get("variables", []):
            variables.append(_parse_variable(v, consts, owner=aname))
        automata.append(_parse_automaton(a, consts, model_type))
    if not automata:
        raise ModelSyntaxError("model declares no automata", "automata")

    syncs = _parse_system(doc.get("system"), automata)

    rewards = {}
    for r in doc.get("x-rewards", []):
        state = r.get("state-reward")
        state_expr = _folded(state, consts) if state is not None else None
        edge_rs = tuple(
            (er.get("action"), _folded(er["value"], consts))
            for er in r.get("edge-rewards", [])
        )
        rewards[r["name"]] = RewardStructure(r["name"], state_expr, edge_rs)

    players = [(p["name"], _folded(p["states"], consts)) for p in doc.get("x-players", [])]
    observations = [_folded(o, consts) for o in doc.get("x-observations", [])]

    model = Model(
        name=doc.get("name", "unnamed"),
        model_type=model_type,
        variables=variables,
        automata=automata,
        constants=consts,
        rewards=rewards,
        players=players,
        observations=observations,
        syncs=syncs,
        source=doc,
    )
    _validate(model)
    return model


def parse_jani_file(path, constants=None):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_jani(fh.read(), constants=constants)


def _const_exprs(consts):
    return {k: ex.Lit(v) for k, v in consts.items()}


def _folded(node, consts):
    e = ex.parse_jani_expr(node)
    return ex.const_fold(ex.substitute(e, _const_exprs(consts)))


def _parse_variable(v, consts, owner):
    name = v["name"]
    where = f"variable '{name}'"
    if v.get("transient"):
        raise UnsupportedFeatureError("transient variables", where)
    t = v.get("type")
    if t == "bool":
        init = v.get("initial-value", False)
        if not isinstance(init, bool):
            init = ex.evaluate(_folded(init, consts), {})
        return VarDecl(name, ex.BOOL, None, None, bool(init), owner)
    if isinstance(t, dict) and t.get("kind") == "bounded" and t.get("base") == "int":
        lo = _const_int(t["lower-bound"], consts, where)
        hi = _const_int(t["upper-bound"], consts, where)
        init_node = v.get("initial-value", lo)
        init = ex.evaluate(_folded(init_node, consts), {})
        init = int(init)
        if not lo <= init <= hi:
            raise InvariantViolation(
                f"{where}: initial value {init} outside [{lo},{hi}]"
            )
        return VarDecl(name, ex.INT, lo, hi, init, owner)
    if t in ("int", "real", "clock", "continuous") or (
        isinstance(t, dict) and t.get("kind") == "array"
    ):
        raise UnsupportedFeatureError(f"variable type {t!r}", where)
    raise ModelSyntaxError(f"cannot parse type {t!r}", where)


def _const_int(node, consts, where):
    val = ex.evaluate(_folded(node, consts), {})
    if isinstance(val, Fraction):
        if val.denominator != 1:
            raise ModelTypeError(f"{where}: bound {val} is not an integer")
        val = int(val)
    return int(val)


def _parse_automaton(a, consts, model_type):
    aname = a["name"]
    loc_names = tuple(loc["name"] for loc in a.get("locations", []))
    for loc in a.get("locations", []):
        if "transient-values" in loc:
            raise UnsupportedFeatureError("transient-values", f"automaton '{aname}'")
    loc_index = {n: i for i, n in enumerate(loc_names)}
    initial = a.get("initial-locations", [loc_names[0]] if loc_names else [])
    if len(initial) != 1:
        raise UnsupportedFeatureError(
            "multiple initial locations", f"automaton '{aname}'"
        )
    edges = []
    for ei, e in enumerate(a.get("edges", [])):
        where = f"automaton '{aname}' edge {ei}"
        guard_node = e.get("guard", {}).get("exp", True) if "guard" in e else True
        guard = _folded(guard_node, consts)
        action = e.get("action")
        rate = None
        if "rate" in e:
            rate = _folded(e["rate"]["exp"], consts)
        branches = []
        dests = []
        for d in e.get("destinations", []):
            prob_node = d.get("probability", {}).get("exp", 1) if "probability" in d else 1
            weight = _parse_weight(prob_node, consts, where)
            if rate is not None:
                if isinstance(weight, tuple):
                    raise UnsupportedFeatureError(
                        "interval probabilities on rate edges", where
                    )
                weight = ex.const_fold(ex.App("mul", rate, weight))
            assigns = tuple(
                (asg["ref"], _folded(asg["value"], consts))
                for asg in d.get("assignments", [])
            )
            for asg in d.get("assignments", []):
                if not isinstance(asg["ref"], str):
                    raise UnsupportedFeatureError("indexed assignment targets", where)
                if asg.get("index", 0) != 0:
                    raise UnsupportedFeatureError("assignment indices", where)
            branches.append(Branch(weight, assigns))
            dests.append(loc_index[d["location"]])
        edges.append(
            Edge(
                location=loc_index[e["location"]],
                action=action,
                guard=guard,
                branches=tuple(branches),
                destinations=tuple(dests),
            )
        )
    return Automaton(aname, loc_names, loc_index[initial[0]], tuple(edges))


def _parse_weight(node, consts, where):
    if isinstance(node, dict) and ("lower" in node or "upper" in node):
        # x-interval-weights extension: {"lower": l, "upper": u}
        lo = _folded(node["lower"], consts)
        hi = _folded(node["upper"], consts)
        if not isinstance(lo, ex.Lit) or not isinstance(hi, ex.Lit):
            raise UnsupportedFeatureError("non-constant interval bounds", where)
        return (lo, hi)
    return _folded(node, consts)


def _parse_system(system, automata):
    names = [a.name for a in automata]
    if system is None:
        return None  # default: synchronise on shared action names
    syncs = []
    elements = [el["automaton"] for el in system.get("elements", [])]
    if sorted(elements) != sorted(names):
        raise UnsupportedFeatureError(
            "system composition over a subset of automata", "system"
        )
    for sv in system.get("syncs", []):
        vec = sv.get("synchronise", [])
        if len(vec) != len(elements):
            raise ModelSyntaxError("sync vector arity mismatch", "system.syncs")
        mapping = {
            elements[i]: vec[i] for i in range(len(vec)) if vec[i] is not None
        }
        syncs.append((mapping, sv.get("result")))
    return syncs


def _validate(model):
    var_types = model.var_types()
    seen = set()
    for v in model.variables:
        if v.name in seen:
            raise InvariantViolation(f"duplicate variable '{v.name}'")
        seen.add(v.name)

    def check(expr, where, want=None):
        t = ex.type_of(expr, var_types)
        if want is not None and t != want and not (want == ex.REAL and t == ex.INT):
            raise ModelTypeError(f"{where}: expected {want}, got {t}")

    discrete = model.model_type in DISCRETE_TYPES
    for a in model.automata:
        for ei, e in enumerate(a.edges):
            where = f"automaton '{a.name}' edge {ei}"
            check(e.guard, f"{where} guard", ex.BOOL)
            total = Fraction(0)
            lo_sum, hi_sum = Fraction(0), Fraction(0)
            all_const = True
            has_interval = False
            for b in e.branches:
                if b.is_interval:
                    has_interval = True
                    lo, hi = b.weight[0].value, b.weight[1].value
                    if not 0 <= lo <= hi <= 1:
                        raise InvariantViolation(
                            f"{where}: interval [{lo},{hi}] violates 0<=lo<=hi<=1"
                        )
                    lo_sum += lo
                    hi_sum += hi
                else:
                    check(b.weight, f"{where} weight", ex.REAL)
                    if isinstance(b.weight, ex.Lit):
                        w = Fraction(b.weight.value)
                        if model.is_ctmc:
                            if w <= 0:
                                raise InvariantViolation(
                                    f"{where}: rate {w} is not positive"
                                )
                        total += w
                    else:
                        all_const = False
                for name, val in b.assignments:
                    if name not in var_types:
                        raise ModelTypeError(
                            f"{where}: assignment to undeclared variable '{name}'"
                        )
                    check(val, f"{where} assignment to '{name}'", var_types[name])
            if has_interval:
                if model.model_type not in INTERVAL_TYPES:
                    raise InvariantViolation(
                        f"{where}: interval weights in a non-interval model"
                    )
                if any(not b.is_interval for b in e.branches):
                    raise UnsupportedFeatureError(
                        "mixed point and interval weights on one edge", where
                    )
                if not (lo_sum <= 1 <= hi_sum):
                    raise InvariantViolation(
                        f"{where}: interval sums violate sum(lo)<=1<=sum(hi) "
                        f"(got {lo_sum}, {hi_sum})"
                    )
            elif discrete and all_const and total != 1:
                raise InvariantViolation(
                    f"{where}: branch weights sum != 1 (got {total})"
                )

    if model.model_type == "pomdp" and not model.observations:
        raise InvariantViolation("pomdp model without x-observations")
    if model.model_type == "tsg" and not model.players:
        raise InvariantViolation("tsg model without x-players")
    for pname, pexpr in model.players:
        t = ex.type_of(pexpr, var_types)
        if t != ex.BOOL:
            raise ModelTypeError(f"player '{pname}' state expression is not bool")
    for o in model.observations:
        ex.type_of(o, var_types)
    for r in model.rewards.values():
        if r.state_reward is not None:
            t = ex.type_of(r.state_reward, var_types)
            if t == ex.BOOL:
                raise ModelTypeError(f"reward '{r.name}' state reward is bool")
        for _, val in r.edge_rewards:
            ex.type_of(val, var_types)


def _serialize(model):
    """Re-serialise a Model into a JANI document (round-trip support)."""
    doc = {
        "jani-version": 1,
        "name": model.name,
        "type": model.model_type,
        "variables": [],
        "automata": [],
    }
    by_owner = {}
    for v in model.variables:
        by_owner.setdefault(v.owner, []).append(v)
    doc["variables"] = [_ser_var(v) for v in by_owner.get(None, [])]
    for a in model.automata:
        adoc = {
            "name": a.name,
            "locations": [{"name": n} for n in a.locations],
            "initial-locations": [a.locations[a.initial_location]],
            "edges": [],
        }
        if a.name in by_owner:
            adoc["variables"] = [_ser_var(v) for v in by_owner[a.name]]
        for e in a.edges:
            edoc = {
                "location": a.locations[e.location],
                "guard": {"exp": ex.to_jani(e.guard)},
                "destinations": [],
            }
            if e.action is not None:
                edoc["action"] = e.action
            for b, dest in zip(e.branches, e.destinations):
                if b.is_interval:
                    prob = {
                        "lower": ex.to_jani(b.weight[0]),
                        "upper": ex.to_jani(b.weight[1]),
                    }
                else:
                    prob = ex.to_jani(b.weight)
                edoc["destinations"].append(
                    {
                        "location": a.locations[dest],
                        "probability": {"exp": prob},
                        "assignments": [
                            {"ref": name, "value": ex.to_jani(val)}
                            for name, val in b.assignments
                        ],
                    }
                )
            adoc["edges"].append(edoc)
        doc["automata"].append(adoc)
    if model.syncs is not None:
        doc["system"] = {
            "elements": [{"automaton": a.name} for a in model.automata],
            "syncs": [
                {
                    "synchronise": [m.get(a.name) for a in model.automata],
                    "result": res,
                }
                for m, res in model.syncs
            ],
        }
    if model.rewards:
        doc["x-rewards"] = []
        for r in model.rewards.values():
            rdoc = {"name": r.name}
            if r.state_reward is not None:
                rdoc["state-reward"] = ex.to_jani(r.state_reward)
            if r.edge_rewards:
                rdoc["edge-rewards"] = [
                    {"action": act, "value": ex.to_jani(val)}
                    for act, val in r.edge_rewards
                ]
            doc["x-rewards"].append(rdoc)
    if model.players:
        doc["x-players"] = [
            {"name": n, "states": ex.to_jani(e)} for n, e in model.players
        ]
    if model.observations:
        doc["x-observations"] = [ex.to_jani(o) for o in model.observations]
    return doc


def _ser_var(v):
    if v.type == ex.BOOL:
        return {"name": v.name, "type": "bool", "initial-value": v.init}
    return {
        "name": v.name,
        "type": {"kind": "bounded", "base": "int", "lower-bound": v.lo, "upper-bound": v.hi},
        "initial-value": v.init,
    }
