"""Query text parsing.

Grammar (informal EBNF, see README for the full table):

    query     := prob | transient | reward | lra | steady | multi | pareto
               | game | rare
    prob      := "P" dirspec "=?" "[" "F" expr "]"
    transient := "P=?" "[" "F" "<=" number expr "]"
    reward    := "R" ["{" '"' name '"' "}"] ("max"|"min") "=?" "[" "F" expr "]"
    lra       := "LRA" ("max"|"min") "=?" "[" name "]"
    steady    := "S=?" "[" expr "]"
    multi     := "multi" "(" objective ("," objective)+ ")" [">=" point]
    pareto    := "pareto" "(" objective "," objective ")"
    game      := ("<<" names ">>" | "game" "<" names ">") prob-or-reward
    rare      := "rare" "P=?" "[" "F" ["<=" number] expr "]"
    dirspec   := "max" | "min" | "maxmin" | "maxmax" | "minmin" | "minmax"

`Pmaxmin`/`Pmaxmax`/... select robust interval semantics: the first
direction quantifies over schedulers, the second over the interval
uncertainty. Defaults: epsilon 1e-6, method "ii".
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

from . import expressions as ex
from .errors import QueryError

DEFAULT_EPSILON = 1e-6
DEFAULT_METHOD = "ii"


@dataclass
class Objective:
    kind: str  # "reach-prob" | "total-reward"
    direction: str  # "max" | "min"
    goal: object  # expression
    reward: str | None = None
    bound: float | None = None  # threshold for multi-achieve / numerical
    sense: str = ">="  # ">=" maximise-style, "<=" minimise-style


@dataclass
class Query:
    kind: str
    direction: str | None = None
    inner_direction: str | None = None  # robust queries
    goal: object | None = None
    time_bound: float | None = None
    reward: str | None = None
    epsilon: float = DEFAULT_EPSILON
    method: str = DEFAULT_METHOD
    objectives: list = field(default_factory=list)
    point: list | None = None
    coalition: list | None = None
    text: str = ""


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9.]*)"
    r"|(?P<str>\"[^\"]*\")"
    r"|(?P<op><<|>>|<=|>=|!=|=>|&&|\|\||[-+*/%(),!&|<>=\[\]{}?])"
    r")"
)


def _tokenize(text):
    tokens, pos = [], 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise QueryError(f"cannot tokenise query at position {pos}: {text[pos:]!r}")
        pos = m.end()
        for kind in ("num", "name", "str", "op"):
            val = m.group(kind)
            if val is not None:
                tokens.append((kind, val))
                break
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, k=0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else (None, None)

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value):
        kind, val = self.next()
        if val != value:
            raise QueryError(f"expected {value!r}, got {val!r} in {self.text!r}")
        return val

    def at_end(self):
        return self.i >= len(self.toks)

    # expression grammar: ternary over bool/arith with usual precedence
    def expr(self):
        return self._or()

    def _or(self):
        e = self._and()
        while self.peek()[1] in ("|", "||"):
            self.next()
            e = ex.App("or", e, self._and())
        return e

    def _and(self):
        e = self._not()
        while self.peek()[1] in ("&", "&&"):
            self.next()
            e = ex.App("and", e, self._not())
        return e

    def _not(self):
        if self.peek()[1] == "!":
            self.next()
            return ex.App("not", self._not())
        return self._cmp()

    _CMP_OPS = {"=": "eq", "==": "eq", "!=": "neq", "<": "lt", "<=": "leq", ">": "gt", ">=": "geq"}

    def _cmp(self):
        e = self._sum()
        if self.peek()[1] in self._CMP_OPS:
            op = self._CMP_OPS[self.next()[1]]
            return ex.App(op, e, self._sum())
        return e

    def _sum(self):
        e = self._term()
        while self.peek()[1] in ("+", "-"):
            op = "add" if self.next()[1] == "+" else "sub"
            e = ex.App(op, e, self._term())
        return e

    def _term(self):
        e = self._atom()
        while self.peek()[1] in ("*", "/", "%"):
            op = {"*": "mul", "/": "div", "%": "mod"}[self.next()[1]]
            e = ex.App(op, e, self._atom())
        return e

    def _atom(self):
        kind, val = self.next()
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if val == "-":
            return ex.App("sub", ex.Lit(0), self._atom())
        if kind == "num":
            return ex.Lit(int(val)) if re.fullmatch(r"\d+", val) else ex.lit(float(val))
        if kind == "name":
            if val == "true":
                return ex.Lit(True)
            if val == "false":
                return ex.Lit(False)
            return ex.Var(val)
        raise QueryError(f"unexpected token {val!r} in expression ({self.text!r})")

    def number(self):
        kind, val = self.next()
        neg = False
        if val == "-":
            neg = True
            kind, val = self.next()
        if kind != "num":
            raise QueryError(f"expected a number, got {val!r}")
        x = float(val)
        return -x if neg else x


def parse_expression(text):
    """Parse a bare expression in the query expression grammar."""
    p = _Parser(text)
    e = p.expr()
    if not p.at_end():
        raise QueryError(f"trailing input in expression {text!r}")
    return e


_DIRSPECS = {
    "max": ("max", None),
    "min": ("min", None),
    "maxmin": ("max", "min"),
    "maxmax": ("max", "max"),
    "minmin": ("min", "min"),
    "minmax": ("min", "max"),
}


def parse_query(text):
    """Parse query text into a Query with defaults resolved."""
    p = _Parser(text)
    kind, val = p.peek()

    if val == "rare":
        p.next()
        q = _parse_prob(p, rare=True)
        q.kind = "rare-estimate"
        q.text = text
        _finish(p, text)
        return q

    coalition = None
    if val == "<<" or val == "game":
        if val == "game":
            p.next()
            p.expect("<")
            coalition = _names(p, ">")
        else:
            p.next()
            coalition = _names(p, ">>")

    kind, val = p.peek()
    if val == "multi":
        q = _parse_multi(p)
    elif val == "pareto":
        q = _parse_pareto(p)
    elif val == "S":
        p.next()
        p.expect("=")
        p.expect("?")
        p.expect("[")
        goal = p.expr()
        p.expect("]")
        q = Query(kind="lra-reward", direction="max", goal=goal)
        q.kind = "steady-state"
    elif val == "LRA" or val == "LRAmax" or val == "LRAmin":
        q = _parse_lra(p)
    elif val == "R" or (val and val.startswith("R") and val[1:] in ("max", "min")):
        q = _parse_reward(p)
    elif val and val[0] == "P":
        q = _parse_prob(p)
    else:
        raise QueryError(f"cannot parse query {text!r}")

    if coalition is not None:
        if q.kind not in ("reach-prob", "total-reward"):
            raise QueryError("game queries support reachability and total reward only")
        q.kind = "game-reach" if q.kind == "reach-prob" else "game-reward"
        q.coalition = coalition
    q.text = text
    _finish(p, text)
    return q


def _finish(p, text):
    if not p.at_end():
        raise QueryError(f"trailing input in query {text!r}")


def _names(p, closer):
    names = []
    while True:
        kind, val = p.next()
        if kind != "name":
            raise QueryError(f"expected a player name, got {val!r}")
        names.append(val)
        kind, val = p.next()
        if val == closer:
            return names
        if val != ",":
            raise QueryError(f"expected ',' or {closer!r}, got {val!r}")


def _parse_prob(p, rare=False):
    kind, val = p.next()
    if not val.startswith("P"):
        raise QueryError(f"expected a P query, got {val!r}")
    spec = val[1:]
    if spec == "":
        direction, inner = None, None
    elif spec in _DIRSPECS:
        direction, inner = _DIRSPECS[spec]
    else:
        raise QueryError(f"unknown direction spec {spec!r}")
    p.expect("=")
    p.expect("?")
    p.expect("[")
    p.expect("F")
    time_bound = None
    if p.peek()[1] == "<=":
        p.next()
        time_bound = p.number()
    goal = p.expr()
    p.expect("]")
    if rare:
        return Query(
            kind="rare-estimate",
            direction=direction or "max",
            goal=goal,
            time_bound=time_bound,
        )
    if time_bound is not None:
        if direction is not None:
            raise QueryError("time-bounded queries take no direction (ctmc only)")
        return Query(kind="transient-prob", goal=goal, time_bound=time_bound)
    if direction is None:
        # directionless P=? is valid on deterministic models; the solver
        # rejects it if the explored model has real nondeterminism
        return Query(kind="reach-prob", direction=None, goal=goal)
    if inner is not None:
        return Query(
            kind="robust-reach", direction=direction, inner_direction=inner, goal=goal
        )
    return Query(kind="reach-prob", direction=direction, goal=goal)


def _parse_reward(p):
    kind, val = p.next()
    spec = val[1:]
    reward = None
    if spec == "":
        if p.peek()[1] == "{":
            p.next()
            kind2, val2 = p.next()
            if kind2 != "str":
                raise QueryError("reward name must be a quoted string")
            reward = val2.strip('"')
            p.expect("}")
        kind2, val2 = p.next()
        if val2 not in ("max", "min"):
            raise QueryError("R query needs max or min")
        spec = val2
    if spec not in ("max", "min"):
        raise QueryError(f"unknown R direction {spec!r}")
    p.expect("=")
    p.expect("?")
    p.expect("[")
    p.expect("F")
    goal = p.expr()
    p.expect("]")
    return Query(kind="total-reward", direction=spec, goal=goal, reward=reward)


def _parse_lra(p):
    kind, val = p.next()
    spec = val[3:]
    if spec == "":
        kind2, val2 = p.next()
        if val2 not in ("max", "min"):
            raise QueryError("LRA query needs max or min")
        spec = val2
    p.expect("=")
    p.expect("?")
    p.expect("[")
    kind2, val2 = p.next()
    if kind2 == "str":
        val2 = val2.strip('"')
    elif kind2 != "name":
        raise QueryError("LRA query needs a reward name")
    p.expect("]")
    return Query(kind="lra-reward", direction=spec, reward=val2)


def _parse_objective(p):
    kind, val = p.next()
    if val in ("Pmax", "Pmin", "Rmax", "Rmin"):
        is_prob = val[0] == "P"
        direction = val[1:]
        reward = None
    elif val == "R":
        is_prob = False
        p.expect("{")
        kind2, val2 = p.next()
        reward = val2.strip('"')
        p.expect("}")
        direction = p.next()[1]
        if direction not in ("max", "min"):
            raise QueryError("objective needs max or min")
    else:
        raise QueryError(f"cannot parse objective at {val!r}")
    p.expect("[")
    p.expect("F")
    goal = p.expr()
    p.expect("]")
    obj = Objective(
        kind="reach-prob" if is_prob else "total-reward",
        direction=direction,
        goal=goal,
        reward=reward,
        sense=">=" if direction == "max" else "<=",
    )
    if p.peek()[1] in (">=", "<="):
        sense = p.next()[1]
        obj.bound = p.number()
        obj.sense = sense
    return obj


def _parse_multi(p):
    p.expect("multi")
    p.expect("(")
    objectives = [_parse_objective(p)]
    while p.peek()[1] == ",":
        p.next()
        objectives.append(_parse_objective(p))
    p.expect(")")
    point = None
    if p.peek()[1] == ">=":
        p.next()
        p.expect("(")
        point = [p.number()]
        while p.peek()[1] == ",":
            p.next()
            point.append(p.number())
        p.expect(")")
    if len(objectives) < 2:
        raise QueryError("multi queries need at least 2 objectives")
    if point is not None:
        if len(point) != len(objectives):
            raise QueryError("threshold point arity does not match objectives")
        return Query(kind="multi-achieve", objectives=objectives, point=point)
    unbounded = [o for o in objectives if o.bound is None]
    if len(unbounded) == 1 and len(objectives) > 1:
        return Query(kind="multi-numerical", objectives=objectives)
    bounded = [o for o in objectives if o.bound is not None]
    if len(bounded) == len(objectives):
        return Query(
            kind="multi-achieve",
            objectives=objectives,
            point=[o.bound for o in objectives],
        )
    raise QueryError("multi query must bound all objectives or all but one")


def _parse_pareto(p):
    p.expect("pareto")
    p.expect("(")
    objectives = [_parse_objective(p)]
    while p.peek()[1] == ",":
        p.next()
        objectives.append(_parse_objective(p))
    p.expect(")")
    if len(objectives) != 2:
        raise QueryError("pareto queries support exactly 2 objectives")
    return Query(kind="multi-pareto", objectives=objectives)
