"""Expression trees over model variables.

Expressions are immutable. Evaluation is pure: integer arithmetic is exact,
rational literals stay exact (``fractions.Fraction``) until they are
explicitly converted for numeric solving. Two evaluation paths exist: a
tree-walking interpreter (`evaluate`) used by the public API and a compiler
to Python bytecode (`compile_expr`) used by the hot exploration loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import ModelSyntaxError, ModelTypeError

BOOL = "bool"
INT = "int"
REAL = "real"

# canonical op -> accepted aliases (JANI unicode plus ASCII)
_ALIASES = {
    "and": ("∧", "and", "&", "&&"),
    "or": ("∨", "or", "|", "||"),
    "imp": ("⇒", "=>", "imp"),
    "not": ("¬", "!", "not"),
    "eq": ("=", "=="),
    "neq": ("≠", "!="),
    "lt": ("<",),
    "leq": ("≤", "<="),
    "gt": (">",),
    "geq": ("≥", ">="),
    "add": ("+",),
    "sub": ("-",),
    "mul": ("*", "·"),
    "div": ("/",),
    "mod": ("%",),
    "min": ("min",),
    "max": ("max",),
    "floor": ("floor",),
    "ceil": ("ceil",),
    "ite": ("ite",),
}
_CANON = {alias: op for op, aliases in _ALIASES.items() for alias in aliases}
_JANI_NAME = {op: aliases[0] for op, aliases in _ALIASES.items()}

_BOOL_BIN = {"and", "or", "imp"}
_CMP = {"eq", "neq", "lt", "leq", "gt", "geq"}
_ARITH = {"add", "sub", "mul", "div", "mod", "min", "max"}


@dataclass(frozen=True)
class Lit:
    value: object  # bool, int, or Fraction

    def __repr__(self):
        return f"Lit({self.value!r})"


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class App:
    op: str  # canonical name
    args: tuple

    def __init__(self, op, *args):
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "args", tuple(args))


def lit(value):
    """Wrap a Python value as a literal, normalising floats to Fractions."""
    if isinstance(value, bool):
        return Lit(value)
    if isinstance(value, int):
        return Lit(value)
    if isinstance(value, Fraction):
        return Lit(value)
    if isinstance(value, float):
        # exact decimal reading: 0.1 -> 1/10, not the binary float
        return Lit(Fraction(repr(value)))
    raise ModelTypeError(f"unsupported literal {value!r}")


def parse_jani_expr(node, path="expr"):
    """Parse a JANI JSON expression node into an expression tree."""
    if isinstance(node, bool):
        return Lit(node)
    if isinstance(node, int):
        return Lit(node)
    if isinstance(node, float):
        return lit(node)
    if isinstance(node, str):
        return Var(node)
    if isinstance(node, dict):
        if "constant" in node:  # JANI named math constants: reject
            raise ModelSyntaxError(f"unsupported constant {node['constant']}", path)
        op = node.get("op")
        if op is None:
            raise ModelSyntaxError("expression object without 'op'", path)
        canon = _CANON.get(op)
        if canon is None:
            raise ModelSyntaxError(f"unknown operator {op!r}", path)
        if canon == "ite":
            return App(
                "ite",
                parse_jani_expr(node["if"], path + ".if"),
                parse_jani_expr(node["then"], path + ".then"),
                parse_jani_expr(node["else"], path + ".else"),
            )
        if canon in ("not", "floor", "ceil"):
            return App(canon, parse_jani_expr(node["exp"], path + ".exp"))
        left = parse_jani_expr(node["left"], path + ".left")
        right = parse_jani_expr(node["right"], path + ".right")
        return App(canon, left, right)
    raise ModelSyntaxError(f"cannot parse expression {node!r}", path)


def to_jani(e):
    """Serialise an expression tree back to JANI JSON."""
    if isinstance(e, Lit):
        v = e.value
        if isinstance(v, Fraction):
            if v.denominator == 1:
                return int(v)
            return {"op": "/", "left": v.numerator, "right": v.denominator}
        return v
    if isinstance(e, Var):
        return e.name
    if e.op == "ite":
        return {
            "op": "ite",
            "if": to_jani(e.args[0]),
            "then": to_jani(e.args[1]),
            "else": to_jani(e.args[2]),
        }
    name = _JANI_NAME[e.op]
    if len(e.args) == 1:
        return {"op": name, "exp": to_jani(e.args[0])}
    return {"op": name, "left": to_jani(e.args[0]), "right": to_jani(e.args[1])}


def free_vars(e, acc=None):
    if acc is None:
        acc = set()
    if isinstance(e, Var):
        acc.add(e.name)
    elif isinstance(e, App):
        for a in e.args:
            free_vars(a, acc)
    return acc


def type_of(e, var_types):
    """Type-check and return one of BOOL/INT/REAL.

    `var_types` maps variable name to BOOL or INT (bounded ints). Unknown
    variables and ill-typed applications raise ModelTypeError.
    """
    if isinstance(e, Lit):
        if isinstance(e.value, bool):
            return BOOL
        if isinstance(e.value, int):
            return INT
        return REAL
    if isinstance(e, Var):
        t = var_types.get(e.name)
        if t is None:
            raise ModelTypeError(f"undeclared variable {e.name!r}")
        return t
    op = e.op
    if op == "ite":
        c = type_of(e.args[0], var_types)
        if c != BOOL:
            raise ModelTypeError("ite condition must be bool")
        t1 = type_of(e.args[1], var_types)
        t2 = type_of(e.args[2], var_types)
        if BOOL in (t1, t2) and t1 != t2:
            raise ModelTypeError("ite branches mix bool and numeric")
        return t1 if t1 == t2 else REAL
    if op == "not":
        if type_of(e.args[0], var_types) != BOOL:
            raise ModelTypeError("'not' needs a bool operand")
        return BOOL
    if op in ("floor", "ceil"):
        if type_of(e.args[0], var_types) == BOOL:
            raise ModelTypeError(f"'{op}' needs a numeric operand")
        return INT
    ts = [type_of(a, var_types) for a in e.args]
    if op in _BOOL_BIN:
        if ts != [BOOL, BOOL]:
            raise ModelTypeError(f"'{op}' needs bool operands")
        return BOOL
    if op in _CMP:
        if op in ("eq", "neq"):
            if (BOOL in ts) != (ts[0] == ts[1] == BOOL):
                raise ModelTypeError("equality mixes bool and numeric")
        elif BOOL in ts:
            raise ModelTypeError(f"'{op}' needs numeric operands")
        return BOOL
    if op in _ARITH:
        if BOOL in ts:
            raise ModelTypeError(f"'{op}' needs numeric operands")
        if op == "div":
            d = e.args[1]
            if isinstance(d, Lit) and d.value == 0:
                raise ModelTypeError("division by a constant zero")
            return REAL
        if op == "mod":
            if ts != [INT, INT]:
                raise ModelTypeError("'%' needs integer operands")
            return INT
        return REAL if REAL in ts else INT
    raise ModelTypeError(f"unknown operator {op!r}")


def evaluate(e, valuation):
    """Pure tree-walking evaluation under a name -> value valuation."""
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Var):
        try:
            return valuation[e.name]
        except KeyError:
            raise ModelTypeError(f"valuation missing variable {e.name!r}") from None
    op = e.op
    if op == "ite":
        return evaluate(e.args[1 if evaluate(e.args[0], valuation) else 2], valuation)
    if op == "and":
        return evaluate(e.args[0], valuation) and evaluate(e.args[1], valuation)
    if op == "or":
        return evaluate(e.args[0], valuation) or evaluate(e.args[1], valuation)
    if op == "imp":
        return (not evaluate(e.args[0], valuation)) or evaluate(e.args[1], valuation)
    if op == "not":
        return not evaluate(e.args[0], valuation)
    a = evaluate(e.args[0], valuation)
    if op == "floor":
        import math

        return math.floor(a)
    if op == "ceil":
        import math

        return math.ceil(a)
    b = evaluate(e.args[1], valuation)
    if op == "eq":
        return a == b
    if op == "neq":
        return a != b
    if op == "lt":
        return a < b
    if op == "leq":
        return a <= b
    if op == "gt":
        return a > b
    if op == "geq":
        return a >= b
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return Fraction(a) / Fraction(b)
    if op == "mod":
        return a % b
    if op == "min":
        return min(a, b)
    if op == "max":
        return max(a, b)
    raise ModelTypeError(f"unknown operator {op!r}")


_PY_OP = {
    "and": "and",
    "or": "or",
    "eq": "==",
    "neq": "!=",
    "lt": "<",
    "leq": "<=",
    "gt": ">",
    "geq": ">=",
    "add": "+",
    "sub": "-",
    "mul": "*",
    "mod": "%",
}


class CompiledExpr:
    """An expression compiled to Python bytecode over a state tuple."""

    __slots__ = ("_code", "_globals", "source")

    def __init__(self, source, literals):
        import math

        self.source = source
        self._code = compile(source, "<qcheck-expr>", "eval")
        self._globals = {
            "_L": literals,
            "F": Fraction,
            "_floor": math.floor,
            "_ceil": math.ceil,
            "__builtins__": {},
        }

    def __call__(self, state_tuple):
        return eval(self._code, self._globals, {"_v": state_tuple})


def compile_expr(e, var_index, exact=False):
    """Compile to a callable over a tuple of variable values.

    `var_index` maps variable name to position in the state tuple. With
    `exact=True`, division and non-integer literals produce Fractions;
    otherwise literals stay as floats for speed.
    """
    literals = []

    def emit(node):
        if isinstance(node, Lit):
            v = node.value
            if isinstance(v, bool):
                return "True" if v else "False"
            if isinstance(v, int):
                return repr(v)
            if exact or v.denominator == 1:
                literals.append(v)
            else:
                literals.append(float(v))
            return f"_L[{len(literals) - 1}]"
        if isinstance(node, Var):
            return f"_v[{var_index[node.name]}]"
        op = node.op
        if op == "ite":
            return (
                f"(({emit(node.args[1])}) if ({emit(node.args[0])}) "
                f"else ({emit(node.args[2])}))"
            )
        if op == "not":
            return f"(not ({emit(node.args[0])}))"
        if op == "imp":
            return f"((not ({emit(node.args[0])})) or ({emit(node.args[1])}))"
        if op in ("floor", "ceil"):
            return f"(_{op}({emit(node.args[0])}))"
        if op in ("min", "max"):
            a, b = emit(node.args[0]), emit(node.args[1])
            cmpop = "<" if op == "min" else ">"
            return f"(({a}) if ({a}) {cmpop} ({b}) else ({b}))"
        if op == "div":
            a, b = emit(node.args[0]), emit(node.args[1])
            if exact:
                return f"(F(({a})) / ({b}))"
            return f"(({a}) / ({b}))"
        a, b = emit(node.args[0]), emit(node.args[1])
        return f"(({a}) {_PY_OP[op]} ({b}))"

    src = emit(e)
    return CompiledExpr(src, tuple(literals))


def substitute(e, bindings):
    """Replace variables by expressions (used for constant folding)."""
    if isinstance(e, Var):
        return bindings.get(e.name, e)
    if isinstance(e, App):
        return App(e.op, *(substitute(a, bindings) for a in e.args))
    return e


def const_fold(e):
    """Evaluate constant subtrees; leaves variables untouched."""
    if isinstance(e, (Lit, Var)):
        return e
    args = [const_fold(a) for a in e.args]
    if all(isinstance(a, Lit) for a in args):
        val = evaluate(App(e.op, *args), {})
        if isinstance(val, float):  # floor/ceil of fraction stays exact
            val = Fraction(val)
        return Lit(val)
    return App(e.op, *args)


def structurally_equal(a, b):
    return a == b
