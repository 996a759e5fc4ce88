"""Arithmetic expressions for model coefficients.

Grammar (EBNF)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = ("-" | "+") unary | power ;
    power   = atom [ "^" unary ] ;
    atom    = number | name | name "(" expr { "," expr } ")" | "(" expr ")" ;

Variables are ``x1..xn``, ``y``, ``z1..zd``, ``u1..um``; the bare names
``x``, ``z`` and ``u`` are aliases of ``x1``, ``z1`` and ``u1``.  ``pi`` is
the only named constant.  Functions: sin cos exp tanh abs min max clamp
sqrt log.

Evaluation is vectorised over numpy arrays.  Division by zero and any
non-finite result raise :class:`EvaluationError`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np


class ExpressionError(ValueError):
    pass


class ParseError(ExpressionError):
    def __init__(self, message: str, text: str, pos: int):
        self.text = text
        self.pos = pos
        self.column = pos + 1
        super().__init__(f"{message} at column {self.column}: {text!r}")


class UnknownVariableError(ExpressionError):
    pass


class EvaluationError(ExpressionError):
    pass


FUNCTIONS = {
    "sin": (1, 1),
    "cos": (1, 1),
    "exp": (1, 1),
    "tanh": (1, 1),
    "abs": (1, 1),
    "sqrt": (1, 1),
    "log": (1, 1),
    "min": (2, None),
    "max": (2, None),
    "clamp": (3, 3),
}
CONSTANTS = {"pi": math.pi}
ALIASES = {"x": "x1", "z": "z1", "u": "u1"}
_VAR_RE = re.compile(r"^(x[1-9]\d*|y|z[1-9]\d*|u[1-9]\d*)$")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


# --- syntax tree -----------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def _fmt_num(v: float) -> str:
    s = repr(float(v))
    if s in ("inf", "nan"):
        raise ExpressionError(f"non-finite literal {v}")
    return s


def to_text(node) -> str:
    """Print a tree with the minimal parentheses that reproduce it exactly."""
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_text(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = to_text(node.arg)
        if _prec(node.arg) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    op = node.op
    left, right = to_text(node.left), to_text(node.right)
    if op == "^":
        if _prec(node.left) < _PREC["atom"]:
            left = f"({left})"
        if _prec(node.right) < _PREC["neg"]:
            right = f"({right})"
        return f"{left}^{right}"
    p = _PREC[op]
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {op} {right}"


# --- parser ----------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        stripped = text.rstrip()
        while pos < len(stripped):
            m = _TOKEN_RE.match(stripped, pos)
            if m is None or m.end() == pos:
                bad = pos + (len(stripped[pos:]) - len(stripped[pos:].lstrip()))
                raise ParseError(f"unexpected character {stripped[bad]!r}", text, bad)
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("end", "", len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            what = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {what}", self.text, pos)

    def parse(self):
        if not self.tokens:
            raise ParseError("empty expression", self.text, 0)
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", self.text, pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and val == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^", self.peek()[2]):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if val not in FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", self.text, pos)
                self.take()
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                lo, hi = FUNCTIONS[val]
                if len(args) < lo or (hi is not None and len(args) > hi):
                    raise ParseError(f"{val} takes {lo}{'' if hi == lo else '+'} arguments, got {len(args)}",
                                     self.text, pos)
                return Call(val, tuple(args))
            if val in FUNCTIONS:
                raise ParseError(f"function {val!r} needs a parenthesised argument list", self.text,
                                 self.peek()[2])
            if val in CONSTANTS:
                return Num(CONSTANTS[val])
            name = ALIASES.get(val, val)
            if not _VAR_RE.match(name):
                raise UnknownVariableError(f"unknown variable {val!r} at column {pos + 1}: {self.text!r}")
            return Var(name)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {what}", self.text, pos)


def _variables(node, out: set):
    if isinstance(node, Var):
        out.add(node.name)
    elif isinstance(node, Neg):
        _variables(node.arg, out)
    elif isinstance(node, BinOp):
        _variables(node.left, out)
        _variables(node.right, out)
    elif isinstance(node, Call):
        for a in node.args:
            _variables(a, out)
    return out


# --- evaluation ------------------------------------------------------------

def _div(a, b):
    if np.any(np.asarray(b) == 0.0):
        raise EvaluationError("division by zero")
    return a / b


def _sqrt(a):
    if np.any(np.asarray(a) < 0.0):
        raise EvaluationError("sqrt of a negative number")
    return np.sqrt(a)


def _log(a):
    if np.any(np.asarray(a) <= 0.0):
        raise EvaluationError("log of a non-positive number")
    return np.log(a)


def _min(*args):
    out = args[0]
    for a in args[1:]:
        out = np.minimum(out, a)
    return out


def _max(*args):
    out = args[0]
    for a in args[1:]:
        out = np.maximum(out, a)
    return out


def _clamp(a, lo, hi):
    return np.minimum(np.maximum(a, lo), hi)


_RUNTIME = {
    "_div": _div,
    "_pow": np.power,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "abs": np.abs,
    "sqrt": _sqrt,
    "log": _log,
    "min": _min,
    "max": _max,
    "clamp": _clamp,
}


def _codegen(node) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_codegen(node.arg)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_codegen(a) for a in node.args)})"
    a, b = _codegen(node.left), _codegen(node.right)
    if node.op == "/":
        return f"_div({a}, {b})"
    if node.op == "^":
        return f"_pow({a}, {b})"
    return f"({a} {node.op} {b})"


class Expression:
    """A parsed arithmetic expression.

    Instances are immutable; ``str(expr)`` prints the canonical form, which
    parses back to an identical tree.
    """

    def __init__(self, text: str, allowed: Iterable[str] | None = None):
        if not isinstance(text, str):
            text = _fmt_num(text) if isinstance(text, (int, float)) else str(text)
        self.source = text
        self.tree = _Parser(text).parse()
        self.variables = frozenset(_variables(self.tree, set()))
        if allowed is not None:
            allowed = frozenset(allowed)
            extra = sorted(self.variables - allowed)
            if extra:
                raise UnknownVariableError(
                    f"unknown variable(s) {', '.join(extra)} in {text!r}; allowed: {', '.join(sorted(allowed))}")
        args = ", ".join(sorted(self.variables))
        code = f"lambda {args}: {_codegen(self.tree)}" if args else f"lambda: {_codegen(self.tree)}"
        self._fn = eval(code, dict(_RUNTIME))  # noqa: S307 - generated from our own tree
        self._argnames = tuple(sorted(self.variables))

    def __str__(self) -> str:
        return to_text(self.tree)

    def __repr__(self) -> str:
        return f"Expression({str(self)!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Expression) and self.tree == other.tree

    def __hash__(self) -> int:
        return hash(self.tree)

    @property
    def uses_y(self) -> bool:
        return "y" in self.variables

    @property
    def uses_z(self) -> bool:
        return any(v.startswith("z") for v in self.variables)

    @property
    def uses_x(self) -> bool:
        return any(v.startswith("x") for v in self.variables)

    @property
    def is_constant(self) -> bool:
        return not self.variables

    def evaluate(self, env: Mapping[str, object]):
        try:
            args = [env[name] for name in self._argnames]
        except KeyError as exc:
            raise EvaluationError(f"no value bound for variable {exc.args[0]!r} in {str(self)!r}") from None
        with np.errstate(over="ignore", invalid="ignore"):
            out = self._fn(*args)
        out = np.asarray(out, dtype=float)
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"non-finite value of {str(self)!r}")
        return out

    def bind(self, x=None, y=None, z=None, u=None):
        """Evaluate with positional-role arguments.

        ``x`` has shape ``(n, ...)``, ``z`` shape ``(d, ...)``, ``u`` shape
        ``(m, ...)``; ``y`` is scalar-shaped.  The result broadcasts over the
        trailing axes.
        """
        env = {}
        for prefix, val in (("x", x), ("z", z), ("u", u)):
            if val is None:
                continue
            val = np.asarray(val, dtype=float)
            if val.ndim == 0:
                val = val.reshape(1)
            for k in range(val.shape[0]):
                env[f"{prefix}{k + 1}"] = val[k]
        if y is not None:
            env["y"] = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(*(np.shape(v) for v in env.values())) if env else ()
        return np.broadcast_to(self.evaluate(env), shape).astype(float, copy=False) if shape else self.evaluate(env)

    def __call__(self, x=None, y=None, z=None):
        return self.bind(x=x, y=y, z=z)


def parse(text: str, allowed: Iterable[str] | None = None) -> Expression:
    return Expression(text, allowed)


def variable_names(n: int = 0, d: int = 0, m: int = 0, y: bool = False) -> frozenset:
    names = {f"x{i + 1}" for i in range(n)} | {f"z{i + 1}" for i in range(d)} | {f"u{i + 1}" for i in range(m)}
    if y:
        names.add("y")
    return frozenset(names)
