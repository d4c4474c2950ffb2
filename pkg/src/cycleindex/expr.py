"""Scalar expression language for right-hand sides.

Expressions are parsed into an immutable tree.  Two evaluation routes
exist: a tree walk (``evaluate`` / ``evaluate_dual``) used as the
reference, and ``compile_function`` which emits vectorized numpy code
with forward-mode tangents for the hot loops of the integrators.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Const", "Var", "Unary", "Binary", "Call", "ExprAst",
    "ExprError", "ExprSyntaxError", "UnboundVariableError", "ExprDomainError",
    "parse", "evaluate", "evaluate_dual", "to_string", "free_variables",
    "substitute", "uses_nonsmooth", "compile_function", "FUNCTIONS",
]


class ExprError(Exception):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnboundVariableError(ExprError):
    pass


class ExprDomainError(ExprError):
    pass


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "ExprAst"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "ExprAst"
    right: "ExprAst"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


ExprAst = Union[Const, Var, Unary, Binary, Call]

# name -> arity
FUNCTIONS = {
    "sin": 1, "cos": 1, "tan": 1, "exp": 1, "ln": 1, "sqrt": 1,
    "abs": 1, "sign": 1, "pos": 1, "neg": 1, "max": 2, "min": 2,
}
_NONSMOOTH = {"abs", "sign", "pos", "neg", "max", "min"}
_CONSTANTS = {"pi": math.pi}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.take()
        if val != value or kind != "op":
            raise ExprSyntaxError(f"expected {value!r}, got {val or 'end of input'!r}", off)

    def parse(self) -> ExprAst:
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", off)
        return node

    def expr(self) -> ExprAst:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> ExprAst:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> ExprAst:
        kind, val, _ = self.peek()
        if kind == "op" and val in ("-", "+"):
            self.take()
            arg = self.unary()
            return Unary("-", arg) if val == "-" else arg
        return self.power()

    def power(self) -> ExprAst:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            # right associative; exponent may carry its own sign
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> ExprAst:
        kind, val, off = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "id":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if val not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {val!r}", off)
                self.take()
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[val]:
                    raise ExprSyntaxError(
                        f"{val} takes {FUNCTIONS[val]} argument(s), got {len(args)}", off)
                return Call(val, tuple(args))
            if val in _CONSTANTS:
                return Const(_CONSTANTS[val])
            return Var(val)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExprSyntaxError(f"unexpected token {val or 'end of input'!r}", off)


def parse(text: str) -> ExprAst:
    """Parse ``text`` into an expression tree.

    Precedence from tightest: ``^`` (right-assoc), unary minus, ``* /``,
    ``+ -``.  Unknown identifiers are kept as variables and only rejected
    when evaluated.
    """
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(text).parse()


def free_variables(ast: ExprAst) -> set[str]:
    if isinstance(ast, Var):
        return {ast.name}
    if isinstance(ast, Const):
        return set()
    if isinstance(ast, Unary):
        return free_variables(ast.arg)
    if isinstance(ast, Binary):
        return free_variables(ast.left) | free_variables(ast.right)
    out: set[str] = set()
    for a in ast.args:
        out |= free_variables(a)
    return out


def uses_nonsmooth(ast: ExprAst, wrt: Iterable[str] | None = None) -> bool:
    """True if a kinked primitive is applied to something depending on ``wrt``."""
    wrt = None if wrt is None else set(wrt)
    if isinstance(ast, (Const, Var)):
        return False
    if isinstance(ast, Unary):
        return uses_nonsmooth(ast.arg, wrt)
    if isinstance(ast, Binary):
        return uses_nonsmooth(ast.left, wrt) or uses_nonsmooth(ast.right, wrt)
    if ast.name in _NONSMOOTH:
        deps = set()
        for a in ast.args:
            deps |= free_variables(a)
        if wrt is None or deps & wrt:
            return True
    return any(uses_nonsmooth(a, wrt) for a in ast.args)


def substitute(ast: ExprAst, values: Mapping[str, float]) -> ExprAst:
    """Replace variables named in ``values`` by constants."""
    if isinstance(ast, Var):
        return Const(float(values[ast.name])) if ast.name in values else ast
    if isinstance(ast, Const):
        return ast
    if isinstance(ast, Unary):
        return Unary(ast.op, substitute(ast.arg, values))
    if isinstance(ast, Binary):
        return Binary(ast.op, substitute(ast.left, values), substitute(ast.right, values))
    return Call(ast.name, tuple(substitute(a, values) for a in ast.args))


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_string(ast: ExprAst) -> str:
    """Print an expression so that ``parse(to_string(a)) == a``."""
    return _show(ast)[0]


def _show(ast: ExprAst) -> tuple[str, int]:
    if isinstance(ast, Const):
        v = ast.value
        if v < 0 or math.isinf(v) or math.isnan(v):
            # negative literals only arise from substitution
            return f"({v!r})", 5
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v)), 5
        return repr(v), 5
    if isinstance(ast, Var):
        return ast.name, 5
    if isinstance(ast, Call):
        return f"{ast.name}({', '.join(to_string(a) for a in ast.args)})", 5
    if isinstance(ast, Unary):
        s, p = _show(ast.arg)
        if p < _PREC["neg"]:
            s = f"({s})"
        return f"-{s}", _PREC["neg"]
    prec = _PREC[ast.op]
    ls, lp = _show(ast.left)
    rs, rp = _show(ast.right)
    if ast.op == "^":
        if lp <= prec:
            ls = f"({ls})"
        if rp < prec:
            rs = f"({rs})"
    else:
        if lp < prec:
            ls = f"({ls})"
        if rp <= prec:
            rs = f"({rs})"
    return f"{ls} {ast.op} {rs}" if prec == 1 else f"{ls}{ast.op}{rs}", prec


# ---------------------------------------------------------------- tree walk

def _lookup(env: Mapping[str, float], name: str) -> float:
    try:
        return float(env[name])
    except KeyError:
        raise UnboundVariableError(f"unbound variable {name!r}") from None


def _pow(a: float, b: float) -> float:
    if a < 0 and b != int(b):
        raise ExprDomainError(f"negative base {a} with non-integer exponent {b}")
    if a == 0 and b < 0:
        raise ExprDomainError("zero to a negative power")
    return a ** b


def _apply(name: str, args: Sequence[float]) -> float:
    a = args[0]
    if name == "ln":
        if a <= 0:
            raise ExprDomainError(f"ln of non-positive value {a}")
        return math.log(a)
    if name == "sqrt":
        if a < 0:
            raise ExprDomainError(f"sqrt of negative value {a}")
        return math.sqrt(a)
    if name == "exp":
        try:
            return math.exp(a)
        except OverflowError:
            raise ExprDomainError(f"exp overflow at {a}") from None
    if name == "sin":
        return math.sin(a)
    if name == "cos":
        return math.cos(a)
    if name == "tan":
        return math.tan(a)
    if name == "abs":
        return abs(a)
    if name == "sign":
        return float((a > 0) - (a < 0))
    if name == "pos":
        return max(a, 0.0)
    if name == "neg":
        return max(-a, 0.0)
    if name == "max":
        return max(a, args[1])
    if name == "min":
        return min(a, args[1])
    raise ExprError(f"unknown function {name!r}")


def evaluate(ast: ExprAst, env: Mapping[str, float]) -> float:
    """Evaluate in double precision; domain violations raise instead of NaN."""
    if isinstance(ast, Const):
        return ast.value
    if isinstance(ast, Var):
        return _lookup(env, ast.name)
    if isinstance(ast, Unary):
        return -evaluate(ast.arg, env)
    if isinstance(ast, Binary):
        a = evaluate(ast.left, env)
        b = evaluate(ast.right, env)
        if ast.op == "+":
            return a + b
        if ast.op == "-":
            return a - b
        if ast.op == "*":
            return a * b
        if ast.op == "/":
            if b == 0:
                raise ExprDomainError("division by zero")
            return a / b
        return _pow(a, b)
    return _apply(ast.name, [evaluate(x, env) for x in ast.args])


def evaluate_dual(ast: ExprAst, env: Mapping[str, float],
                  tangent: Mapping[str, float]) -> tuple[float, float]:
    """Value and directional derivative along ``tangent``.

    Variables missing from ``tangent`` have zero seed.  At kinks of
    abs/pos/neg/max/min the right-hand branch is used.
    """
    if isinstance(ast, Const):
        return ast.value, 0.0
    if isinstance(ast, Var):
        return _lookup(env, ast.name), float(tangent.get(ast.name, 0.0))
    if isinstance(ast, Unary):
        v, d = evaluate_dual(ast.arg, env, tangent)
        return -v, -d
    if isinstance(ast, Binary):
        a, da = evaluate_dual(ast.left, env, tangent)
        b, db = evaluate_dual(ast.right, env, tangent)
        op = ast.op
        if op == "+":
            return a + b, da + db
        if op == "-":
            return a - b, da - db
        if op == "*":
            return a * b, da * b + a * db
        if op == "/":
            if b == 0:
                raise ExprDomainError("division by zero")
            return a / b, (da * b - a * db) / (b * b)
        v = _pow(a, b)
        if isinstance(ast.right, Const) or db == 0.0:
            d = b * _pow(a, b - 1) * da if da != 0.0 else 0.0
        else:
            if a <= 0:
                raise ExprDomainError("derivative of a^b w.r.t. b needs a > 0")
            d = v * (db * math.log(a) + b * da / a)
        return v, d
    vals = [evaluate_dual(x, env, tangent) for x in ast.args]
    a, da = vals[0]
    name = ast.name
    v = _apply(name, [x[0] for x in vals])
    if name == "sin":
        return v, math.cos(a) * da
    if name == "cos":
        return v, -math.sin(a) * da
    if name == "tan":
        return v, da / math.cos(a) ** 2
    if name == "exp":
        return v, v * da
    if name == "ln":
        return v, da / a
    if name == "sqrt":
        if v == 0:
            raise ExprDomainError("derivative of sqrt at 0")
        return v, da / (2 * v)
    if name == "abs":
        return v, da if a >= 0 else -da
    if name == "sign":
        return v, 0.0
    if name == "pos":
        return v, da if a >= 0 else 0.0
    if name == "neg":
        return v, 0.0 if a >= 0 else -da
    b, db = vals[1]
    if name == "max":
        return v, da if a >= b else db
    return v, db if a >= b else da  # min


# ---------------------------------------------------------------- codegen

_NP_UNARY = {
    "sin": "_np.sin", "cos": "_np.cos", "tan": "_np.tan", "exp": "_np.exp",
    "ln": "_np.log", "sqrt": "_np.sqrt", "abs": "_np.abs", "sign": "_np.sign",
}


class _CodeGen:
    """Emit straight-line numpy code: one value and k tangents per node."""

    def __init__(self, wrt: Sequence[str]):
        self.wrt = list(wrt)
        self.lines: list[str] = []
        self.n = 0
        self.cache: dict = {}

    def tmp(self) -> str:
        self.n += 1
        return f"_v{self.n}"

    def emit(self, expr: str) -> str:
        name = self.tmp()
        self.lines.append(f"{name} = {expr}")
        return name

    def node(self, ast: ExprAst) -> tuple[str, list[str | None]]:
        # tangent entry None means identically zero
        key = ast
        if key in self.cache:
            return self.cache[key]
        out = self._node(ast)
        self.cache[key] = out
        return out

    def _node(self, ast):
        k = len(self.wrt)
        if isinstance(ast, Const):
            return repr(ast.value), [None] * k
        if isinstance(ast, Var):
            tans = ["1.0" if ast.name == w else None for w in self.wrt]
            return ast.name, tans
        if isinstance(ast, Unary):
            v, d = self.node(ast.arg)
            return self.emit(f"-{v}"), [None if x is None else self.emit(f"-{x}") for x in d]
        if isinstance(ast, Binary):
            return self._binary(ast)
        return self._call(ast)

    def _binary(self, ast: Binary):
        a, da = self.node(ast.left)
        b, db = self.node(ast.right)
        op = ast.op
        if op in "+-":
            v = self.emit(f"{a} {op} {b}")
            tans = []
            for x, y in zip(da, db):
                if x is None and y is None:
                    tans.append(None)
                elif y is None:
                    tans.append(x)
                elif x is None:
                    tans.append(y if op == "+" else self.emit(f"-{y}"))
                else:
                    tans.append(self.emit(f"{x} {op} {y}"))
            return v, tans
        if op == "*":
            v = self.emit(f"{a} * {b}")
            tans = []
            for x, y in zip(da, db):
                terms = []
                if x is not None:
                    terms.append(f"{x} * {b}")
                if y is not None:
                    terms.append(f"{a} * {y}")
                tans.append(self.emit(" + ".join(terms)) if terms else None)
            return v, tans
        if op == "/":
            v = self.emit(f"{a} / {b}")
            tans = []
            for x, y in zip(da, db):
                if x is None and y is None:
                    tans.append(None)
                elif y is None:
                    tans.append(self.emit(f"{x} / {b}"))
                elif x is None:
                    tans.append(self.emit(f"-{v} * {y} / {b}"))
                else:
                    tans.append(self.emit(f"({x} - {v} * {y}) / {b}"))
            return v, tans
        # power
        if isinstance(ast.right, Const):
            p = ast.right.value
            if p == int(p) and 0 <= p <= 4:
                ip = int(p)
                v = "1.0" if ip == 0 else self.emit(" * ".join([a] * ip))
                if ip == 0:
                    return v, [None] * len(da)
                lower = "1.0" if ip == 1 else (a if ip == 2 else self.emit(" * ".join([a] * (ip - 1))))
                tans = [None if x is None else self.emit(f"{float(ip)!r} * {lower} * {x}") for x in da]
                return v, tans
            v = self.emit(f"_np.power({a}, {p!r})")
            lower = self.emit(f"_np.power({a}, {p - 1.0!r})") if any(x is not None for x in da) else None
            tans = [None if x is None else self.emit(f"{p!r} * {lower} * {x}") for x in da]
            return v, tans
        v = self.emit(f"_np.power({a}, {b})")
        need = any(x is not None for x in da) or any(y is not None for y in db)
        lg = self.emit(f"_np.log({a})") if any(y is not None for y in db) else None
        tans = []
        for x, y in zip(da, db):
            if not need or (x is None and y is None):
                tans.append(None)
                continue
            terms = []
            if y is not None:
                terms.append(f"{y} * {lg}")
            if x is not None:
                terms.append(f"{b} * {x} / {a}")
            tans.append(self.emit(f"{v} * ({' + '.join(terms)})"))
        return v, tans

    def _call(self, ast: Call):
        name = ast.name
        a, da = self.node(ast.args[0])
        if name in ("max", "min"):
            b, db = self.node(ast.args[1])
            fn = "_np.maximum" if name == "max" else "_np.minimum"
            v = self.emit(f"{fn}({a}, {b})")
            first = self.emit(f"({a} >= {b})") if name == "max" else self.emit(f"({a} < {b})")
            tans = []
            for x, y in zip(da, db):
                if x is None and y is None:
                    tans.append(None)
                else:
                    tans.append(self.emit(f"_np.where({first}, {x or 0.0}, {y or 0.0})"))
            return v, tans
        if name == "pos":
            v = self.emit(f"_np.maximum({a}, 0.0)")
            mask = self.emit(f"({a} >= 0)")
            return v, [None if x is None else self.emit(f"_np.where({mask}, {x}, 0.0)") for x in da]
        if name == "neg":
            v = self.emit(f"_np.maximum(-{a}, 0.0)")
            mask = self.emit(f"({a} < 0)")
            return v, [None if x is None else self.emit(f"_np.where({mask}, -{x}, 0.0)") for x in da]
        v = self.emit(f"{_NP_UNARY[name]}({a})")
        if all(x is None for x in da) or name == "sign":
            return v, [None] * len(da)
        if name == "sin":
            dd = self.emit(f"_np.cos({a})")
        elif name == "cos":
            dd = self.emit(f"-_np.sin({a})")
        elif name == "tan":
            dd = self.emit(f"1.0 / _np.cos({a}) ** 2")
        elif name == "exp":
            dd = v
        elif name == "ln":
            dd = self.emit(f"1.0 / {a}")
        elif name == "sqrt":
            dd = self.emit(f"0.5 / {v}")
        else:  # abs
            dd = self.emit(f"_np.where({a} >= 0, 1.0, -1.0)")
        return v, [None if x is None else self.emit(f"{dd} * {x}") for x in da]


def compile_function(exprs: Sequence[ExprAst], args: Sequence[str],
                     wrt: Sequence[str] = ()) -> Callable:
    """Compile expressions into one vectorized numpy function of ``args``.

    The returned callable maps ``(*args)`` to a list of values when ``wrt``
    is empty, else to ``(values, jac)`` with ``jac[i][j] = d expr_i / d wrt_j``.
    Entries broadcast against the inputs; constants come back as floats.
    """
    unknown = set().union(*(free_variables(e) for e in exprs)) - set(args)
    if unknown:
        raise UnboundVariableError(f"unbound variable(s) {sorted(unknown)}")
    gen = _CodeGen(wrt)
    outs = [gen.node(e) for e in exprs]
    vals = ", ".join(v for v, _ in outs)
    body = ["    " + line for line in gen.lines]
    if wrt:
        rows = ", ".join("[" + ", ".join(d or "0.0" for d in tans) + "]" for _, tans in outs)
        body.append(f"    return [{vals}], [{rows}]")
    else:
        body.append(f"    return [{vals}]")
    src = f"def _compiled({', '.join(args)}):\n" + "\n".join(body) + "\n"
    namespace = {"_np": np}
    exec(compile(src, "<expr>", "exec"), namespace)
    fn = namespace["_compiled"]
    fn.source = src
    return fn
