"""A small arithmetic expression language for user-defined models.

Grammar (recursive descent, usual precedence, '^' is right-associative and
binds tighter than unary minus):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | VARIABLE | FUNC '(' expr ')' | '(' expr ')'

Variables are ``y1 .. yd``; functions are exp, tanh, sin and cos.  Parsed
expressions compile to numpy-vectorized callables (rows of an (m, d) array)
and render to scalar source for the jitted integrator kernels.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

FUNCTIONS = ("exp", "tanh", "sin", "cos")


class ExpressionError(ValueError):
    """Parse or validation failure, annotated with a 1-based column."""

    def __init__(self, message: str, column: int):
        super().__init__(f"column {column}: {message}")
        self.column = column


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # zero-based coordinate


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Unary, BinOp, Call]

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))")


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    column: int  # 1-based


def tokenize(text: str) -> list:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            rest = text[pos:].lstrip()
            if not rest:
                break
            col = len(text) - len(rest) + 1
            raise ExpressionError(f"unexpected character {rest[0]!r}", col)
        if m.group("num") is not None:
            tokens.append(_Token("num", m.group("num"),
                                 m.start("num") + 1))
        elif m.group("name") is not None:
            tokens.append(_Token("name", m.group("name"),
                                 m.start("name") + 1))
        else:
            tokens.append(_Token("op", m.group("op"), m.start("op") + 1))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.pos = 0

    def _peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self):
        tok = self._peek()
        if tok is not None:
            self.pos += 1
        return tok

    def _end_column(self) -> int:
        return len(self.text) + 1

    def parse(self) -> Node:
        node = self._expr()
        tok = self._peek()
        if tok is not None:
            raise ExpressionError(f"unexpected token {tok.text!r}",
                                  tok.column)
        return node

    def _expr(self) -> Node:
        node = self._term()
        while True:
            tok = self._peek()
            if tok is not None and tok.kind == "op" and tok.text in "+-":
                self._next()
                node = BinOp(tok.text, node, self._term())
            else:
                return node

    def _term(self) -> Node:
        node = self._unary()
        while True:
            tok = self._peek()
            if tok is not None and tok.kind == "op" and tok.text in "*/":
                self._next()
                node = BinOp(tok.text, node, self._unary())
            else:
                return node

    def _unary(self) -> Node:
        tok = self._peek()
        if tok is not None and tok.kind == "op" and tok.text in "+-":
            self._next()
            return Unary(tok.text, self._unary())
        return self._power()

    def _power(self) -> Node:
        node = self._atom()
        tok = self._peek()
        if tok is not None and tok.kind == "op" and tok.text == "^":
            self._next()
            return BinOp("^", node, self._unary())
        return node

    def _atom(self) -> Node:
        tok = self._next()
        if tok is None:
            raise ExpressionError("unexpected end of expression",
                                  self._end_column())
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "name":
            m = re.fullmatch(r"y(\d+)", tok.text)
            if m:
                idx = int(m.group(1))
                if idx < 1:
                    raise ExpressionError("variables are numbered from y1",
                                          tok.column)
                return Var(idx - 1)
            if tok.text in FUNCTIONS:
                nxt = self._next()
                if nxt is None or nxt.text != "(":
                    col = nxt.column if nxt is not None \
                        else self._end_column()
                    raise ExpressionError(
                        f"{tok.text} must be called with parentheses", col)
                arg = self._expr()
                closing = self._next()
                if closing is None or closing.text != ")":
                    col = closing.column if closing is not None \
                        else self._end_column()
                    raise ExpressionError(
                        f"unclosed call to {tok.text}", col)
                return Call(tok.text, arg)
            raise ExpressionError(f"unknown identifier {tok.text!r}",
                                  tok.column)
        if tok.text == "(":
            node = self._expr()
            closing = self._next()
            if closing is None or closing.text != ")":
                col = closing.column if closing is not None \
                    else self._end_column()
                raise ExpressionError("unclosed parenthesis", col)
            return node
        raise ExpressionError(f"unexpected token {tok.text!r}", tok.column)


def parse_expression(text: str) -> Node:
    return _Parser(text).parse()


def free_variables(node: Node) -> set:
    if isinstance(node, Num):
        return set()
    if isinstance(node, Var):
        return {node.index}
    if isinstance(node, Unary):
        return free_variables(node.operand)
    if isinstance(node, BinOp):
        return free_variables(node.left) | free_variables(node.right)
    if isinstance(node, Call):
        return free_variables(node.arg)
    raise TypeError(node)


def _render(node: Node, var_fmt: str) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return var_fmt.format(node.index)
    if isinstance(node, Unary):
        return f"({node.op}{_render(node.operand, var_fmt)})"
    if isinstance(node, BinOp):
        op = "**" if node.op == "^" else node.op
        return (f"({_render(node.left, var_fmt)}{op}"
                f"{_render(node.right, var_fmt)})")
    if isinstance(node, Call):
        return f"np.{node.func}({_render(node.arg, var_fmt)})"
    raise TypeError(node)


def to_scalar_source(node: Node) -> str:
    """Render as scalar Python over ``x[i]`` (kernel codegen)."""
    return _render(node, "x[{0}]")


def to_vector_source(node: Node) -> str:
    """Render as numpy source over columns ``Y[..., i]``."""
    return _render(node, "Y[..., {0}]")


def compile_vectorized(node: Node, dim: int):
    """Compile to a callable on (d,) or (m, d) arrays (scalar per row)."""
    bad = [i for i in sorted(free_variables(node)) if i >= dim]
    if bad:
        raise ExpressionError(
            f"variable y{bad[0] + 1} exceeds the model dimension {dim}", 1)
    source = ("def _compiled(Y):\n"
              f"    return {to_vector_source(node)}\n")
    namespace = {"np": np}
    exec(source, namespace)
    fn = namespace["_compiled"]

    def wrapped(Y):
        arr = np.asarray(Y, dtype=float)
        out = np.asarray(fn(arr), dtype=float)
        target = arr.shape[:-1]
        if out.shape != target:
            out = np.broadcast_to(out, target).copy()
        return out

    return wrapped


def evaluate(node: Node, y) -> float:
    """Tree-walking evaluation at a single point (reference semantics)."""
    y = np.asarray(y, dtype=float)
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return float(y[node.index])
    if isinstance(node, Unary):
        val = evaluate(node.operand, y)
        return -val if node.op == "-" else val
    if isinstance(node, BinOp):
        a = evaluate(node.left, y)
        b = evaluate(node.right, y)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a / b
        if node.op == "^":
            return a ** b
        raise TypeError(node.op)
    if isinstance(node, Call):
        return float(getattr(np, node.func)(evaluate(node.arg, y)))
    raise TypeError(node)
