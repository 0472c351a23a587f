"""Tiny arithmetic language for field-valued scenario entries.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | '+' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Names are the variables ``x1``, ``x2``, ``t`` and the constant ``pi``;
functions are ``sin``, ``cos`` and ``exp``.  ``^`` is right-associative and
binds tighter than unary minus, so ``-x^2`` is ``-(x^2)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

VARIABLES = ("x1", "x2", "t")
CONSTANTS = {"pi": np.pi}
FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


class ExpressionError(ValueError):
    def __init__(self, message: str, source: str, pos: int):
        super().__init__(f"{message} at column {pos + 1} in {source!r}")
        self.pos = pos


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    out, pos = [], 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            raise ExpressionError("unexpected character", src, pos + len(src[pos:]) - len(src[pos:].lstrip()))
        kind = m.lastgroup
        start = m.start(kind)
        out.append((kind, m.group(kind), start))
        pos = m.end()
    out.append(("end", "", len(src)))
    return out


# Nodes are tuples: ('num', value) | ('var', name) | ('neg', a) | ('bin', op, a, b) | ('call', fn, a)


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value:
            raise ExpressionError(f"expected {value!r}", self.src, pos)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected {text!r}", self.src, pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = ("bin", op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = ("bin", op, node, self.unary())
        return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text in ("-", "+"):
            self.take()
            inner = self.unary()
            return ("neg", inner) if text == "-" else inner
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return ("bin", "^", base, self.unary())
        return base

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return ("num", float(text))
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return ("call", text, arg)
            if text in CONSTANTS:
                return ("num", CONSTANTS[text])
            if text in VARIABLES:
                return ("var", text)
            raise ExpressionError(f"unknown name {text!r}", self.src, pos)
        if text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExpressionError("expected a number, name or '('", self.src, pos)


def _eval(node, env):
    tag = node[0]
    if tag == "num":
        return node[1]
    if tag == "var":
        return env[node[1]]
    if tag == "neg":
        return -_eval(node[1], env)
    if tag == "call":
        return FUNCTIONS[node[1]](_eval(node[2], env))
    op, a, b = node[1], _eval(node[2], env), _eval(node[3], env)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b
    return np.power(a, b)


def _uses(node, name) -> bool:
    tag = node[0]
    if tag == "var":
        return node[1] == name
    if tag == "num":
        return False
    return any(_uses(child, name) for child in node[1:] if isinstance(child, tuple))


@dataclass(frozen=True)
class FieldExpression:
    """Parsed expression over ``(x1, x2, t)``; numbers are accepted as constants."""

    source: str
    tree: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tree", _Parser(str(self.source)).parse())

    @classmethod
    def of(cls, value) -> "FieldExpression":
        if isinstance(value, FieldExpression):
            return value
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return cls(repr(float(value)))
        return cls(str(value))

    @property
    def time_dependent(self) -> bool:
        return _uses(self.tree, "t")

    def evaluate(self, x1, x2, t=0.0) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        shape = np.broadcast(x1, x2).shape
        with np.errstate(all="ignore"):
            val = _eval(self.tree, {"x1": x1, "x2": x2, "t": float(t)})
        return np.broadcast_to(np.asarray(val, dtype=float), shape).copy()


def parse_expression(source) -> FieldExpression:
    return FieldExpression.of(source)
