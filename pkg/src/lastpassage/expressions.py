"""Tiny arithmetic expression evaluator for user-supplied coefficients.

Model files may describe drift and diffusion coefficients as strings in
the single variable ``x``.  Supported syntax: ``+ - * / ^`` (with ``^``
meaning exponentiation and binding tighter than unary minus), parentheses,
numeric literals, the constants ``pi`` and ``e``, and the functions
``exp``, ``log``, ``sqrt`` and ``pow``.

Expressions are parsed once into a closure tree, so repeated evaluation
inside quadrature loops carries no parsing overhead.
"""

from __future__ import annotations

import math
import re
from typing import Callable

from .errors import ExpressionError

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)

_FUNCTIONS_1 = {
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
}
_CONSTANTS = {"pi": math.pi, "e": math.e}


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character at position {pos}: {text[pos:]!r}")
        if m.lastgroup == "num" or (m.group("num") is not None):
            tokens.append(("num", m.group(0).strip()))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name")))
        else:
            tokens.append(("op", m.group("op")))
        pos = m.end()
    return tokens


class _Parser:
    """Recursive descent over: expr -> term -> unary -> power -> atom."""

    def __init__(self, tokens: list[tuple[str, str]], text: str):
        self.tokens = tokens
        self.text = text
        self.i = 0

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise ExpressionError(f"unexpected end of expression: {self.text!r}")
        self.i += 1
        return tok

    def expect(self, op: str) -> None:
        tok = self.take()
        if tok != ("op", op):
            raise ExpressionError(f"expected {op!r} in {self.text!r}, got {tok[1]!r}")

    def parse(self) -> Callable[[float], float]:
        node = self.expr()
        if self.peek() is not None:
            raise ExpressionError(f"trailing input in {self.text!r}: {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            rhs = self.term()
            lhs = node
            if op == "+":
                node = lambda x, lhs=lhs, rhs=rhs: lhs(x) + rhs(x)
            else:
                node = lambda x, lhs=lhs, rhs=rhs: lhs(x) - rhs(x)
        return node

    def term(self):
        node = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            rhs = self.unary()
            lhs = node
            if op == "*":
                node = lambda x, lhs=lhs, rhs=rhs: lhs(x) * rhs(x)
            else:
                node = lambda x, lhs=lhs, rhs=rhs: lhs(x) / rhs(x)
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            inner = self.unary()
            return lambda x, inner=inner: -inner(x)
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            # right associative; exponent may carry its own unary sign
            exponent = self.unary()
            return lambda x, base=base, exponent=exponent: base(x) ** exponent(x)
        return base

    def atom(self):
        kind, value = self.take()
        if kind == "num":
            const = float(value)
            return lambda x, const=const: const
        if kind == "name":
            if self.peek() == ("op", "("):
                return self.call(value)
            if value == "x":
                return lambda x: x
            if value in _CONSTANTS:
                const = _CONSTANTS[value]
                return lambda x, const=const: const
            raise ExpressionError(f"unknown name {value!r} in {self.text!r}")
        if (kind, value) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        raise ExpressionError(f"unexpected token {value!r} in {self.text!r}")

    def call(self, name: str):
        self.expect("(")
        args = [self.expr()]
        while self.peek() == ("op", ","):
            self.take()
            args.append(self.expr())
        self.expect(")")
        if name in _FUNCTIONS_1:
            if len(args) != 1:
                raise ExpressionError(f"{name} takes one argument")
            fn = _FUNCTIONS_1[name]
            arg = args[0]
            return lambda x, fn=fn, arg=arg: fn(arg(x))
        if name == "pow":
            if len(args) != 2:
                raise ExpressionError("pow takes two arguments")
            base, exponent = args
            return lambda x, base=base, exponent=exponent: base(x) ** exponent(x)
        raise ExpressionError(f"unknown function {name!r}")


def compile_expression(text: str) -> Callable[[float], float]:
    """Compile an expression in ``x`` into a scalar function."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    fn = _Parser(_tokenize(text), text).parse()

    def evaluate(x: float) -> float:
        try:
            return float(fn(x))
        except (ValueError, OverflowError, ZeroDivisionError) as exc:
            raise ExpressionError(f"failed to evaluate {text!r} at x={x}: {exc}") from exc

    return evaluate
