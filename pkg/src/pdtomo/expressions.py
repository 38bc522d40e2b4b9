"""Tiny arithmetic expressions over x, y, z for job files.

Grammar: numbers, the variables x/y/z, + - * / ^ (right-associative power),
parentheses, unary minus, and the functions exp, sin, cos, sqrt. Evaluation
is vectorized over numpy arrays. Parse errors carry the byte offset of the
offending token.
"""

from __future__ import annotations

import re

import numpy as np

from .errors import ParseError

__all__ = ["Expression", "parse_expression"]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)
_FUNCTIONS = {"exp": np.exp, "sin": np.sin, "cos": np.cos, "sqrt": np.sqrt}
_VARIABLES = ("x", "y", "z")


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            at = len(text) - len(stripped)
            raise ParseError(f"unexpected character {text[at]!r} at offset {at}", offset=at)
        if m.group("num") is not None:
            # the regex splits the exponent off the named group; re-take the slice
            tokens.append(("num", text[m.start() : m.end()].strip(), m.start("num")))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class Expression:
    """Parsed expression; call with coordinate arrays."""

    def __init__(self, text, fn, variables):
        self.text = text
        self._fn = fn
        self.variables = variables

    def __call__(self, x, y=None, z=None):
        env = {"x": np.asarray(x, dtype=float)}
        env["y"] = np.zeros_like(env["x"]) if y is None else np.asarray(y, dtype=float)
        env["z"] = np.zeros_like(env["x"]) if z is None else np.asarray(z, dtype=float)
        return self._fn(env) + np.zeros_like(env["x"])

    def __repr__(self):
        return f"Expression({self.text!r})"


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val, off = self.take()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r} at offset {off}", offset=off)

    def parse(self):
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"trailing input {val!r} at offset {off}", offset=off)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                rhs = self.term()
                node = (lambda a, b, o: (lambda env: a(env) + b(env)) if o == "+" else (lambda env: a(env) - b(env)))(node, rhs, val)
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, val, off = self.peek()
            if kind == "op" and val in "*/":
                self.take()
                rhs = self.factor()
                if val == "*":
                    node = (lambda a, b: lambda env: a(env) * b(env))(node, rhs)
                else:
                    node = (lambda a, b: lambda env: a(env) / b(env))(node, rhs)
            else:
                return node

    def factor(self):
        # unary minus binds looser than ^, so -x^2 means -(x^2)
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            inner = self.factor()
            return (lambda a: lambda env: -a(env))(inner)
        if kind == "op" and val == "+":
            self.take()
            return self.factor()
        return self.power()

    def power(self):
        base = self.primary()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            exponent = self.factor()  # right-associative, allows 2^-2
            return (lambda a, b: lambda env: np.power(a(env), b(env)))(base, exponent)
        return base

    def primary(self):
        kind, val, off = self.take()
        if kind == "num":
            c = float(val)
            return lambda env, c=c: c
        if kind == "name":
            if val in _VARIABLES:
                return lambda env, v=val: env[v]
            if val in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                fn = _FUNCTIONS[val]
                return (lambda f, a: lambda env: f(a(env)))(fn, arg)
            raise ParseError(f"unknown identifier {val!r} at offset {off}", offset=off)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ParseError(f"unexpected token {val!r} at offset {off}", offset=off)


def parse_expression(text: str) -> Expression:
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty expression", offset=0)
    fn = _Parser(text).parse()
    used = [v for v in _VARIABLES if re.search(rf"\b{v}\b", text)]
    return Expression(text, fn, tuple(used))
