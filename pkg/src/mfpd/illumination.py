"""Boundary illuminations as small arithmetic expressions in ``x1`` and ``x2``.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor ('*' factor)*
    factor := number | 'x1' | 'x2' | '(' expr ')'
            | ('sin' | 'cos') '(' expr ')' | '-' factor

Expressions are parsed by recursive descent into an immutable tree that can
be evaluated on coordinate arrays, differentiated symbolically and printed
back to source that parses to the same tree.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import IlluminationSyntaxError, ValidationError


class Node:
    precedence = 4

    def eval(self, x1, x2):
        raise NotImplementedError

    def diff(self, var: str) -> "Node":
        raise NotImplementedError


@dataclass(frozen=True)
class Num(Node):
    value: float

    def eval(self, x1, x2):
        return np.full(np.shape(x1), self.value, dtype=float)

    def diff(self, var):
        return Num(0.0)

    def source(self):
        return repr(float(self.value))


@dataclass(frozen=True)
class Var(Node):
    name: str

    def eval(self, x1, x2):
        return np.asarray(x1 if self.name == "x1" else x2, dtype=float) + 0.0

    def diff(self, var):
        return Num(1.0 if var == self.name else 0.0)

    def source(self):
        return self.name


@dataclass(frozen=True)
class Neg(Node):
    arg: Node
    precedence = 3

    def eval(self, x1, x2):
        return -self.arg.eval(x1, x2)

    def diff(self, var):
        return Neg(self.arg.diff(var))

    def source(self):
        inner = self.arg.source()
        # '-' binds only a factor, so anything looser than a factor gets parentheses
        return f"-{inner}" if self.arg.precedence >= 3 else f"-({inner})"


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    @property
    def precedence(self):
        return 2 if self.op == "*" else 1

    def eval(self, x1, x2):
        lv, rv = self.left.eval(x1, x2), self.right.eval(x1, x2)
        if self.op == "+":
            return lv + rv
        if self.op == "-":
            return lv - rv
        return lv * rv

    def diff(self, var):
        dl, dr = self.left.diff(var), self.right.diff(var)
        if self.op in "+-":
            return BinOp(self.op, dl, dr)
        return BinOp("+", BinOp("*", dl, self.right), BinOp("*", self.left, dr))

    def source(self):
        p = self.precedence
        ls = self.left.source()
        if self.left.precedence < p:
            ls = f"({ls})"
        rs = self.right.source()
        # left-associative: a right operand of equal precedence needs parentheses
        if self.right.precedence <= p:
            rs = f"({rs})"
        return f"{ls}{self.op}{rs}"


@dataclass(frozen=True)
class Call(Node):
    func: str
    arg: Node

    def eval(self, x1, x2):
        v = self.arg.eval(x1, x2)
        return np.sin(v) if self.func == "sin" else np.cos(v)

    def diff(self, var):
        da = self.arg.diff(var)
        if self.func == "sin":
            return BinOp("*", Call("cos", self.arg), da)
        return BinOp("*", Neg(Call("sin", self.arg)), da)

    def source(self):
        return f"{self.func}({self.arg.source()})"


_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*()]))")
_NAMES = {"x1", "x2", "sin", "cos"}


def _tokenize(src):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if not m:
            off = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise IlluminationSyntaxError(f"unexpected character {src[off]!r}", off)
        kind = m.lastgroup
        start = m.start(kind)
        text = m.group(kind)
        if kind == "name" and text not in _NAMES:
            raise IlluminationSyntaxError(f"unknown identifier {text!r}", start)
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, t, off = self.take()
        if t != text:
            found = "end of input" if kind == "end" else repr(t)
            raise IlluminationSyntaxError(f"expected {text!r}, found {found}", off)

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] == "*":
            self.take()
            node = BinOp("*", node, self.factor())
        return node

    def factor(self):
        kind, text, off = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text in ("x1", "x2"):
                return Var(text)
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Call(text, arg)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "op" and text == "-":
            return Neg(self.factor())
        found = "end of input" if kind == "end" else repr(text)
        raise IlluminationSyntaxError(f"unexpected {found}", off)


@dataclass(frozen=True)
class Illumination:
    """Parsed boundary datum; callable on coordinate arrays."""

    source: str
    tree: Node

    def __call__(self, x1, x2) -> np.ndarray:
        return self.tree.eval(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))

    def at(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        vals = self(pts[:, 0], pts[:, 1])
        if not np.all(np.isfinite(vals)):
            raise ValidationError(f"illumination {self.source!r} is not finite at every point")
        return vals

    def gradient(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        g1 = self.tree.diff("x1").eval(pts[:, 0], pts[:, 1])
        g2 = self.tree.diff("x2").eval(pts[:, 0], pts[:, 1])
        return np.column_stack([g1, g2])

    def scaled(self, c: float) -> "Illumination":
        factor = Num(abs(float(c))) if c >= 0 else Neg(Num(abs(float(c))))
        tree = BinOp("*", factor, self.tree)
        return Illumination(tree.source(), tree)

    def printed(self) -> str:
        """Canonical source for the tree (parses back to an equal tree)."""
        return self.tree.source()

    def __str__(self):
        return self.source


def parse_illumination(src: str) -> Illumination:
    if not src or not src.strip():
        raise IlluminationSyntaxError("empty illumination", 0)
    p = _Parser(src)
    tree = p.expr()
    kind, text, off = p.peek()
    if kind != "end":
        raise IlluminationSyntaxError(f"unexpected {text!r}", off)
    return Illumination(src.strip(), tree)


def as_illumination(phi) -> Illumination:
    return phi if isinstance(phi, Illumination) else parse_illumination(str(phi))
