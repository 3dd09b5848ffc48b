"""Potential expression DSL: parser, evaluator, symbolic gradient, printer.

Grammar (ASCII, with unicode multiply/divide accepted as aliases):

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' integer)*          # integer exponents only
    atom   := NUMBER | 'x'<k> | ('exp'|'cos'|'sin') '(' expr ')' | '(' expr ')'

Precedence ^ > unary - > * / > + -, everything left associative, so
"-x1^2" is -(x1^2).  The printer emits minimal parentheses in a canonical
spacing ("a + b", "a*b", "x1^2") and round-trips through the parser.
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = [
    "PotentialExpr",
    "parse_potential",
    "grad_potential",
    "droplet_half_width",
]

_FUNCTIONS = ("exp", "cos", "sin")


# ---------------------------------------------------------------------------
# AST nodes


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based: x1, x2, x3


@dataclass(frozen=True)
class Neg:
    child: object


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: object
    right: object


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str  # exp, cos or sin
    arg: object


def _max_var(node):
    if isinstance(node, Var):
        return node.index
    if isinstance(node, Num):
        return 0
    if isinstance(node, Neg):
        return _max_var(node.child)
    if isinstance(node, BinOp):
        return max(_max_var(node.left), _max_var(node.right))
    if isinstance(node, Pow):
        return _max_var(node.base)
    if isinstance(node, Call):
        return _max_var(node.arg)
    raise TypeError(f"not an AST node: {node!r}")


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]|×|÷))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            # skip over any leading whitespace to report the offending char
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            if bad >= len(text):
                break
            raise ValidationError(
                f"syntax error at offset {bad}: unexpected character {text[bad]!r}"
            )
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            op = m.group("op")
            op = {"×": "*", "÷": "/"}.get(op, op)
            tokens.append(("op", op, m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val, off = self.peek()
        if kind == "op" and val == op:
            return self.advance()
        raise ValidationError(f"syntax error at offset {off}: expected {op!r}")

    def parse(self):
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ValidationError(
                f"syntax error at offset {off}: unexpected {val!r}"
            )
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, off = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                node = BinOp(val, node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, val, off = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                node = BinOp(val, node, self.unary())
            else:
                return node

    def unary(self):
        kind, val, off = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        node = self.atom()
        while True:
            kind, val, off = self.peek()
            if kind == "op" and val == "^":
                self.advance()
                node = Pow(node, self.integer_exponent())
            else:
                return node

    def integer_exponent(self):
        sign = 1
        kind, val, off = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            sign = -1
            kind, val, off = self.peek()
        if kind != "num" or not re.fullmatch(r"\d+", val):
            raise ValidationError(
                f"syntax error at offset {off}: exponent must be an integer"
            )
        self.advance()
        return sign * int(val)

    def atom(self):
        kind, val, off = self.advance()
        if kind == "num":
            return Num(float(val))
        if kind == "ident":
            if val in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Call(val, arg)
            m = re.fullmatch(r"x([0-9]+)", val)
            if m:
                index = int(m.group(1))
                if not 1 <= index <= 3:
                    raise ValidationError(
                        f"unknown identifier {val!r} at offset {off}: "
                        "variables are x1, x2, x3"
                    )
                return Var(index)
            raise ValidationError(f"unknown identifier {val!r} at offset {off}")
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "op" and val == "-":
            return Neg(self.unary())
        raise ValidationError(
            f"syntax error at offset {off}: unexpected "
            f"{'end of input' if kind == 'end' else val!r}"
        )


# ---------------------------------------------------------------------------
# evaluation / differentiation / printing

def _evaluate(node, coords):
    """coords: list of arrays (or scalars), one per variable index."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.index > len(coords):
            raise ValidationError(
                f"expression uses x{node.index} but the point has "
                f"dimension {len(coords)}"
            )
        return coords[node.index - 1]
    if isinstance(node, Neg):
        return -_evaluate(node.child, coords)
    if isinstance(node, BinOp):
        a = _evaluate(node.left, coords)
        b = _evaluate(node.right, coords)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / b
    if isinstance(node, Pow):
        base = _evaluate(node.base, coords)
        if node.exponent < 0:
            return base ** float(node.exponent)
        return base ** node.exponent
    if isinstance(node, Call):
        a = _evaluate(node.arg, coords)
        return getattr(np, node.func)(a)
    raise TypeError(f"not an AST node: {node!r}")


def _simplified_mul(a, b):
    if isinstance(a, Num):
        if a.value == 0.0:
            return Num(0.0)
        if a.value == 1.0:
            return b
    if isinstance(b, Num):
        if b.value == 0.0:
            return Num(0.0)
        if b.value == 1.0:
            return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _simplified_add(a, b):
    if isinstance(a, Num) and a.value == 0.0:
        return b
    if isinstance(b, Num) and b.value == 0.0:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def _differentiate(node, index):
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0 if node.index == index else 0.0)
    if isinstance(node, Neg):
        d = _differentiate(node.child, index)
        if isinstance(d, Num):
            return Num(-d.value)
        return Neg(d)
    if isinstance(node, BinOp):
        da = _differentiate(node.left, index)
        db = _differentiate(node.right, index)
        if node.op in "+-":
            if isinstance(da, Num) and da.value == 0.0 and node.op == "+":
                return db
            if isinstance(db, Num) and db.value == 0.0:
                return da
            return BinOp(node.op, da, db)
        if node.op == "*":
            return _simplified_add(
                _simplified_mul(da, node.right), _simplified_mul(node.left, db)
            )
        # quotient rule: (a/b)' = a'/b - a b'/b^2
        first = BinOp("/", da, node.right) if not (
            isinstance(da, Num) and da.value == 0.0
        ) else Num(0.0)
        second = _simplified_mul(
            _simplified_mul(node.left, db), Pow(node.right, -2)
        )
        if isinstance(second, Num) and second.value == 0.0:
            return first
        return BinOp("-", first, second)
    if isinstance(node, Pow):
        k = node.exponent
        if k == 0:
            return Num(0.0)
        db = _differentiate(node.base, index)
        inner = Pow(node.base, k - 1) if k != 1 else Num(1.0)
        if k == 2:
            inner = node.base
        elif k - 1 == 1:
            inner = node.base
        return _simplified_mul(Num(float(k)), _simplified_mul(inner, db))
    if isinstance(node, Call):
        da = _differentiate(node.arg, index)
        if node.func == "exp":
            outer = Call("exp", node.arg)
        elif node.func == "sin":
            outer = Call("cos", node.arg)
        else:  # cos
            outer = Neg(Call("sin", node.arg))
        return _simplified_mul(outer, da)
    raise TypeError(f"not an AST node: {node!r}")


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_NEG_PREC = 3
_POW_PREC = 4
_ATOM_PREC = 5


def _precedence(node):
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _NEG_PREC
    if isinstance(node, Pow):
        return _POW_PREC
    return _ATOM_PREC


def _fmt_number(v):
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _to_text(node):
    if isinstance(node, Num):
        return _fmt_number(node.value)
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        inner = _to_text(node.child)
        if _precedence(node.child) < _NEG_PREC:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, BinOp):
        prec = _PREC[node.op]
        left = _to_text(node.left)
        if _precedence(node.left) < prec:
            left = f"({left})"
        right = _to_text(node.right)
        # all operators associate left, so equal precedence on the right
        # needs parentheses to round-trip structurally
        if _precedence(node.right) <= prec:
            right = f"({right})"
        joint = f" {node.op} " if node.op in "+-" else node.op
        return f"{left}{joint}{right}"
    if isinstance(node, Pow):
        base = _to_text(node.base)
        if _precedence(node.base) < _POW_PREC:
            base = f"({base})"
        return f"{base}^{node.exponent}"
    if isinstance(node, Call):
        return f"{node.func}({_to_text(node.arg)})"
    raise TypeError(f"not an AST node: {node!r}")


# ---------------------------------------------------------------------------
# public surface


class PotentialExpr:
    """A validated potential expression with symbolic gradient support."""

    def __init__(self, ast, dimension=None):
        self.ast = ast
        inferred = max(1, _max_var(ast))
        if dimension is None:
            dimension = inferred
        if dimension < inferred:
            raise ValidationError(
                f"expression uses x{inferred} but dimension={dimension}"
            )
        self.dimension = dimension
        self._grad = None

    def __call__(self, point):
        """Evaluate at a point (n,) or an array of points (m, n).

        For n=1 a bare scalar or a flat array of scalars also works.
        """
        pt = np.asarray(point, dtype=float)
        if pt.ndim == 0:
            coords = [pt[()]]
        elif pt.ndim == 1:
            if self.dimension == 1:
                # a flat array of 1-d points
                coords = [pt]
            else:
                coords = list(pt)
        else:
            coords = [pt[..., k] for k in range(pt.shape[-1])]
        if len(coords) < self.dimension:
            raise ValidationError(
                f"point has dimension {len(coords)}, expected {self.dimension}"
            )
        out = _evaluate(self.ast, coords)
        return np.asarray(out, dtype=float) + np.zeros(
            np.broadcast_shapes(*(np.shape(c) for c in coords)) or (),
        )

    def gradient(self):
        """Tuple of PotentialExpr, one partial derivative per variable."""
        if self._grad is None:
            self._grad = tuple(
                PotentialExpr(_differentiate(self.ast, k + 1), self.dimension)
                for k in range(self.dimension)
            )
        return self._grad

    def to_text(self):
        return _to_text(self.ast)

    def __repr__(self):
        return f"PotentialExpr({self.to_text()!r}, dimension={self.dimension})"


def parse_potential(text, dimension=None):
    """Parse the DSL into a PotentialExpr; errors carry character offsets."""
    if not isinstance(text, str) or not text.strip():
        raise ValidationError("empty potential expression")
    ast = _Parser(text).parse()
    return PotentialExpr(ast, dimension)


def grad_potential(V, x):
    """Symbolic gradient of V evaluated at the point x, as an array."""
    pt = np.asarray(x, dtype=float).reshape(1, -1)
    if pt.shape[1] != V.dimension:
        raise ValidationError(
            f"point has dimension {pt.shape[1]}, expected {V.dimension}"
        )
    return np.array([float(g(pt)[0]) for g in V.gradient()])


def droplet_half_width(V, level, step=0.05, cap=64.0):
    """Outermost |x|_inf among scanned points with V < level, by outward scan.

    Scans axis directions and (for n >= 2) diagonal rays.  Raises when the
    sublevel set still shows up at the scan cap, which signals an unconfined
    potential.
    """
    n = V.dimension
    directions = []
    if n == 1:
        directions = [np.array([1.0]), np.array([-1.0])]
    else:
        for kx in (-1, 0, 1):
            for ky in (-1, 0, 1):
                d = np.array([kx, ky], dtype=float)[:n]
                if np.any(d != 0.0):
                    directions.append(d / np.linalg.norm(d))
    radii = np.arange(step, cap + step, step)
    outer = 0.0
    for d in directions:
        pts = radii[:, None] * d[None, :]
        vals = V(pts)
        below = np.nonzero(vals < level)[0]
        if below.size:
            r = radii[below[-1]]
            if r >= cap - step:
                raise ValidationError(
                    f"unconfined potential: V < {level} persists out to |x|={cap}"
                )
            outer = max(outer, np.max(np.abs(pts[below[-1]])))
    return outer
