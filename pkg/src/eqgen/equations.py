"""Equation parsing, exact solving, and answer checking.

Grammar (';' separates equations, each equation has exactly one '='):

    program  = equation { ';' equation }
    equation = expr '=' expr
    expr     = term  { ('+'|'-') term }          left associative
    term     = unary { ('*'|'/') unary }         left associative
    unary    = '-' unary | power
    power    = atom [ '^' unary ]                right associative
    atom     = NUMBER | IDENT | '(' expr ')'

Precedence is ^ > unary minus > * / > + -, so "-2^2" is -(2^2) and
"-2*3" is (-2)*3. Exponents must reduce to integer literals with
|exp| <= 3. Identifiers are the variables x, y, z or number-token
symbols such as N_1 / M_2 / F_3.

Solving is exact: linear systems in up to three variables go through
rational Gaussian elimination, a single univariate equation of degree two
through the quadratic formula (rational roots stay exact, irrational ones
become floats). Everything else is reported as unsupported, which callers
count as a wrong answer.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

VARIABLES = ("x", "y", "z")
_SYMBOL_RE = re.compile(r"^[NMF]_\d+$")

ANSWER_REL_TOL = 1e-4


class ParseError(ValueError):
    """The input is not a well-formed equation list."""


# ---------------------------------------------------------------------------
# tokens
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # NUM, IDENT, OP, LPAREN, RPAREN, EQ, SEMI
    text: str
    value: Fraction | None = None


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^])|(?P<lp>\()|(?P<rp>\))|(?P<eq>=)|(?P<semi>;))"
)


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stray = text[pos:].lstrip()
            if not stray:
                break
            raise ParseError(f"unexpected character {stray[0]!r} at position {pos}")
        pos = m.end()
        if m.group("num") is not None:
            s = m.group("num")
            tokens.append(Token("NUM", s, Fraction(s if s[0] != "." else "0" + s)))
        elif m.group("ident") is not None:
            tokens.append(Token("IDENT", m.group("ident")))
        elif m.group("op") is not None:
            tokens.append(Token("OP", m.group("op")))
        elif m.group("lp") is not None:
            tokens.append(Token("LPAREN", "("))
        elif m.group("rp") is not None:
            tokens.append(Token("RPAREN", ")"))
        elif m.group("eq") is not None:
            tokens.append(Token("EQ", "="))
        else:
            tokens.append(Token("SEMI", ";"))
    return tokens


# ---------------------------------------------------------------------------
# ast
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lit:
    value: Fraction


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Sym:
    """A number-token placeholder (N_i / M_i / F_i) left in a template."""

    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Lit, Var, Sym, Neg, BinOp]


@dataclass(frozen=True)
class Equation:
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class EquationList:
    equations: tuple[Equation, ...]

    def __len__(self) -> int:
        return len(self.equations)


_ADD_PREC = 1
_MUL_PREC = 2
_UNARY_PREC = 3
_POW_PREC = 4


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of input")
        self.pos += 1
        return tok

    def expr(self, min_prec: int = _ADD_PREC) -> Expr:
        lhs = self.unary()
        while True:
            tok = self.peek()
            if tok is None or tok.kind != "OP":
                return lhs
            op = tok.text
            prec = _POW_PREC if op == "^" else _MUL_PREC if op in "*/" else _ADD_PREC
            if prec < min_prec:
                return lhs
            self.pos += 1
            next_min = prec if op == "^" else prec + 1  # ^ is right associative
            rhs = self.expr(next_min)
            # fold literal fractions so that "(1/3)" parses back to one literal
            if op == "/" and isinstance(lhs, Lit) and isinstance(rhs, Lit) and rhs.value != 0:
                lhs = Lit(lhs.value / rhs.value)
            else:
                lhs = BinOp(op, lhs, rhs)

    def unary(self) -> Expr:
        tok = self.peek()
        if tok is not None and tok.kind == "OP" and tok.text == "-":
            self.pos += 1
            operand = self.expr(_UNARY_PREC)
            return Lit(-operand.value) if isinstance(operand, Lit) else Neg(operand)
        return self.atom()

    def atom(self) -> Expr:
        tok = self.next()
        if tok.kind == "NUM":
            return Lit(tok.value)
        if tok.kind == "IDENT":
            if tok.text in VARIABLES:
                return Var(tok.text)
            if _SYMBOL_RE.match(tok.text):
                return Sym(tok.text)
            raise ParseError(f"unknown identifier {tok.text!r}")
        if tok.kind == "LPAREN":
            inner = self.expr()
            closing = self.next()
            if closing.kind != "RPAREN":
                raise ParseError("expected ')'")
            return inner
        raise ParseError(f"unexpected token {tok.text!r}")


def _exponent_value(node: Expr) -> Fraction:
    """Unwrap a (possibly negated) literal exponent; anything else is ill-formed."""
    neg = False
    while isinstance(node, Neg):
        neg = not neg
        node = node.operand
    if not isinstance(node, Lit):
        raise ParseError("exponent must be an integer literal")
    return -node.value if neg else node.value


def _validate(node: Expr) -> None:
    if isinstance(node, BinOp):
        if node.op == "^":
            e = _exponent_value(node.right)
            if e.denominator != 1 or abs(e) > 3:
                raise ParseError(f"exponent {e} outside the supported range |e| <= 3")
            _validate(node.left)
        else:
            _validate(node.left)
            _validate(node.right)
    elif isinstance(node, Neg):
        _validate(node.operand)


def parse(text: str) -> EquationList:
    """Parse a ';'-separated equation list; raises ParseError when ill-formed."""
    tokens = tokenize(text)
    if not tokens:
        raise ParseError("empty input")
    parser = _Parser(tokens)
    equations: list[Equation] = []
    while True:
        lhs = parser.expr()
        tok = parser.next()
        if tok.kind != "EQ":
            raise ParseError(f"expected '=' but found {tok.text!r}")
        rhs = parser.expr()
        equations.append(Equation(lhs, rhs))
        tok = parser.peek()
        if tok is None:
            break
        if tok.kind != "SEMI":
            raise ParseError(f"unexpected token {tok.text!r} after equation")
        parser.pos += 1
    for eq in equations:
        _validate(eq.lhs)
        _validate(eq.rhs)
    return EquationList(tuple(equations))


def to_string(ast: EquationList | Expr) -> str:
    """Render with full parenthesization: parse(to_string(a)) == a."""
    if isinstance(ast, EquationList):
        return ";".join(f"{to_string(eq.lhs)}={to_string(eq.rhs)}" for eq in ast.equations)
    if isinstance(ast, Lit):
        v = ast.value
        return str(v) if v.denominator == 1 and v >= 0 else f"({v})"
    if isinstance(ast, (Var, Sym)):
        return ast.name
    if isinstance(ast, Neg):
        return f"(-{to_string(ast.operand)})"
    return f"({to_string(ast.left)}{ast.op}{to_string(ast.right)})"


# ---------------------------------------------------------------------------
# exact solving
# ---------------------------------------------------------------------------

NumberLike = Union[Fraction, float]


@dataclass(frozen=True)
class SolutionSet:
    """Outcome of solving. ``solutions`` holds one assignment per consistent
    root: a linear system yields a single dict, a quadratic one dict per
    distinct real root."""

    status: str  # solved | no_solution | infinite | unsupported
    solutions: tuple[dict[str, NumberLike], ...] = ()

    def values(self) -> list[NumberLike]:
        return [v for sol in self.solutions for v in sol.values()]


NO_SOLUTION = SolutionSet("no_solution")
INFINITE = SolutionSet("infinite")
UNSUPPORTED = SolutionSet("unsupported")


class _NonPolynomial(Exception):
    pass


# a polynomial is {(ex, ey, ez): Fraction}
_Poly = dict[tuple[int, int, int], Fraction]


def _pconst(c: Fraction) -> _Poly:
    return {(0, 0, 0): c} if c else {}


def _padd(a: _Poly, b: _Poly) -> _Poly:
    out = dict(a)
    for k, v in b.items():
        s = out.get(k, Fraction(0)) + v
        if s:
            out[k] = s
        else:
            out.pop(k, None)
    return out


def _pneg(a: _Poly) -> _Poly:
    return {k: -v for k, v in a.items()}


def _pmul(a: _Poly, b: _Poly) -> _Poly:
    out: _Poly = {}
    for ka, va in a.items():
        for kb, vb in b.items():
            k = (ka[0] + kb[0], ka[1] + kb[1], ka[2] + kb[2])
            s = out.get(k, Fraction(0)) + va * vb
            if s:
                out[k] = s
            else:
                out.pop(k, None)
    return out


def _as_const(p: _Poly) -> Fraction | None:
    if not p:
        return Fraction(0)
    if len(p) == 1 and (0, 0, 0) in p:
        return p[(0, 0, 0)]
    return None


def _to_poly(node: Expr) -> _Poly:
    if isinstance(node, Lit):
        return _pconst(node.value)
    if isinstance(node, Var):
        key = [0, 0, 0]
        key[VARIABLES.index(node.name)] = 1
        return {tuple(key): Fraction(1)}
    if isinstance(node, Sym):
        raise _NonPolynomial("unresolved number-token symbol")
    if isinstance(node, Neg):
        return _pneg(_to_poly(node.operand))
    if isinstance(node, BinOp):
        if node.op == "+":
            return _padd(_to_poly(node.left), _to_poly(node.right))
        if node.op == "-":
            return _padd(_to_poly(node.left), _pneg(_to_poly(node.right)))
        if node.op == "*":
            return _pmul(_to_poly(node.left), _to_poly(node.right))
        if node.op == "/":
            denom = _as_const(_to_poly(node.right))
            if denom is None:
                raise _NonPolynomial("division by an expression with variables")
            if denom == 0:
                raise _NonPolynomial("division by zero")
            return _pmul(_to_poly(node.left), _pconst(Fraction(1) / denom))
        if node.op == "^":
            e = int(_exponent_value(node.right))
            base = _to_poly(node.left)
            if e < 0:
                c = _as_const(base)
                if c is None:
                    raise _NonPolynomial("negative exponent on a variable expression")
                if c == 0:
                    raise _NonPolynomial("zero raised to a negative power")
                return _pconst(c**e)
            out = _pconst(Fraction(1))
            for _ in range(e):
                out = _pmul(out, base)
            return out
    raise _NonPolynomial(f"unsupported node {node!r}")


def _degree(p: _Poly) -> int:
    return max((sum(k) for k in p), default=0)


def _solve_linear(polys: list[_Poly], names: list[str]) -> SolutionSet:
    n = len(names)
    cols = [VARIABLES.index(v) for v in names]
    rows: list[list[Fraction]] = []
    for p in polys:
        row = [p.get(tuple(1 if i == c else 0 for i in range(3)), Fraction(0)) for c in cols]
        row.append(-p.get((0, 0, 0), Fraction(0)))
        rows.append(row)

    pivot_of_col: dict[int, int] = {}
    r = 0
    for c in range(n):
        pivot = next((i for i in range(r, len(rows)) if rows[i][c] != 0), None)
        if pivot is None:
            continue
        rows[r], rows[pivot] = rows[pivot], rows[r]
        pv = rows[r][c]
        rows[r] = [v / pv for v in rows[r]]
        for i in range(len(rows)):
            if i != r and rows[i][c] != 0:
                f = rows[i][c]
                rows[i] = [a - f * b for a, b in zip(rows[i], rows[r])]
        pivot_of_col[c] = r
        r += 1
    for i in range(r, len(rows)):
        if rows[i][n] != 0:
            return NO_SOLUTION
    if len(pivot_of_col) < n:
        return INFINITE
    assignment = {names[c]: rows[pivot_of_col[c]][n] for c in range(n)}
    return SolutionSet("solved", (assignment,))


def _exact_sqrt(f: Fraction) -> Fraction | None:
    pn, pd = f.numerator, f.denominator
    rn, rd = math.isqrt(pn), math.isqrt(pd)
    if rn * rn == pn and rd * rd == pd:
        return Fraction(rn, rd)
    return None


def _solve_quadratic(p: _Poly, name: str) -> SolutionSet:
    i = VARIABLES.index(name)

    def coeff(e: int) -> Fraction:
        key = tuple(e if j == i else 0 for j in range(3))
        return p.get(key, Fraction(0))

    a, b, c = coeff(2), coeff(1), coeff(0)
    disc = b * b - 4 * a * c
    if disc < 0:
        return NO_SOLUTION
    if disc == 0:
        return SolutionSet("solved", ({name: -b / (2 * a)},))
    root = _exact_sqrt(disc)
    if root is not None:
        r1 = (-b - root) / (2 * a)
        r2 = (-b + root) / (2 * a)
    else:
        s = math.sqrt(float(disc))
        r1 = (float(-b) - s) / float(2 * a)
        r2 = (float(-b) + s) / float(2 * a)
    lo, hi = sorted((r1, r2))
    return SolutionSet("solved", ({name: lo}, {name: hi}))


def solve(ast: EquationList) -> SolutionSet:
    """Solve exactly where possible; see module docstring for the fragment."""
    try:
        polys = [_padd(_to_poly(eq.lhs), _pneg(_to_poly(eq.rhs))) for eq in ast.equations]
    except _NonPolynomial:
        return UNSUPPORTED
    names = sorted(
        {VARIABLES[i] for p in polys for k in p for i in range(3) if k[i]},
        key=VARIABLES.index,
    )
    degree = max((_degree(p) for p in polys), default=0)
    if degree <= 1:
        if not names:
            return SolutionSet("solved", ({},)) if all(not p for p in polys) else NO_SOLUTION
        return _solve_linear(polys, names)
    if degree == 2 and len(polys) == 1 and len(names) == 1:
        return _solve_quadratic(polys[0], names[0])
    return UNSUPPORTED


# ---------------------------------------------------------------------------
# answer checking and reward
# ---------------------------------------------------------------------------


def _close(a: NumberLike, b: NumberLike) -> bool:
    return abs(float(a) - float(b)) <= ANSWER_REL_TOL * max(1.0, abs(float(b)))


def check_answer(sol: SolutionSet, gold: list) -> bool:
    """Multiset comparison of solution values against key answers, each pair
    within |a-b| <= 1e-4 * max(1, |b|). Unsolved statuses are always wrong."""
    if sol.status != "solved":
        return False
    values = sol.values()
    if len(values) != len(gold):
        return False
    return any(
        all(_close(v, g) for v, g in zip(perm, gold))
        for perm in itertools.permutations(values)
    )


def reward(template_tokens, mapping, gold: list) -> int:
    """1 iff substitute -> parse -> solve -> check_answer all succeed, else 0.

    Total on every token sequence: ill-formed output, unknown symbols,
    unsupported systems, and wrong answers all map to 0.
    """
    from .numbering import UnknownSymbolError, substitute

    if not gold:
        return 0
    try:
        text = substitute(template_tokens, mapping)
    except UnknownSymbolError:
        return 0
    try:
        ast = parse(text)
    except ParseError:
        return 0
    return 1 if check_answer(solve(ast), gold) else 0
