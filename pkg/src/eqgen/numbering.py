"""Number extraction, symbol assignment, and text/equation alignment.

Numbers found in problem text are replaced by placeholder symbols so the
model never sees concrete values. Three kinds are distinguished, with one
global index counter running over text positions:

    M_i  negative numbers
    F_i  fractions strictly between 0 and 1
    N_i  everything else

Alignment rewrites a concrete gold equation list into a template over these
symbols. Because surface forms vary ("3 1/3" in text may appear as 3.33 or
10/3 in the equation), each extracted number carries a set of value
variants and the aligner searches over all of them, assigning symbols to
equal values in order of occurrence. A small whitelist of constants
(0..10 and 100) may stay literal, covering derivation constants that never
appear in the text.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from . import equations
from .equations import ParseError, Token

WHITELIST = frozenset(Fraction(c) for c in (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 100))
WHITELIST_TOKENS = tuple(str(c) for c in (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 100))


class UnalignableError(Exception):
    """Some equation literal matches no text-number variant and is not whitelisted."""


class UnknownSymbolError(KeyError):
    """A template references a symbol that the mapping does not define."""


class Kind(enum.Enum):
    NEGATIVE = "negative"
    UNIT_FRACTION = "unit_fraction"
    OTHER = "other"


_KIND_PREFIX = {Kind.NEGATIVE: "M", Kind.UNIT_FRACTION: "F", Kind.OTHER: "N"}

_SYMBOL_RE = re.compile(r"^([NMF])_(\d+)$")


def is_symbol(token: str) -> bool:
    return _SYMBOL_RE.match(token) is not None


@dataclass(frozen=True)
class ExtractedNumber:
    start: int
    end: int
    surface: str
    value: Fraction
    kind: Kind
    index: int  # 1-based global position in text
    mixed_whole: Fraction | None = None
    mixed_frac: Fraction | None = None
    percent_raw: Fraction | None = None

    @property
    def symbol(self) -> str:
        return f"{_KIND_PREFIX[self.kind]}_{self.index}"


def _kind_of(value: Fraction) -> Kind:
    if value < 0:
        return Kind.NEGATIVE
    if 0 < value < 1:
        return Kind.UNIT_FRACTION
    return Kind.OTHER


_NUMBER_RE = re.compile(
    r"(?P<mixed>\d+ +\d+/\d+)"
    r"|(?P<frac>\d+/\d+)"
    r"|(?P<comma>\d{1,3}(?:,\d{3})+(?:\.\d+)?)"
    r"|(?P<dec>\d*\.\d+)"
    r"|(?P<int>\d+)"
)

_SIGN_BOUNDARY = " \t\n([{=,;:"


def extract_numbers(text: str) -> list[ExtractedNumber]:
    """Left-to-right, non-overlapping, longest-match number extraction.

    Recognizes integers, decimals, thousands separators, signed numbers,
    percents ("5%" -> 1/20), simple fractions ("1/3"), and mixed numbers
    ("3 1/3" -> 10/3).
    """
    out: list[ExtractedNumber] = []
    for m in _NUMBER_RE.finditer(text):
        start, end = m.span()
        surface = m.group(0)
        mixed_whole = mixed_frac = percent_raw = None
        try:
            if m.group("mixed") is not None:
                whole, frac = surface.split(None, 1)
                num, den = frac.split("/")
                mixed_whole = Fraction(whole)
                mixed_frac = Fraction(int(num), int(den))
                value = mixed_whole + mixed_frac
            elif m.group("frac") is not None:
                num, den = surface.split("/")
                value = Fraction(int(num), int(den))
            elif m.group("comma") is not None:
                value = Fraction(surface.replace(",", ""))
            elif m.group("dec") is not None:
                value = Fraction(surface if surface[0] != "." else "0" + surface)
            else:
                value = Fraction(surface)
        except ZeroDivisionError:
            continue
        # leading minus counts as a sign only at a natural boundary
        if start > 0 and text[start - 1] == "-":
            before = text[start - 2] if start >= 2 else " "
            if before in _SIGN_BOUNDARY:
                value = -value
                start -= 1
                surface = text[start:end]
        # trailing percent sign, optionally separated by one space
        rest = text[end : end + 2]
        if rest[:1] == "%":
            percent_raw = value
            value = value / 100
            end += 1
            surface = text[start:end]
        elif rest == " %":
            percent_raw = value
            value = value / 100
            end += 2
            surface = text[start:end]
        out.append(
            ExtractedNumber(
                start=start,
                end=end,
                surface=surface,
                value=value,
                kind=_kind_of(value),
                index=len(out) + 1,
                mixed_whole=mixed_whole,
                mixed_frac=mixed_frac,
                percent_raw=percent_raw,
            )
        )
    return out


def _round_half_up(value: Fraction, places: int) -> Fraction:
    scale = Fraction(10) ** places
    scaled = value * scale
    if scaled >= 0:
        return Fraction((scaled.numerator * 2 + scaled.denominator) // (scaled.denominator * 2), 1) / scale
    return -_round_half_up(-value, places)


def _truncate(value: Fraction, places: int) -> Fraction:
    scale = Fraction(10) ** places
    scaled = value * scale
    whole = abs(scaled.numerator) // scaled.denominator
    return Fraction(whole if scaled >= 0 else -whole, 1) / scale


def variants(n: ExtractedNumber) -> set[Fraction]:
    """All values the same surface form may take in a gold equation."""
    vals = {n.value}
    if n.mixed_whole is not None:
        vals.add(n.mixed_whole)
        vals.add(n.mixed_frac)
    if n.percent_raw is not None:
        vals.add(n.percent_raw)
    for v in list(vals):
        if v.denominator != 1:
            for places in range(1, 5):
                vals.add(_truncate(v, places))
                vals.add(_round_half_up(v, places))
    return vals


@dataclass
class NumberMapping:
    """Ordered extracted numbers plus the symbol -> value assignment."""

    numbers: list[ExtractedNumber]
    by_symbol: dict[str, Fraction] = field(init=False)

    def __post_init__(self):
        self.by_symbol = {n.symbol: n.value for n in self.numbers}

    def value_of(self, symbol: str) -> Fraction:
        try:
            return self.by_symbol[symbol]
        except KeyError:
            raise UnknownSymbolError(symbol) from None

    def __len__(self) -> int:
        return len(self.numbers)


@dataclass(frozen=True)
class EquationTemplate:
    """Gold equations with literals replaced by number-token symbols."""

    tokens: tuple[str, ...]

    @property
    def text(self) -> str:
        return "".join(self.tokens)


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------

# candidate priorities: lower wins
_P_CANONICAL = 0
_P_VARIANT = 1
_P_WHITELIST = 2
_P_REUSE_CANONICAL = 3
_P_REUSE_VARIANT = 4


@dataclass(frozen=True)
class _Reading:
    """One way to interpret a literal occurrence in the token stream."""

    value: Fraction
    first: int  # first token index covered (minus sign when absorbed)
    last: int  # last token index covered (fraction denominator when composite)
    anchor: int  # index of the NUMBER token that triggered the reading


def _is_unary_minus(tokens: list[Token], i: int) -> bool:
    if i < 0 or tokens[i].kind != "OP" or tokens[i].text != "-":
        return False
    if i == 0:
        return True
    prev = tokens[i - 1]
    return prev.kind in ("OP", "LPAREN", "EQ", "SEMI")


def _readings(tokens: list[Token], t: int) -> list[_Reading]:
    """Plain value, sign-absorbed, literal fraction a/b, and signed fraction."""
    v = tokens[t].value
    out = [_Reading(v, t, t, t)]
    composite = None
    if (
        t + 2 < len(tokens)
        and tokens[t + 1].kind == "OP"
        and tokens[t + 1].text == "/"
        and tokens[t + 2].kind == "NUM"
        and tokens[t + 2].value != 0
        and not (t + 3 < len(tokens) and tokens[t + 3].kind == "OP" and tokens[t + 3].text == "^")
        and not (t > 0 and tokens[t - 1].kind == "OP" and tokens[t - 1].text == "^")
    ):
        composite = v / tokens[t + 2].value
        out.append(_Reading(composite, t, t + 2, t))
    if _is_unary_minus(tokens, t - 1):
        out.append(_Reading(-v, t - 1, t, t))
        if composite is not None:
            out.append(_Reading(-composite, t - 1, t + 2, t))
    return out


def align(numbers: list[ExtractedNumber], gold_equations: str) -> EquationTemplate:
    """Rewrite concrete gold equations into a symbol template.

    Exact backtracking over (equation literal -> text number variant)
    assignments: canonical values are preferred over variants, ties break
    toward the lowest unused text index, whitelisted constants may stay
    literal, and re-using an already bound number is a last resort.
    Raises UnalignableError when no assignment covers every literal.
    """
    try:
        equations.parse(gold_equations)
    except ParseError as e:
        raise UnalignableError(f"gold equations do not parse: {e}") from e
    tokens = equations.tokenize(gold_equations)
    variant_sets = {n.index: variants(n) for n in numbers}
    by_index = {n.index: n for n in numbers}

    def candidates(t: int, used: set[int]) -> list[tuple[tuple, _Reading, int | None]]:
        found: list[tuple[tuple, _Reading, int | None]] = []
        for reading in _readings(tokens, t):
            for idx, vset in variant_sets.items():
                if reading.value not in vset:
                    continue
                canonical = reading.value == by_index[idx].value
                if idx not in used:
                    prio = _P_CANONICAL if canonical else _P_VARIANT
                else:
                    prio = _P_REUSE_CANONICAL if canonical else _P_REUSE_VARIANT
                found.append(((prio, idx), reading, idx))
            if reading.first == reading.last and reading.value in WHITELIST:
                found.append(((_P_WHITELIST, 0), reading, None))
        found.sort(key=lambda c: c[0])
        return found

    replacements: dict[int, tuple[_Reading, int | None]] = {}

    def search(t: int, used: set[int]) -> bool:
        while t < len(tokens) and tokens[t].kind != "NUM":
            t += 1
        if t >= len(tokens):
            return True
        for _, reading, idx in candidates(t, used):
            replacements[reading.anchor] = (reading, idx)
            if idx is not None and idx not in used:
                used.add(idx)
                if search(reading.last + 1, used):
                    return True
                used.discard(idx)
            else:
                if search(reading.last + 1, used):
                    return True
            del replacements[reading.anchor]
        return False

    if not search(0, set()):
        raise UnalignableError("no consistent literal-to-number assignment")

    spans = {r.first: (r, idx) for r, idx in replacements.values()}
    out: list[str] = []
    i = 0
    while i < len(tokens):
        if i in spans:
            reading, idx = spans[i]
            if idx is None:
                out.append(str(reading.value))
            else:
                out.append(by_index[idx].symbol)
            i = reading.last + 1
        else:
            out.append(tokens[i].text)
            i += 1
    return EquationTemplate(tuple(out))


def format_value(value: Fraction) -> str:
    """Literal form that parses back to the exact value; negative and
    non-integer values are parenthesized so they survive any context."""
    if value >= 0 and value.denominator == 1:
        return str(value)
    return f"({value})"


def substitute(template_tokens: Sequence[str] | EquationTemplate, mapping: NumberMapping) -> str:
    """Replace symbol tokens with their concrete values; inverse of align."""
    if isinstance(template_tokens, EquationTemplate):
        template_tokens = template_tokens.tokens
    out = []
    for tok in template_tokens:
        if is_symbol(tok):
            out.append(format_value(mapping.value_of(tok)))
        else:
            out.append(tok)
    return "".join(out)


_WORD_RE = re.compile(r"[a-z]+|[0-9]+|[^\sa-z0-9]")


def source_tokens(text: str, numbers: list[ExtractedNumber]) -> list[str]:
    """Lowercased word/punctuation tokens with number spans replaced by
    their symbols; this is the sequence fed to the encoder."""
    out: list[str] = []
    pos = 0
    for n in numbers:
        out.extend(_WORD_RE.findall(text[pos : n.start].lower()))
        out.append(n.symbol)
        pos = n.end
    out.extend(_WORD_RE.findall(text[pos:].lower()))
    return out
