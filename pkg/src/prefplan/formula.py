"""Preference formulas over LTLf goals: syntax tree, parser and scoring.

Concrete syntax, loosest binding first::

    pref    := ordered ( "&" ordered )*          prioritized conjunction, left
    ordered := disj ( "*>" ordered )?            ordered disjunction, right
    disj    := conj ( "||" conj )*
    conj    := until ( "&&" until )*
    until   := unary ( "U" until )?
    unary   := ( "!" | "X" | "F" | "G" ) unary | primary
    primary := atom | "true" | "false" | "(" pref ")"
    atom    := [a-z][a-z0-9_]*

Preference connectives may only appear above LTLf connectives.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

ATOM = "atom"
TRUE = "true"
FALSE = "false"
NOT = "not"
AND = "and"
OR = "or"
NEXT = "next"
UNTIL = "until"
EVENTUALLY = "eventually"
ALWAYS = "always"
ORDERED_OR = "ordered_or"
PRIOR_AND = "prior_and"

LTLF_OPS = frozenset({ATOM, TRUE, FALSE, NOT, AND, OR, NEXT, UNTIL, EVENTUALLY, ALWAYS})
PREFERENCE_OPS = frozenset({ORDERED_OR, PRIOR_AND})

ATOM_RE = re.compile(r"[a-z][a-z0-9_]*\Z")

# A degree is a positive int, or None for "not satisfied".
Degree = Optional[int]
Symbol = frozenset
Trace = tuple


class FormulaSyntaxError(ValueError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


class FormulaValidationError(ValueError):
    pass


class TraceSyntaxError(ValueError):
    pass


@dataclass(frozen=True)
class Formula:
    """Immutable syntax tree node. ``name`` is set only for atoms."""

    op: str
    args: tuple = ()
    name: Optional[str] = None

    def atoms(self) -> frozenset:
        if self.op == ATOM:
            return frozenset({self.name})
        out = frozenset()
        for a in self.args:
            out |= a.atoms()
        return out

    def is_ltlf(self) -> bool:
        return self.op in LTLF_OPS and all(a.is_ltlf() for a in self.args)

    def __str__(self) -> str:
        return _render(self)


def atom(name: str) -> Formula:
    return Formula(ATOM, (), name)


TOP = Formula(TRUE)
BOTTOM = Formula(FALSE)

_UNARY_TOKENS = {"!": NOT, "X": NEXT, "F": EVENTUALLY, "G": ALWAYS}
_BINARY_TOKENS = {AND: "&&", OR: "||", UNTIL: "U", ORDERED_OR: "*>", PRIOR_AND: "&"}
_UNARY_TEXT = {v: k for k, v in _UNARY_TOKENS.items()}


def _render(f: Formula) -> str:
    if f.op == ATOM:
        return f.name
    if f.op in (TRUE, FALSE):
        return f.op
    if f.op in _UNARY_TEXT:
        (child,) = f.args
        inner = _render(child)
        if child.op in _BINARY_TOKENS:
            inner = f"({inner})"
        sep = "" if f.op == NOT else " "
        return f"{_UNARY_TEXT[f.op]}{sep}{inner}"
    left, right = f.args
    parts = []
    for child in (left, right):
        text = _render(child)
        if child.op in _BINARY_TOKENS:
            text = f"({text})"
        parts.append(text)
    return f" {_BINARY_TOKENS[f.op]} ".join(parts)


# ---------------------------------------------------------------- parsing

_TOKEN_RE = re.compile(r"\s*(?:(&&|\|\||\*>|&|!|\(|\))|([A-Za-z_][A-Za-z0-9_]*)|(\S))")


def _tokenize(text: str) -> list:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:  # trailing whitespace
            break
        punct, word, bad = m.groups()
        start = m.start(1) if punct else m.start(2) if word else m.start(3)
        if bad is not None:
            raise FormulaSyntaxError(f"unexpected character {bad!r}", start)
        if punct is not None:
            tokens.append((punct, punct, start))
        elif word in ("X", "F", "G", "U"):
            tokens.append((word, word, start))
        elif word in ("true", "false"):
            tokens.append(("const", word, start))
        elif ATOM_RE.match(word):
            tokens.append(("atom", word, start))
        else:
            raise FormulaSyntaxError(f"malformed atom {word!r}", start)
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> str:
        return self.tokens[self.i][0]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str):
        tok = self.take()
        if tok[0] != kind:
            what = "end of input" if tok[0] == "eof" else repr(tok[1])
            raise FormulaSyntaxError(f"expected {kind!r}, found {what}", tok[2])
        return tok

    def pref(self) -> Formula:
        node = self.ordered()
        while self.peek() == "&":
            self.take()
            node = Formula(PRIOR_AND, (node, self.ordered()))
        return node

    def ordered(self) -> Formula:
        node = self.disj()
        if self.peek() == "*>":
            self.take()
            node = Formula(ORDERED_OR, (node, self.ordered()))
        return node

    def disj(self) -> Formula:
        node = self.conj()
        while self.peek() == "||":
            self.take()
            node = Formula(OR, (node, self.conj()))
        return node

    def conj(self) -> Formula:
        node = self.until()
        while self.peek() == "&&":
            self.take()
            node = Formula(AND, (node, self.until()))
        return node

    def until(self) -> Formula:
        node = self.unary()
        if self.peek() == "U":
            self.take()
            node = Formula(UNTIL, (node, self.until()))
        return node

    def unary(self) -> Formula:
        kind = self.peek()
        if kind in _UNARY_TOKENS:
            self.take()
            return Formula(_UNARY_TOKENS[kind], (self.unary(),))
        return self.primary()

    def primary(self) -> Formula:
        kind, value, pos = self.take()
        if kind == "atom":
            return atom(value)
        if kind == "const":
            return TOP if value == "true" else BOTTOM
        if kind == "(":
            node = self.pref()
            self.expect(")")
            return node
        what = "end of input" if kind == "eof" else repr(value)
        raise FormulaSyntaxError(f"unexpected {what}", pos)


def parse_formula(text: str) -> Formula:
    """Parse and validate a preference formula.

    >>> str(parse_formula("F b *> (F a || F c)"))
    'F b *> (F a || F c)'
    """
    if not text or not text.strip():
        raise FormulaSyntaxError("empty formula", 0)
    parser = _Parser(text)
    node = parser.pref()
    kind, value, pos = parser.tokens[parser.i]
    if kind != "eof":
        raise FormulaSyntaxError(f"unexpected {value!r}", pos)
    validate_formula(node)
    return node


def validate_formula(f: Formula) -> None:
    if f.op in PREFERENCE_OPS:
        for a in f.args:
            validate_formula(a)
    elif not f.is_ltlf():
        raise FormulaValidationError("preference operator under temporal/Boolean operator")


def parse_trace(text: str, atoms: Optional[Iterable[str]] = None) -> tuple:
    """Parse ``"b;a"`` / ``"-;-;a"`` into a tuple of frozensets (``-`` is the empty set)."""
    if not text or not text.strip():
        raise TraceSyntaxError("empty trace")
    universe = None if atoms is None else frozenset(atoms)
    symbols = []
    for seg in text.split(";"):
        seg = seg.strip()
        if seg == "-":
            symbols.append(frozenset())
            continue
        names = [n.strip() for n in seg.split(",")]
        for n in names:
            if not ATOM_RE.match(n):
                raise TraceSyntaxError(f"malformed atom {n!r} in trace")
            if universe is not None and n not in universe:
                raise TraceSyntaxError(f"atom {n!r} not in declared atoms")
        symbols.append(frozenset(names))
    return tuple(symbols)


def format_trace(trace: Iterable[frozenset]) -> str:
    return ";".join(",".join(sorted(s)) if s else "-" for s in trace)


# ---------------------------------------------------------------- semantics

def optionality(f: Formula) -> int:
    if f.op == ORDERED_OR:
        return optionality(f.args[0]) + optionality(f.args[1])
    if f.op == PRIOR_AND:
        return optionality(f.args[0]) * optionality(f.args[1])
    return 1


def satisfaction_degree_oracle(trace, f: Formula) -> Degree:
    """Degree of ``trace`` w.r.t. ``f`` straight from the recursive definition."""
    from prefplan.ltlf import ltlf_holds

    if f.op == ORDERED_OR:
        left, right = f.args
        k = satisfaction_degree_oracle(trace, left)
        if k is not None:
            return k
        n = satisfaction_degree_oracle(trace, right)
        return None if n is None else n + optionality(left)
    if f.op == PRIOR_AND:
        left, right = f.args
        i = satisfaction_degree_oracle(trace, left)
        j = satisfaction_degree_oracle(trace, right)
        if i is None or j is None:
            return None
        return optionality(right) * (i - 1) + j
    return 1 if ltlf_holds(trace, f) else None


def dissatisfaction_score(degree: Degree, opt: int) -> Fraction:
    if opt < 1:
        raise ValueError(f"optionality must be positive, got {opt}")
    if degree is None:
        return Fraction(1)
    if not 1 <= degree <= opt:
        raise ValueError(f"degree {degree} outside 1..{opt}")
    return Fraction(degree, opt + 1)


class Preference(enum.Enum):
    BETTER = "better"
    EQUAL = "equal"
    WORSE = "worse"


def score(trace, f: Formula) -> Fraction:
    return dissatisfaction_score(satisfaction_degree_oracle(trace, f), optionality(f))


def prefer(w, w2, f: Formula) -> Preference:
    """Compare two traces under ``f``; a lower dissatisfaction score is better."""
    d1, d2 = score(w, f), score(w2, f)
    if d1 < d2:
        return Preference.BETTER
    if d1 > d2:
        return Preference.WORSE
    return Preference.EQUAL
