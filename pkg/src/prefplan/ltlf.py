"""LTLf over finite traces: direct evaluation and translation to DFAs.

The DFA is built by formula progression. A progression state is a Boolean
function over the *closure variables* of the formula (atomic propositions,
Next- and Until-rooted subformulas, and a special ``end`` variable that
holds exactly on the empty suffix), stored as a truth table so that two
states are equal iff their tables are identical.
"""

from __future__ import annotations

import itertools
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from prefplan.formula import (
    ALWAYS, AND, ATOM, EVENTUALLY, FALSE, NEXT, NOT, OR, TRUE, UNTIL,
    Formula, TOP,
)

MAX_CLOSURE = 16
MAX_STATES = 100_000


class ClosureOverflowError(ValueError):
    pass


class StateLimitError(RuntimeError):
    pass


class NotLtlfError(ValueError):
    pass


# ---------------------------------------------------------------- alphabet

def symbols(atoms: Sequence[str]) -> list:
    """All subsets of ``atoms``; the index of a subset is its bitmask."""
    return [frozenset(a for j, a in enumerate(atoms) if mask >> j & 1)
            for mask in range(1 << len(atoms))]


def symbol_index(atoms: Sequence[str], symbol: Iterable[str]) -> int:
    pos = {a: j for j, a in enumerate(atoms)}
    mask = 0
    for name in symbol:
        try:
            mask |= 1 << pos[name]
        except KeyError:
            raise ValueError(f"atom {name!r} not in alphabet {list(atoms)}") from None
    return mask


def all_traces(atoms: Sequence[str], max_len: int, min_len: int = 1):
    """Every trace over 2^atoms with length in [min_len, max_len]."""
    alphabet = symbols(atoms)
    for n in range(min_len, max_len + 1):
        yield from itertools.product(alphabet, repeat=n)


# ---------------------------------------------------------------- semantics

def ltlf_holds(trace: Sequence[frozenset], f: Formula) -> bool:
    """Evaluate ``f`` at position 0 of a non-empty finite trace.

    Next is strong: ``X p`` is false at the last position.
    """
    if not f.is_ltlf():
        raise NotLtlfError("preference connective in LTLf evaluation")
    if len(trace) == 0:
        raise ValueError("empty trace")
    return _positions(f, tuple(trace), {})[0]


def _positions(f: Formula, trace: tuple, memo: dict) -> list:
    hit = memo.get(f)
    if hit is not None:
        return hit
    n = len(trace)
    op = f.op
    if op == ATOM:
        out = [f.name in s for s in trace]
    elif op == TRUE:
        out = [True] * n
    elif op == FALSE:
        out = [False] * n
    elif op == NOT:
        out = [not x for x in _positions(f.args[0], trace, memo)]
    elif op in (AND, OR):
        l = _positions(f.args[0], trace, memo)
        r = _positions(f.args[1], trace, memo)
        out = [x and y for x, y in zip(l, r)] if op == AND else [x or y for x, y in zip(l, r)]
    elif op == NEXT:
        c = _positions(f.args[0], trace, memo)
        out = c[1:] + [False]
    elif op == UNTIL:
        l = _positions(f.args[0], trace, memo)
        r = _positions(f.args[1], trace, memo)
        out = [False] * n
        nxt = False
        for i in range(n - 1, -1, -1):
            nxt = out[i] = r[i] or (l[i] and nxt)
    elif op == EVENTUALLY:
        c = _positions(f.args[0], trace, memo)
        out = [False] * n
        acc = False
        for i in range(n - 1, -1, -1):
            acc = out[i] = c[i] or acc
    elif op == ALWAYS:
        c = _positions(f.args[0], trace, memo)
        out = [False] * n
        acc = True
        for i in range(n - 1, -1, -1):
            acc = out[i] = c[i] and acc
    else:
        raise NotLtlfError(f"unexpected operator {op!r}")
    memo[f] = out
    return out


def desugar(f: Formula) -> Formula:
    """Rewrite F and G into Until and negation."""
    if f.op == EVENTUALLY:
        return Formula(UNTIL, (TOP, desugar(f.args[0])))
    if f.op == ALWAYS:
        inner = Formula(NOT, (desugar(f.args[0]),))
        return Formula(NOT, (Formula(UNTIL, (TOP, inner)),))
    if not f.args:
        return f
    return Formula(f.op, tuple(desugar(a) for a in f.args))


# ---------------------------------------------------------------- progression

END = Formula("end")


class Closure:
    """Closure variables of one LTLf formula over a fixed atom list.

    Variable 0 is ``end``; the rest follow in post-order, so every
    variable's subformulas precede it.
    """

    def __init__(self, f: Formula, atoms: Sequence[str], max_vars: int = MAX_CLOSURE):
        if not f.is_ltlf():
            raise NotLtlfError("preference connective in LTLf formula")
        missing = f.atoms() - set(atoms)
        if missing:
            raise ValueError(f"atoms {sorted(missing)} not in alphabet {list(atoms)}")
        self.formula = f
        self.atoms = tuple(atoms)
        self.core = desugar(f)
        variables = [END]
        seen = {END}
        for node in _postorder(self.core):
            if node.op in (ATOM, NEXT, UNTIL) and node not in seen:
                seen.add(node)
                variables.append(node)
        if len(variables) > max_vars:
            raise ClosureOverflowError(
                f"closure has {len(variables)} variables, limit is {max_vars}")
        self.variables = tuple(variables)
        self.index = {v: i for i, v in enumerate(variables)}
        size = 1 << len(variables)
        rows = np.arange(size, dtype=np.int64)
        self._proj = [((rows >> i) & 1).astype(bool) for i in range(len(variables))]
        self._ones = np.ones(size, dtype=bool)
        self._zeros = np.zeros(size, dtype=bool)
        self._tables = {}
        self._subst = {}

    def table(self, e: Formula) -> np.ndarray:
        """Truth table of a (desugared) Boolean combination of closure variables."""
        hit = self._tables.get(e)
        if hit is not None:
            return hit
        op = e.op
        if e in self.index:
            out = self._proj[self.index[e]]
        elif op == TRUE:
            out = self._ones
        elif op == FALSE:
            out = self._zeros
        elif op == NOT:
            out = ~self.table(e.args[0])
        elif op == AND:
            out = self.table(e.args[0]) & self.table(e.args[1])
        elif op == OR:
            out = self.table(e.args[0]) | self.table(e.args[1])
        else:
            raise ValueError(f"not a closure expression: {e}")
        self._tables[e] = out
        return out

    def _progressed(self, e: Formula, sigma: frozenset, memo: dict) -> np.ndarray:
        hit = memo.get(e)
        if hit is not None:
            return hit
        op = e.op
        if e is END or e == END:
            out = self._zeros
        elif op == ATOM:
            out = self._ones if e.name in sigma else self._zeros
        elif op == TRUE:
            out = self._ones
        elif op == FALSE:
            out = self._zeros
        elif op == NOT:
            out = ~self._progressed(e.args[0], sigma, memo)
        elif op == AND:
            out = self._progressed(e.args[0], sigma, memo) & self._progressed(e.args[1], sigma, memo)
        elif op == OR:
            out = self._progressed(e.args[0], sigma, memo) | self._progressed(e.args[1], sigma, memo)
        elif op == NEXT:
            out = self.table(e.args[0]) & ~self._proj[0]
        elif op == UNTIL:
            left, right = e.args
            out = (self._progressed(right, sigma, memo)
                   | (self._progressed(left, sigma, memo) & self._proj[self.index[e]]))
        else:
            raise ValueError(f"unexpected operator {op!r}")
        memo[e] = out
        return out

    def substitution(self, symbol_mask: int) -> np.ndarray:
        """Row map for one symbol: progressed table = table[row_map]."""
        hit = self._subst.get(symbol_mask)
        if hit is not None:
            return hit
        sigma = frozenset(a for j, a in enumerate(self.atoms) if symbol_mask >> j & 1)
        memo = {}
        rows = np.zeros(len(self._ones), dtype=np.int64)
        for i, v in enumerate(self.variables):
            rows |= self._progressed(v, sigma, memo).astype(np.int64) << i
        self._subst[symbol_mask] = rows
        return rows

    def state(self, f: Formula | None = None) -> "StateFormula":
        """State for an LTLf formula written over this closure (default: the root)."""
        e = self.core if f is None else desugar(f)
        return StateFormula(self, self.table(e))


def _postorder(f: Formula):
    for a in f.args:
        yield from _postorder(a)
    yield f


class StateFormula:
    """A residual obligation: canonical truth table over closure variables."""

    __slots__ = ("closure", "table", "key")

    def __init__(self, closure: Closure, table: np.ndarray):
        self.closure = closure
        self.table = table
        self.key = np.packbits(table).tobytes()

    def __eq__(self, other):
        return (isinstance(other, StateFormula) and self.closure is other.closure
                and self.key == other.key)

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"StateFormula({self.closure.formula}, {self.key.hex()[:16]})"


def progress(s: StateFormula, symbol) -> StateFormula:
    """Obligation on the suffix after reading ``symbol`` (a set of atoms or a bitmask)."""
    c = s.closure
    mask = symbol if isinstance(symbol, int) else symbol_index(c.atoms, symbol)
    return StateFormula(c, s.table[c.substitution(mask)])


def eval_empty(s: StateFormula) -> bool:
    """Does the empty continuation meet the obligation? Only ``end`` is true there."""
    return bool(s.table[1])


# ---------------------------------------------------------------- DFA

@dataclass(frozen=True)
class Dfa:
    """Complete DFA over 2^atoms; ``delta[q][mask]`` is the successor of ``q``."""

    atoms: tuple
    delta: tuple
    initial: int
    accepting: frozenset

    @property
    def num_states(self) -> int:
        return len(self.delta)

    def run(self, trace: Iterable[frozenset], start: int | None = None) -> int:
        q = self.initial if start is None else start
        for s in trace:
            q = self.delta[q][symbol_index(self.atoms, s)]
        return q

    def accepts(self, trace: Iterable[frozenset]) -> bool:
        return self.run(trace) in self.accepting

    def to_json(self) -> dict:
        alphabet = symbols(self.atoms)
        return {
            "atoms": list(self.atoms),
            "states": self.num_states,
            "initial": self.initial,
            "accepting": sorted(self.accepting),
            "transitions": [
                {"from": q, "symbol": sorted(alphabet[m]), "to": row[m]}
                for q, row in enumerate(self.delta) for m in range(len(row))
            ],
        }


def build_dfa(f: Formula, atoms: Sequence[str], max_states: int = MAX_STATES,
              max_closure: int = MAX_CLOSURE) -> Dfa:
    """Explore progression states breadth-first from ``f``."""
    closure = Closure(f, atoms, max_closure)
    nsym = 1 << len(closure.atoms)
    start = closure.state()
    ids = {start: 0}
    order = [start]
    delta = []
    queue = deque([start])
    while queue:
        s = queue.popleft()
        row = []
        for m in range(nsym):
            t = progress(s, m)
            q = ids.get(t)
            if q is None:
                if len(order) >= max_states:
                    raise StateLimitError(f"DFA exceeds {max_states} states")
                q = ids[t] = len(order)
                order.append(t)
                queue.append(t)
            row.append(q)
        delta.append(tuple(row))
    accepting = frozenset(i for i, s in enumerate(order) if eval_empty(s))
    return Dfa(tuple(closure.atoms), tuple(delta), 0, accepting)


def minimize(d: Dfa) -> Dfa:
    """Hopcroft partition refinement; states renumbered breadth-first from the initial state."""
    nsym = 1 << len(d.atoms)
    reach = _reachable(d)
    states = sorted(reach)
    inverse = [defaultdict(list) for _ in range(nsym)]
    for q in states:
        for m in range(nsym):
            inverse[m][d.delta[q][m]].append(q)

    acc = {q for q in states if q in d.accepting}
    rej = reach - acc
    blocks = [b for b in (acc, rej) if b]
    block_of = {}
    for i, b in enumerate(blocks):
        for q in b:
            block_of[q] = i
    work = deque(range(len(blocks)))
    pending = set(work)
    while work:
        b = work.popleft()
        pending.discard(b)
        splitter = list(blocks[b])
        for m in range(nsym):
            pre = set()
            for q in splitter:
                pre.update(inverse[m][q])
            if not pre:
                continue
            touched = defaultdict(set)
            for q in pre:
                touched[block_of[q]].add(q)
            for y, inside in touched.items():
                if len(inside) == len(blocks[y]):
                    continue
                outside = blocks[y] - inside
                blocks[y] = inside
                z = len(blocks)
                blocks.append(outside)
                for q in outside:
                    block_of[q] = z
                if y in pending:
                    work.append(z)
                    pending.add(z)
                else:
                    smaller = y if len(inside) <= len(outside) else z
                    work.append(smaller)
                    pending.add(smaller)

    # BFS renumbering of the quotient
    rep = {}
    for q in states:
        rep.setdefault(block_of[q], q)
    new_id = {block_of[d.initial]: 0}
    queue = deque([block_of[d.initial]])
    delta = []
    while queue:
        b = queue.popleft()
        q = rep[b]
        row = []
        for m in range(nsym):
            t = block_of[d.delta[q][m]]
            if t not in new_id:
                new_id[t] = len(new_id)
                queue.append(t)
            row.append(new_id[t])
        delta.append(tuple(row))
    accepting = frozenset(new_id[b] for b in new_id if rep[b] in d.accepting)
    return Dfa(d.atoms, tuple(delta), 0, accepting)


def _reachable(d: Dfa) -> set:
    seen = {d.initial}
    queue = deque([d.initial])
    while queue:
        q = queue.popleft()
        for t in d.delta[q]:
            if t not in seen:
                seen.add(t)
                queue.append(t)
    return seen
