"""Weighted DFAs for preference formulas.

Every automaton here has one implicit ``sink`` state (index ``num_states``)
entered on the end symbol. Ordinary transitions weigh 0; the only
positive weights sit on ``(q, END, sink)``, so a run's total weight is the
weight of its final end transition.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

from prefplan.formula import (
    ORDERED_OR, PRIOR_AND, Degree, Formula, optionality,
)
from prefplan.ltlf import Dfa, build_dfa, minimize, symbol_index, symbols

log = logging.getLogger(__name__)

END_SYMBOL = "⋉"


class AlphabetMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Wdfa:
    atoms: tuple
    delta: tuple        # delta[q][mask] for q < num_states
    initial: int
    end_weight: tuple   # weight of (q, END, sink)
    opt: int
    labels: tuple

    @property
    def num_states(self) -> int:
        return len(self.delta)

    @property
    def sink(self) -> int:
        return len(self.delta)

    def step(self, q: int, mask: int) -> int:
        return q if q == self.sink else self.delta[q][mask]

    def final_weight(self, q: int) -> int:
        return 0 if q == self.sink else self.end_weight[q]

    def run(self, trace) -> int:
        q = self.initial
        for s in trace:
            q = self.step(q, symbol_index(self.atoms, s))
        return q

    def to_json(self) -> dict:
        alphabet = symbols(self.atoms)
        transitions = []
        for q, row in enumerate(self.delta):
            for m, t in enumerate(row):
                transitions.append({"from": q, "symbol": sorted(alphabet[m]), "to": t, "weight": 0})
            transitions.append({"from": q, "symbol": "end", "to": self.sink,
                                "weight": self.end_weight[q]})
        return {
            "atoms": list(self.atoms),
            "states": self.num_states,
            "sink": self.sink,
            "initial": self.initial,
            "opt": self.opt,
            "labels": list(self.labels),
            "transitions": transitions,
        }


def lift(d: Dfa) -> Wdfa:
    weights = tuple(1 if q in d.accepting else 0 for q in range(d.num_states))
    return Wdfa(d.atoms, d.delta, d.initial, weights, 1,
                tuple(str(q) for q in range(d.num_states)))


def ordered_weight(w1: int, w2: int, opt1: int) -> int:
    if w1 > 0:
        return w1
    if w2 > 0:
        return w2 + opt1
    return 0


def prioritized_weight(w1: int, w2: int, opt2: int) -> int:
    if w1 > 0 and w2 > 0:
        return w2 + opt2 * (w1 - 1)
    return 0


def _product(a1: Wdfa, a2: Wdfa, weight: Callable[[int, int], int], opt: int) -> Wdfa:
    if a1.atoms != a2.atoms:
        raise AlphabetMismatchError(f"alphabets differ: {a1.atoms} vs {a2.atoms}")
    nsym = 1 << len(a1.atoms)
    start = (a1.initial, a2.initial)
    ids = {start: 0}
    order = [start]
    queue = deque([start])
    delta = []
    while queue:
        q1, q2 = queue.popleft()
        row = []
        for m in range(nsym):
            t = (a1.delta[q1][m], a2.delta[q2][m])
            i = ids.get(t)
            if i is None:
                i = ids[t] = len(order)
                order.append(t)
                queue.append(t)
            row.append(i)
        delta.append(tuple(row))
    weights = tuple(weight(a1.end_weight[q1], a2.end_weight[q2]) for q1, q2 in order)
    labels = tuple(f"({a1.labels[q1]},{a2.labels[q2]})" for q1, q2 in order)
    return Wdfa(a1.atoms, tuple(delta), 0, weights, opt, labels)


def ordered_disjunction(a1: Wdfa, a2: Wdfa) -> Wdfa:
    return _product(a1, a2, lambda w1, w2: ordered_weight(w1, w2, a1.opt), a1.opt + a2.opt)


def prioritized_conjunction(a1: Wdfa, a2: Wdfa) -> Wdfa:
    return _product(a1, a2, lambda w1, w2: prioritized_weight(w1, w2, a2.opt), a1.opt * a2.opt)


def compile_formula(f: Formula, atoms: Sequence[str], minimize_leaves: bool = True) -> Wdfa:
    """Build the WDFA of a preference formula by structural recursion."""
    atoms = tuple(atoms)
    if f.op == ORDERED_OR:
        return ordered_disjunction(compile_formula(f.args[0], atoms, minimize_leaves),
                                   compile_formula(f.args[1], atoms, minimize_leaves))
    if f.op == PRIOR_AND:
        return prioritized_conjunction(compile_formula(f.args[0], atoms, minimize_leaves),
                                       compile_formula(f.args[1], atoms, minimize_leaves))
    d = build_dfa(f, atoms)
    if minimize_leaves:
        d = minimize(d)
    a = lift(d)
    assert a.opt == optionality(f)
    return a


def run_weight(a: Wdfa, trace) -> int:
    """Total weight of the run on ``trace`` followed by the end symbol."""
    return a.final_weight(a.run(trace))


def degree_via_wdfa(a: Wdfa, trace) -> Degree:
    k = run_weight(a, trace)
    return k if k > 0 else None


def max_weight(a: Wdfa) -> int:
    return max(a.end_weight, default=0)


def _after_symbol(a: Wdfa) -> set:
    # states reachable by a non-empty word; traces are never empty
    seen = set(a.delta[a.initial])
    queue = deque(seen)
    while queue:
        q = queue.popleft()
        for t in a.delta[q]:
            if t not in seen:
                seen.add(t)
                queue.append(t)
    return seen


def max_trace_weight(a: Wdfa) -> int:
    """Largest degree any non-empty trace can reach.

    Differs from ``max_weight`` when the initial state's end weight (the
    empty word) exceeds everything reachable afterwards.
    """
    return max((a.end_weight[q] for q in _after_symbol(a)), default=0)


def is_empty(a: Wdfa) -> bool:
    """True when no non-empty trace ends on a positive-weight end transition."""
    return max_trace_weight(a) == 0


def _symbol_text(s: frozenset) -> str:
    return "{" + ",".join(sorted(s)) + "}"


def export_dot(a: Wdfa, name: str = "wdfa") -> str:
    """GraphViz text with one edge per (state, target); labels are ``symbols:weight``."""
    alphabet = symbols(a.atoms)
    out = [f"digraph {name} {{", "  rankdir=LR;", '  __start [shape=point, label=""];']
    for q in range(a.num_states):
        out.append(f'  q{q} [shape=circle, label="{a.labels[q]}"];')
    out.append('  sink [shape=doublecircle, label="sink"];')
    out.append(f"  __start -> q{a.initial};")
    for q in range(a.num_states):
        by_target = {}
        for m, t in enumerate(a.delta[q]):
            by_target.setdefault(t, []).append(_symbol_text(alphabet[m]))
        for t in sorted(by_target):
            label = ", ".join(sorted(by_target[t]))
            out.append(f'  q{q} -> q{t} [label="{label}:0"];')
        out.append(f'  q{q} -> sink [label="{END_SYMBOL}:{a.end_weight[q]}"];')
    out.append("}")
    return "\n".join(out) + "\n"
