"""Labeled MDPs with a terminating state, JSON I/O and the gridworld generator."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

from prefplan.formula import ATOM_RE

TERMINAL = "__end__"
STOP = "__stop__"
PROB_TOL = 1e-9

DIRECTIONS = {"N": (0, 1), "W": (-1, 0), "S": (0, -1), "E": (1, 0)}
LATERAL = {"N": ("W", "E"), "S": ("W", "E"), "W": ("N", "S"), "E": ("N", "S")}
_CELL_RE = re.compile(r"\((\d+),(\d+)\)\Z")


class MdpValidationError(ValueError):
    pass


@dataclass
class LabeledMdp:
    """Finite MDP; ``transitions[(s, a)]`` is a tuple of ``(successor, prob)`` sorted by successor.

    Models built by :func:`load_mdp` or :func:`gridworld` carry the
    terminating state ``TERMINAL`` (last state) and action ``STOP`` (last action).
    """

    atoms: tuple
    states: tuple
    initial: int
    actions: tuple
    labels: tuple
    transitions: dict
    terminal: Optional[int] = None
    _available: list = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        avail = [[] for _ in self.states]
        for (s, a) in self.transitions:
            avail[s].append(a)
        self._available = [sorted(x) for x in avail]

    @property
    def stop(self) -> Optional[int]:
        return self.actions.index(STOP) if STOP in self.actions else None

    def available(self, s: int) -> list:
        return self._available[s]

    def state_index(self, name: str) -> int:
        try:
            return self.states.index(name)
        except ValueError:
            raise KeyError(f"unknown state {name!r}") from None


def _with_termination(atoms, states, initial, actions, labels, transitions) -> LabeledMdp:
    states = tuple(states) + (TERMINAL,)
    actions = tuple(actions) + (STOP,)
    term, stop = len(states) - 1, len(actions) - 1
    transitions = dict(transitions)
    for s in range(len(states)):
        transitions[(s, stop)] = ((term, 1.0),)
    return LabeledMdp(tuple(atoms), states, initial, actions,
                      tuple(labels) + (frozenset(),), transitions, term)


def load_mdp(document) -> LabeledMdp:
    """Build a validated model from the MDP JSON schema (a dict or JSON text).

    The terminating state and action are synthesized; documents must not
    declare them.
    """
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    try:
        atoms = list(doc.get("atoms", []))
        states = list(doc["states"])
        initial_name = doc["initial"]
        actions = list(doc["actions"])
        label_doc = doc.get("labels", {})
        rows = doc.get("transitions", [])
    except (KeyError, AttributeError, TypeError) as e:
        raise MdpValidationError(f"malformed MDP document: {e}") from None

    for a in atoms:
        if not isinstance(a, str) or not ATOM_RE.match(a):
            raise MdpValidationError(f"malformed atom {a!r}")
    for name in (TERMINAL, STOP):
        if name in states or name in actions:
            raise MdpValidationError(f"{name!r} is reserved")
    for what, seq in (("state", states), ("action", actions), ("atom", atoms)):
        if len(set(seq)) != len(seq):
            raise MdpValidationError(f"duplicate {what} names")
    sidx = {n: i for i, n in enumerate(states)}
    aidx = {n: i for i, n in enumerate(actions)}
    if initial_name not in sidx:
        raise MdpValidationError(f"unknown initial state {initial_name!r}")

    labels = []
    for n in states:
        lab = label_doc.get(n, [])
        bad = set(lab) - set(atoms)
        if bad:
            raise MdpValidationError(f"state {n!r} labeled with unknown atoms {sorted(bad)}")
        labels.append(frozenset(lab))
    unknown = set(label_doc) - set(states)
    if unknown:
        raise MdpValidationError(f"labels for unknown states {sorted(unknown)}")

    acc = {}
    for row in rows:
        try:
            s, a, t, p = row["from"], row["action"], row["to"], float(row["prob"])
        except (KeyError, TypeError, ValueError) as e:
            raise MdpValidationError(f"malformed transition {row!r}: {e}") from None
        for kind, name, table in (("state", s, sidx), ("action", a, aidx), ("state", t, sidx)):
            if name not in table:
                raise MdpValidationError(f"unknown {kind} {name!r} in transition")
        succ = acc.setdefault((sidx[s], aidx[a]), {})
        if sidx[t] in succ:
            raise MdpValidationError(f"duplicate transition ({s}, {a}, {t})")
        if not 0.0 <= p <= 1.0:
            raise MdpValidationError(f"probability {p} out of range in ({s}, {a}, {t})")
        succ[sidx[t]] = p
    transitions = {}
    for (s, a), succ in acc.items():
        total = sum(succ.values())
        if abs(total - 1.0) > PROB_TOL:
            raise MdpValidationError(
                f"probabilities for (state={states[s]!r}, action={actions[a]!r}) sum to {total!r}")
        transitions[(s, a)] = tuple(sorted((t, p) for t, p in succ.items() if p > 0.0))

    m = _with_termination(atoms, states, sidx[initial_name], actions, labels, transitions)
    problems = validate(m)
    if problems:
        raise MdpValidationError("; ".join(problems))
    return m


def save_mdp(m: LabeledMdp) -> dict:
    """Inverse of :func:`load_mdp`; the synthesized terminator is left out."""
    user = [i for i, n in enumerate(m.states) if n != TERMINAL]
    return {
        "atoms": list(m.atoms),
        "states": [m.states[i] for i in user],
        "initial": m.states[m.initial],
        "actions": [a for a in m.actions if a != STOP],
        "labels": {m.states[i]: sorted(m.labels[i]) for i in user if m.labels[i]},
        "transitions": [
            {"from": m.states[s], "action": m.actions[a], "to": m.states[t], "prob": p}
            for (s, a), succ in sorted(m.transitions.items())
            if m.actions[a] != STOP
            for t, p in succ
        ],
    }


def validate(m: LabeledMdp) -> list:
    """Return a list of invariant violations (empty when the model is valid)."""
    out = []
    n = len(m.states)
    if not 0 <= m.initial < n:
        out.append(f"initial state index {m.initial} out of range")
    if len(m.labels) != n:
        out.append("labels do not cover all states")
    for s, lab in enumerate(m.labels):
        bad = set(lab) - set(m.atoms)
        if bad:
            out.append(f"state {m.states[s]!r} labeled with undeclared atoms {sorted(bad)}")
    for (s, a), succ in m.transitions.items():
        if not (0 <= s < n and 0 <= a < len(m.actions)):
            out.append(f"transition key ({s}, {a}) out of range")
            continue
        total = 0.0
        for t, p in succ:
            if not 0 <= t < n:
                out.append(f"successor index {t} out of range at ({m.states[s]!r}, {m.actions[a]!r})")
            if p < 0.0 or p > 1.0:
                out.append(f"probability {p} out of range at ({m.states[s]!r}, {m.actions[a]!r})")
            total += p
        if abs(total - 1.0) > PROB_TOL:
            out.append(f"probabilities for (state={m.states[s]!r}, action={m.actions[a]!r}) sum to {total!r}")

    term, stop = m.terminal, m.stop
    if term is None or not 0 <= term < n or m.states[term] != TERMINAL:
        out.append("missing terminating state")
        return out
    if stop is None:
        out.append("missing terminating action")
        return out
    if m.initial == term:
        out.append("initial state is the terminating state")
    if m.labels[term]:
        out.append("terminating state carries atom labels")
    for s in range(n):
        if m.transitions.get((s, stop)) != ((term, 1.0),):
            out.append(f"terminating action at {m.states[s]!r} does not reach the terminating state surely")
    for (s, a), succ in m.transitions.items():
        if a == stop:
            continue
        if s == term:
            out.append(f"ordinary action {m.actions[a]!r} available at the terminating state")
        elif any(t == term for t, _ in succ):
            out.append(f"ordinary action {m.actions[a]!r} at {m.states[s]!r} enters the terminating state")
    return out


# ---------------------------------------------------------------- gridworld

def cell_name(col: int, row: int) -> str:
    return f"({col},{row})"


def parse_cell(name: str) -> Optional[tuple]:
    m = _CELL_RE.match(name)
    return (int(m.group(1)), int(m.group(2))) if m else None


@dataclass
class GridConfig:
    """Gridworld parameters; cells are ``(col, row)``, 1-indexed from the bottom-left."""

    rows: int
    cols: int
    initial: tuple
    intended: float = 0.8
    slip: float = 0.1
    holes: list = field(default_factory=list)
    regions: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, document) -> "GridConfig":
        doc = json.loads(document) if isinstance(document, (str, bytes)) else document
        try:
            cfg = cls(
                rows=int(doc["rows"]),
                cols=int(doc["cols"]),
                initial=tuple(doc["initial"]),
                intended=float(doc.get("intended", 0.8)),
                slip=float(doc.get("slip", 0.1)),
                holes=[tuple(c) for c in doc.get("holes", [])],
                regions={k: [tuple(c) for c in v] for k, v in doc.get("regions", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as e:
            raise MdpValidationError(f"malformed grid config: {e}") from None
        cfg.check()
        return cfg

    def to_json(self) -> dict:
        return {
            "rows": self.rows, "cols": self.cols, "initial": list(self.initial),
            "intended": self.intended, "slip": self.slip,
            "holes": [list(c) for c in self.holes],
            "regions": {k: [list(c) for c in v] for k, v in sorted(self.regions.items())},
        }

    def in_range(self, cell) -> bool:
        c, r = cell
        return 1 <= c <= self.cols and 1 <= r <= self.rows

    def check(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise MdpValidationError("rows and cols must be positive")
        if abs(self.intended + 2 * self.slip - 1.0) > PROB_TOL or self.slip < 0 or self.intended < 0:
            raise MdpValidationError("intended + 2*slip must equal 1")
        cells = [self.initial, *self.holes] + [c for v in self.regions.values() for c in v]
        for c in cells:
            if len(c) != 2 or not self.in_range(c):
                raise MdpValidationError(f"cell {c} outside the {self.cols}x{self.rows} grid")
        for name, cs in self.regions.items():
            if not ATOM_RE.match(name):
                raise MdpValidationError(f"malformed atom {name!r}")
            overlap = set(cs) & set(self.holes)
            if overlap:
                raise MdpValidationError(f"region {name!r} overlaps holes at {sorted(overlap)}")


def gridworld(cfg: GridConfig) -> LabeledMdp:
    """Four-action slippery gridworld; moves into the wall leave the robot in place."""
    cfg.check()
    holes = set(map(tuple, cfg.holes))
    if tuple(cfg.initial) in holes:
        raise MdpValidationError(f"initial cell {tuple(cfg.initial)} is a hole")
    cells = [(c, r) for r in range(1, cfg.rows + 1) for c in range(1, cfg.cols + 1)]
    index = {cell: i for i, cell in enumerate(cells)}
    atoms = tuple(sorted(cfg.regions))
    labels = []
    for cell in cells:
        labels.append(frozenset(a for a in atoms if cell in set(map(tuple, cfg.regions[a]))))
    actions = tuple(DIRECTIONS)

    def move(cell, d):
        dc, dr = DIRECTIONS[d]
        nxt = (cell[0] + dc, cell[1] + dr)
        return nxt if cfg.in_range(nxt) else cell

    transitions = {}
    for cell in cells:
        s = index[cell]
        for a, d in enumerate(actions):
            if cell in holes:
                transitions[(s, a)] = ((s, 1.0),)
                continue
            dist = {}
            for target, p in ((move(cell, d), cfg.intended),
                              (move(cell, LATERAL[d][0]), cfg.slip),
                              (move(cell, LATERAL[d][1]), cfg.slip)):
                if p > 0:
                    t = index[target]
                    dist[t] = dist.get(t, 0.0) + p
            transitions[(s, a)] = tuple(sorted(dist.items()))
    return _with_termination(atoms, [cell_name(*c) for c in cells], index[tuple(cfg.initial)],
                             actions, labels, transitions)


def hole_states(m: LabeledMdp) -> set:
    """States where every ordinary action is a sure self-loop."""
    out = set()
    for s in range(len(m.states)):
        if s == m.terminal:
            continue
        acts = [a for a in m.available(s) if a != m.stop]
        if acts and all(m.transitions[(s, a)] == ((s, 1.0),) for a in acts):
            out.add(s)
    return out


def load_model(document) -> LabeledMdp:
    """Accept either an MDP document or a gridworld config."""
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    if isinstance(doc, dict) and "rows" in doc:
        return gridworld(GridConfig.from_json(doc))
    return load_mdp(doc)


def region_summary(cfg: GridConfig) -> dict:
    return {k: len(v) for k, v in sorted(cfg.regions.items())}

