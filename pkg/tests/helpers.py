"""Shared fixtures-as-functions: corpus formulas, random generators, brute-force oracles."""

import itertools
import json
import random
from importlib.resources import files

import numpy as np

from prefplan.formula import (
    ALWAYS, AND, EVENTUALLY, NEXT, NOT, OR, ORDERED_OR, PRIOR_AND, UNTIL, BOTTOM, TOP, Formula, atom,
)
from prefplan.ltlf import symbol_index
from prefplan.mdp import load_model

PHI1 = "F b *> (F a || F c)"
PHI2 = "F(a && F(b && F c)) *> F(a && F c) || F(b && F c)"
PHI3 = f"({PHI1}) & ({PHI2})"
ABC = ("a", "b", "c")
TOYS = ("toy_chain", "toy_fork", "toy_priority")


def bundled(name: str) -> dict:
    return json.loads(files("prefplan.data").joinpath(name + ".json").read_text())


def bundled_model(name: str):
    return load_model(bundled(name))


def random_ltlf(rng: random.Random, atoms, depth: int) -> Formula:
    """Random pure LTLf formula of nesting depth at most ``depth``."""
    if depth == 0 or rng.random() < 0.25:
        r = rng.random()
        if r < 0.08:
            return TOP
        if r < 0.12:
            return BOTTOM
        return atom(rng.choice(list(atoms)))
    op = rng.choice([NOT, AND, OR, NEXT, UNTIL, EVENTUALLY, ALWAYS])
    if op in (AND, OR, UNTIL):
        return Formula(op, (random_ltlf(rng, atoms, depth - 1), random_ltlf(rng, atoms, depth - 1)))
    return Formula(op, (random_ltlf(rng, atoms, depth - 1),))


def random_preference(rng: random.Random, atoms, depth: int = 2, leaf_depth: int = 2) -> Formula:
    """Random formula whose root is a preference connective."""
    def go(d):
        if d == 0 or rng.random() < 0.3:
            return random_ltlf(rng, atoms, leaf_depth)
        return Formula(rng.choice([ORDERED_OR, PRIOR_AND]), (go(d - 1), go(d - 1)))
    return Formula(rng.choice([ORDERED_OR, PRIOR_AND]), (go(depth - 1), go(depth - 1)))


# ---------------------------------------------------------------- planning oracle

def explicit_product(m, a):
    """Product chain built directly from the definitions, independent of the planner's CSR code.

    Returns (states, actions_at, trans, reward, initial, terminal) where
    ``trans[(v, act)]`` is a list of (v2, prob).
    """
    masks = [symbol_index(m.atoms, m.labels[s]) for s in range(len(m.states))]
    v0 = (m.initial, a.step(a.initial, masks[m.initial]))
    end = (m.terminal, a.sink)
    states, index, stack = [], {}, [v0, end]
    trans, reward, actions_at = {}, {}, {}
    while stack:
        v = stack.pop()
        if v in index:
            continue
        index[v] = len(states)
        states.append(v)
        s, q = v
        if v == end:
            actions_at[v] = [m.stop]
            trans[(v, m.stop)] = [(end, 1.0)]
            reward[(v, m.stop)] = 0.0
            continue
        actions_at[v] = m.available(s)
        for act in actions_at[v]:
            if act == m.stop:
                w = a.final_weight(q)
                reward[(v, act)] = float(a.opt - w + 1) if w > 0 else 0.0
                trans[(v, act)] = [(end, 1.0)]
            else:
                reward[(v, act)] = 0.0
                trans[(v, act)] = [((t, a.step(q, masks[t])), p) for t, p in m.transitions[(s, act)]]
                stack.extend(t for t, _ in trans[(v, act)])
    return states, actions_at, trans, reward, v0, end


def evaluate_dense(states, trans, reward, choice, end):
    """Total expected reward of a fixed choice; never-terminating mass earns nothing."""
    n = len(states)
    idx = {v: i for i, v in enumerate(states)}
    P = np.zeros((n, n))
    r = np.zeros(n)
    for v in states:
        if v == end:
            continue
        act = choice[v]
        r[idx[v]] = reward[(v, act)]
        for t, p in trans[(v, act)]:
            P[idx[v], idx[t]] += p
    # states that can reach the end under this choice
    reach = {idx[end]}
    changed = True
    while changed:
        changed = False
        for i in range(n):
            if i not in reach and any(P[i, j] > 0 for j in reach):
                reach.add(i)
                changed = True
    live = sorted(reach - {idx[end]})
    J = np.zeros(n)
    if live:
        A = np.eye(len(live)) - P[np.ix_(live, live)]
        J[live] = np.linalg.solve(A, r[live])
    return {v: J[idx[v]] for v in states}


def brute_force_optimum(m, a):
    """Best value at the initial product state over every deterministic Markovian policy."""
    states, actions_at, trans, reward, v0, end = explicit_product(m, a)
    movers = [v for v in states if v != end]
    best, best_choice = -1.0, None
    for combo in itertools.product(*(actions_at[v] for v in movers)):
        choice = dict(zip(movers, combo))
        J = evaluate_dense(states, trans, reward, choice, end)
        if J[v0] > best + 1e-12:
            best, best_choice = J[v0], choice
    return best, best_choice, len(states)
