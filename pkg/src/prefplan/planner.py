"""Planning on the product of a labeled MDP with a preference WDFA.

Terminating from product state ``(s, q)`` earns ``opt - w + 1`` where ``w``
is the automaton's end weight at ``q`` (nothing when ``w == 0``), so the
total reward of a run is ``K * (1 - d)`` with ``K = opt + 1`` and ``d`` the
dissatisfaction score of its trace.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from prefplan import kernels
from prefplan.formula import Formula
from prefplan.ltlf import build_dfa, minimize, symbol_index
from prefplan.mdp import STOP, TERMINAL, LabeledMdp
from prefplan.wdfa import Wdfa

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
MAX_ITER = 10**6
STEP_CAP = 10**6
TIE_EPS = 1e-12
PROPER_TOL = 1e-9
OPT_EPS = 1e-9
IMPROVE_TOL = 1e-10


class SolverError(RuntimeError):
    pass


class ImproperPolicyError(SolverError):
    pass


class ModelMismatchError(ValueError):
    pass


@dataclass
class ProductMdp:
    """Reachable part of M x A in CSR form (see ``_kernels_py``)."""

    mdp: LabeledMdp
    wdfa: Wdfa
    states: list           # (mdp_state, automaton_state); terminal pair included
    index: dict
    initial: int
    starts: tuple
    terminal: int
    state_ptr: np.ndarray
    choice_action: np.ndarray
    choice_reward: np.ndarray
    choice_ptr: np.ndarray
    succ_idx: np.ndarray
    succ_prob: np.ndarray

    @property
    def opt(self) -> int:
        return self.wdfa.opt

    @property
    def K(self) -> int:
        return self.wdfa.opt + 1

    @property
    def num_states(self) -> int:
        return len(self.states)

    def start_state(self, s: int) -> int:
        """Product state entered when the MDP starts at ``s``."""
        q = self.wdfa.step(self.wdfa.initial, _label_mask(self.mdp, s))
        return self.index[(s, q)]

    def choices(self, v: int) -> range:
        return range(int(self.state_ptr[v]), int(self.state_ptr[v + 1]))

    def successors(self, c: int):
        lo, hi = int(self.choice_ptr[c]), int(self.choice_ptr[c + 1])
        return zip(self.succ_idx[lo:hi].tolist(), self.succ_prob[lo:hi].tolist())


def _label_mask(m: LabeledMdp, s: int) -> int:
    return symbol_index(m.atoms, m.labels[s])


def product(m: LabeledMdp, a: Wdfa, starts: Optional[Iterable[int]] = None) -> ProductMdp:
    """Materialize product states reachable from the start states (default: the MDP's initial state)."""
    if tuple(m.atoms) != tuple(a.atoms):
        raise ModelMismatchError(f"MDP atoms {list(m.atoms)} differ from automaton atoms {list(a.atoms)}")
    if m.terminal is None or m.stop is None:
        raise ModelMismatchError("MDP lacks the terminating state/action")
    term, stop = m.terminal, m.stop
    masks = [0 if s == term else _label_mask(m, s) for s in range(len(m.states))]
    start_mdp = [m.initial] if starts is None else list(starts)
    if m.initial not in start_mdp:
        start_mdp.insert(0, m.initial)

    states, index = [], {}

    def intern(key):
        i = index.get(key)
        if i is None:
            i = index[key] = len(states)
            states.append(key)
            queue.append(i)
        return i

    queue = deque()
    start_ids = []
    for s in start_mdp:
        if s == term:
            raise ModelMismatchError("cannot start in the terminating state")
        start_ids.append(intern((s, a.step(a.initial, masks[s]))))
    terminal = intern((term, a.sink))

    rows = {}
    while queue:
        v = queue.popleft()
        s, q = states[v]
        if v == terminal:
            rows[v] = [(stop, 0.0, [(v, 1.0)])]
            continue
        row = []
        for act in m.available(s):
            if act == stop:
                w = a.final_weight(q)
                r = float(a.opt - w + 1) if w > 0 else 0.0
                row.append((act, r, [(terminal, 1.0)]))
            else:
                succ = [(intern((t, a.step(q, masks[t]))), p) for t, p in m.transitions[(s, act)]]
                row.append((act, 0.0, succ))
        rows[v] = row

    state_ptr, choice_action, choice_reward, choice_ptr = [0], [], [], [0]
    succ_idx, succ_prob = [], []
    for v in range(len(states)):
        for act, r, succ in rows[v]:
            choice_action.append(act)
            choice_reward.append(r)
            for t, p in succ:
                succ_idx.append(t)
                succ_prob.append(p)
            choice_ptr.append(len(succ_idx))
        state_ptr.append(len(choice_action))
    i64 = np.int64
    return ProductMdp(
        mdp=m, wdfa=a, states=states, index=index, initial=start_ids[0],
        starts=tuple(dict.fromkeys(start_ids)), terminal=terminal,
        state_ptr=np.asarray(state_ptr, dtype=i64),
        choice_action=np.asarray(choice_action, dtype=i64),
        choice_reward=np.asarray(choice_reward, dtype=float),
        choice_ptr=np.asarray(choice_ptr, dtype=i64),
        succ_idx=np.asarray(succ_idx, dtype=i64),
        succ_prob=np.asarray(succ_prob, dtype=float),
    )


# ---------------------------------------------------------------- value iteration

def iterate_values(p: ProductMdp, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER):
    """Value iteration from zero; returns ``(values, iterations)``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    J = np.zeros(p.num_states)
    nxt = np.empty_like(J)
    bound = p.opt + 1e-9
    for it in range(1, max_iter + 1):
        delta = kernels.bellman_sweep(J, p.state_ptr, p.choice_reward, p.choice_ptr,
                                      p.succ_idx, p.succ_prob, nxt)
        if np.any(nxt < J - 1e-12):
            raise SolverError("value iterates decreased; rewards must be non-negative")
        if np.any(nxt > bound):
            raise SolverError(f"value exceeds opt={p.opt}")
        J, nxt = nxt, J
        if delta < tol:
            return J, it
    raise SolverError(f"value iteration did not converge within {max_iter} iterations")


def value_iteration(p: ProductMdp, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER) -> np.ndarray:
    return iterate_values(p, tol, max_iter)[0]


def q_values(p: ProductMdp, J: np.ndarray) -> np.ndarray:
    return p.choice_reward + np.add.reduceat(p.succ_prob * J[p.succ_idx], p.choice_ptr[:-1])


# ---------------------------------------------------------------- policies

@dataclass
class Policy:
    """Deterministic choice per product state: ``(mdp_state, automaton_state) -> action index``."""

    choices: dict

    def choice_array(self, p: ProductMdp) -> np.ndarray:
        """CSR choice index chosen at each product state."""
        out = np.empty(p.num_states, dtype=np.int64)
        for v, key in enumerate(p.states):
            act = p.mdp.stop if v == p.terminal else self.choices.get(key)
            if act is None:
                raise ModelMismatchError(f"policy has no action for product state {key}")
            hit = [c for c in p.choices(v) if p.choice_action[c] == act]
            if not hit:
                raise ModelMismatchError(
                    f"action {p.mdp.actions[act]!r} unavailable at {p.mdp.states[key[0]]!r}")
            out[v] = hit[0]
        return out

    def to_json(self, p: ProductMdp, formula: str, value_at_initial: float) -> dict:
        m = p.mdp
        return {
            "formula": formula,
            "opt": p.opt,
            "value_at_initial": float(value_at_initial),
            "choices": [
                {"state": m.states[s], "automaton_state": q, "action": m.actions[self.choices[(s, q)]]}
                for v, (s, q) in enumerate(p.states) if v != p.terminal and (s, q) in self.choices
            ],
        }

    @classmethod
    def from_json(cls, doc: dict, m: LabeledMdp, a: Wdfa) -> "Policy":
        choices = {}
        for row in doc["choices"]:
            try:
                s = m.state_index(row["state"])
                act = m.actions.index(row["action"])
            except (KeyError, ValueError) as e:
                raise ModelMismatchError(f"policy entry {row!r} does not match the model: {e}") from None
            q = int(row["automaton_state"])
            if not 0 <= q < a.num_states:
                raise ModelMismatchError(f"automaton state {q} not in the compiled automaton")
            choices[(s, q)] = act
        return cls(choices)


def _policy_graph(p: ProductMdp, choice: np.ndarray):
    lo = p.choice_ptr[choice]
    hi = p.choice_ptr[choice + 1]
    rows = np.repeat(np.arange(p.num_states), hi - lo)
    cols = np.concatenate([p.succ_idx[a:b] for a, b in zip(lo, hi)])
    vals = np.concatenate([p.succ_prob[a:b] for a, b in zip(lo, hi)])
    P = sp.csr_matrix((vals, (rows, cols)), shape=(p.num_states, p.num_states))
    return P, p.choice_reward[choice]


def _reaching(P: sp.csr_matrix, targets: Iterable[int]) -> np.ndarray:
    """Mask of states with a positive-probability path into ``targets``."""
    back = P.T.tocsr()
    mask = np.zeros(P.shape[0], dtype=bool)
    queue = deque(targets)
    for t in queue:
        mask[t] = True
    while queue:
        v = queue.popleft()
        for u in back.indices[back.indptr[v]:back.indptr[v + 1]]:
            if not mask[u]:
                mask[u] = True
                queue.append(u)
    return mask


def _reachable_from(P: sp.csr_matrix, starts: Iterable[int]) -> np.ndarray:
    mask = np.zeros(P.shape[0], dtype=bool)
    queue = deque(starts)
    for s in queue:
        mask[s] = True
    while queue:
        v = queue.popleft()
        for u in P.indices[P.indptr[v]:P.indptr[v + 1]]:
            if not mask[u]:
                mask[u] = True
                queue.append(u)
    return mask


def _solve_transient(P: sp.csr_matrix, b: np.ndarray, live: np.ndarray) -> np.ndarray:
    """Solve ``x = P x + b`` on ``live`` states, with ``x = 0`` elsewhere."""
    x = np.zeros(P.shape[0])
    idx = np.flatnonzero(live)
    if len(idx):
        sub = P[idx][:, idx]
        A = (sp.identity(len(idx), format="csc") - sub).tocsc()
        x[idx] = np.atleast_1d(spla.spsolve(A, b[idx]))
    return x


def absorption_probability(p: ProductMdp, choice: np.ndarray) -> np.ndarray:
    """Probability of reaching the terminal pair from each product state."""
    P, _ = _policy_graph(p, choice)
    live = _reaching(P, [p.terminal])
    live[p.terminal] = False
    b = np.asarray(P[:, p.terminal].todense()).ravel()
    x = _solve_transient(P, b, live)
    x[p.terminal] = 1.0
    return x


def is_proper(p: ProductMdp, policy: Policy, starts: Optional[Iterable[int]] = None) -> bool:
    choice = policy.choice_array(p)
    absorb = absorption_probability(p, choice)
    P, _ = _policy_graph(p, choice)
    seen = _reachable_from(P, p.starts if starts is None else starts)
    return bool(np.all(absorb[seen] >= 1 - PROPER_TOL))


def extract_policy(p: ProductMdp, J: np.ndarray, eps: float = TIE_EPS,
                   opt_eps: float = OPT_EPS) -> Policy:
    """Proper policy built from the near-optimal actions under ``J``.

    States where terminating is within ``eps`` of the best Q-value stop.
    The others are assigned layer by layer: a state takes the
    lowest-indexed near-optimal action (within ``opt_eps``) that can move
    into an already assigned layer. Plain greedy choice is not enough on
    its own: where the optimal value is flat, every move ties and the
    greedy policy can wander indefinitely. States that never join a layer
    terminate.
    """
    return Policy(_keys(p, _attractor_choice(p, J, eps, opt_eps)))


def _keys(p: ProductMdp, choice: np.ndarray) -> dict:
    return {p.states[v]: int(p.choice_action[choice[v]])
            for v in range(p.num_states) if v != p.terminal}


def _attractor_choice(p: ProductMdp, J: np.ndarray, eps: float, opt_eps: float) -> np.ndarray:
    n = p.num_states
    Q = q_values(p, J)
    owner = np.repeat(np.arange(n), np.diff(p.state_ptr))
    best = np.maximum.reduceat(Q, p.state_ptr[:-1])
    is_stop = p.choice_action == p.mdp.stop
    near = Q >= best[owner] - opt_eps

    choice = np.full(n, -1, dtype=np.int64)
    for c in np.flatnonzero(is_stop & (Q >= best[owner] - eps)):
        choice[owner[c]] = c
    choice[p.terminal] = p.state_ptr[p.terminal]

    preds = [[] for _ in range(n)]
    for c in np.flatnonzero(near & ~is_stop):
        for t in p.succ_idx[p.choice_ptr[c]:p.choice_ptr[c + 1]].tolist():
            preds[t].append(int(c))
    layer = np.flatnonzero(choice >= 0).tolist()
    while layer:
        reached = set()
        for t in layer:
            for c in preds[t]:
                v = int(owner[c])
                if choice[v] < 0:
                    reached.add(v)
        nxt = []
        for v in sorted(reached):
            ok = [c for c in p.choices(v) if near[c] and not is_stop[c]
                  and any(choice[t] >= 0 for t in p.succ_idx[p.choice_ptr[c]:p.choice_ptr[c + 1]])]
            if ok:
                nxt.append((v, min(ok, key=lambda c: p.choice_action[c])))
        for v, c in nxt:
            choice[v] = c
        layer = [v for v, _ in nxt]

    stuck = np.flatnonzero(choice < 0)
    if len(stuck):
        log.info("%d product states have no near-optimal route to termination; they stop", len(stuck))
        for v in stuck:
            choice[v] = next(c for c in p.choices(int(v)) if is_stop[c])
    return _fastest(p, choice, near & ~is_stop, locked=is_stop[choice])


def expected_steps(p: ProductMdp, choice: np.ndarray) -> np.ndarray:
    """Expected number of moves before the policy picks the terminator."""
    P, _ = _policy_graph(p, choice)
    live = (p.choice_action[choice] != p.mdp.stop) & _reaching(P, [p.terminal])
    T = _solve_transient(P, np.ones(p.num_states), live)
    T[~_reaching(P, [p.terminal])] = np.inf
    return T


def _fastest(p: ProductMdp, choice: np.ndarray, allowed: np.ndarray, locked: np.ndarray,
             rounds: int = 50) -> np.ndarray:
    # Policy iteration on expected episode length, restricted to ``allowed``
    # choices; the starting policy is proper, so every round stays proper.
    owner = np.repeat(np.arange(p.num_states), np.diff(p.state_ptr))
    allowed = allowed & ~locked[owner]
    if not allowed.any():
        return choice
    choice = choice.copy()
    for _ in range(rounds):
        T = expected_steps(p, choice)
        qt = 1.0 + np.add.reduceat(p.succ_prob * T[p.succ_idx], p.choice_ptr[:-1])
        qt = np.where(allowed, qt, np.inf)
        best = np.minimum.reduceat(qt, p.state_ptr[:-1])
        slack = 1e-9 * (1.0 + T)
        better = np.isfinite(best) & (best < T - slack)
        if not better.any():
            break
        good = allowed & (qt <= best[owner] + slack[owner]) & better[owner]
        cs = np.flatnonzero(good)
        states, first = np.unique(owner[cs], return_index=True)
        choice[states] = cs[first]
    return choice


@dataclass
class Solution:
    values: np.ndarray         # value iteration output
    policy: Policy
    policy_values: np.ndarray  # exact value of ``policy``
    iterations: int
    improvements: int


def solve(p: ProductMdp, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER,
          polish: bool = True, max_rounds: int = 100) -> Solution:
    """Value iteration, policy extraction, then exact policy-improvement rounds.

    Value iteration from zero can stall far from the optimum when an
    optimal strategy needs many steps, so ``polish`` keeps improving the
    extracted policy on its exact value until no action gains more than
    ``IMPROVE_TOL``.
    """
    J, it = iterate_values(p, tol, max_iter)
    choice = _attractor_choice(p, J, TIE_EPS, OPT_EPS)
    policy = Policy(_keys(p, choice))
    Jp = policy_evaluate(p, policy)
    rounds = 0
    while polish and rounds < max_rounds:
        Q = q_values(p, Jp)
        best = np.maximum.reduceat(Q, p.state_ptr[:-1])
        if np.all(best <= Jp + IMPROVE_TOL):
            break
        cand_choice = _attractor_choice(p, Jp, TIE_EPS, IMPROVE_TOL)
        cand = Policy(_keys(p, cand_choice))
        Jc = policy_evaluate(p, cand)
        if np.any(Jc < Jp - IMPROVE_TOL) or np.all(Jc <= Jp + IMPROVE_TOL):
            break
        policy, Jp = cand, Jc
        rounds += 1
    return Solution(J, policy, Jp, it, rounds)


def policy_evaluate(p: ProductMdp, policy: Policy, strict: bool = True) -> np.ndarray:
    """Exact total reward of ``policy`` from every product state.

    With ``strict`` an improper policy (from any start) raises; otherwise
    never-terminating mass simply earns nothing.
    """
    choice = policy.choice_array(p)
    P, r = _policy_graph(p, choice)
    if strict:
        absorb = absorption_probability(p, choice)
        seen = _reachable_from(P, p.starts)
        if np.any(absorb[seen] < 1 - PROPER_TOL):
            worst = float(absorb[seen].min())
            raise ImproperPolicyError(f"policy terminates with probability {worst:.6g} < 1")
    live = _reaching(P, [p.terminal])
    live[p.terminal] = False
    return _solve_transient(P, r, live)


def expected_dissatisfaction(value: float, opt: int) -> float:
    """Invert ``J = K (1 - d)`` with ``K = opt + 1``."""
    slack = 1e-9 * max(1, opt)
    if not -slack <= value <= opt + slack:
        raise ValueError(f"value {value} outside [0, {opt}]")
    value = min(max(value, 0.0), float(opt))
    return 1.0 - value / (opt + 1)


# ---------------------------------------------------------------- evaluation against LTLf goals

def satisfaction_probability(m: LabeledMdp, p: ProductMdp, policy: Policy, psi: Formula,
                             starts: Optional[Iterable[int]] = None) -> dict:
    """Per start state, the probability that the trace satisfies ``psi`` under ``policy``.

    The chain runs over (MDP state, preference automaton state, ``psi`` DFA
    state); the outcome is read off when the policy terminates.
    """
    if not psi.is_ltlf():
        raise ValueError("goal formula must be pure LTLf")
    a = p.wdfa
    d = minimize(build_dfa(psi, m.atoms))
    term, stop = m.terminal, m.stop
    masks = [0 if s == term else _label_mask(m, s) for s in range(len(m.states))]
    if starts is None:
        starts = [s for s in range(len(m.states))
                  if s != term and (s, a.step(a.initial, masks[s])) in policy.choices]
    starts = list(starts)

    index, nodes, queue = {}, [], deque()

    def intern(key):
        i = index.get(key)
        if i is None:
            i = index[key] = len(nodes)
            nodes.append(key)
            queue.append(i)
        return i

    start_ids = [intern((s, a.step(a.initial, masks[s]), d.delta[d.initial][masks[s]])) for s in starts]
    rows, cols, vals = [], [], []
    success = []
    terminates = []
    while queue:
        i = queue.popleft()
        s, q, g = nodes[i]
        act = policy.choices.get((s, q))
        if act is None:
            raise ModelMismatchError(f"policy has no action for ({m.states[s]!r}, {q})")
        if act == stop:
            terminates.append(i)
            success.append((i, 1.0 if g in d.accepting else 0.0))
            continue
        for t, pr in m.transitions[(s, act)]:
            j = intern((t, a.step(q, masks[t]), d.delta[g][masks[t]]))
            rows.append(i)
            cols.append(j)
            vals.append(pr)
    n = len(nodes)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    live = _reaching(P, terminates)
    seen = _reachable_from(P, start_ids)
    if np.any(seen & ~live):
        raise ImproperPolicyError("policy does not terminate with probability one")
    b = np.zeros(n)
    for i, val in success:
        b[i] = val
    stop_mask = np.zeros(n, dtype=bool)
    stop_mask[terminates] = True
    x = _solve_transient(P, P @ b, live & ~stop_mask)
    x[stop_mask] = b[stop_mask]
    return {m.states[s]: float(x[i]) for s, i in zip(starts, start_ids)}


@dataclass
class SimulationResult:
    mean: float
    stderr: float
    episodes: int
    rewards: np.ndarray
    scores: np.ndarray


def simulate(m: LabeledMdp, policy: Policy, a: Wdfa, episodes: int, seed: int,
             step_cap: int = STEP_CAP, block: int = 1 << 16) -> SimulationResult:
    """Monte-Carlo estimate of the expected dissatisfaction score of ``policy``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    p = product(m, a)
    choice = policy.choice_array(p)
    cum = np.empty_like(p.succ_prob)
    for c in range(len(p.choice_action)):
        lo, hi = p.choice_ptr[c], p.choice_ptr[c + 1]
        cum[lo:hi] = np.cumsum(p.succ_prob[lo:hi])
    rng = np.random.default_rng(seed)
    uniforms = rng.random(block)
    pos = 0
    rewards = np.empty(episodes)
    finals = np.empty(episodes, dtype=np.int64)
    first = 0
    while first < episodes:
        done, pos, status = kernels.run_episodes(
            p.initial, first, episodes - first, choice, p.choice_action, p.choice_reward,
            p.choice_ptr, p.succ_idx, cum, m.stop, uniforms, pos, step_cap, rewards, finals)
        first += done
        if status == kernels.STEP_CAP:
            raise SolverError(f"episode exceeded {step_cap} steps; policy looks improper")
        if status == kernels.NEED_UNIFORMS:
            uniforms = np.concatenate([uniforms[pos:], rng.random(block)])
            pos = 0

    K = p.K
    weights = np.array([a.final_weight(p.states[v][1]) for v in finals.tolist()], dtype=float)
    scores = np.where(weights > 0, weights / K, 1.0)
    from_reward = np.where(rewards > 0, 1.0 - rewards / K, 1.0)
    if not np.allclose(scores, from_reward, rtol=0, atol=1e-12):
        raise SolverError("episode reward disagrees with the trace's dissatisfaction score")
    mean = float(scores.mean())
    se = float(scores.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else 0.0
    return SimulationResult(mean, se, episodes, rewards, scores)


# ---------------------------------------------------------------- exports

def values_csv(p: ProductMdp, J: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["state", "automaton_state", "value"])
    for v, (s, q) in enumerate(p.states):
        w.writerow([p.mdp.states[s], q, repr(float(J[v]))])
    return buf.getvalue()


__all__ = [
    "ProductMdp", "Policy", "SimulationResult", "SolverError", "ImproperPolicyError",
    "ModelMismatchError", "Solution", "expected_steps", "product", "value_iteration", "iterate_values", "solve",
    "extract_policy",
    "policy_evaluate", "expected_dissatisfaction", "satisfaction_probability", "simulate",
    "absorption_probability", "is_proper", "values_csv", "q_values", "TERMINAL", "STOP",
]
