import itertools

import numpy as np
import pytest

from helpers import (
    ABC, PHI1, PHI3, TOYS, brute_force_optimum, bundled, bundled_model, evaluate_dense,
    explicit_product,
)
from prefplan import kernels, planner
from prefplan.formula import parse_formula
from prefplan.mdp import load_mdp
from prefplan.wdfa import compile_formula


def single(label):
    return load_mdp({"atoms": ["b"], "states": ["s0"], "initial": "s0", "actions": ["wait"],
                     "labels": {"s0": label},
                     "transitions": [{"from": "s0", "action": "wait", "to": "s0", "prob": 1.0}]})


def setup(m, text):
    a = compile_formula(parse_formula(text), m.atoms)
    return a, planner.product(m, a)


def toy(name):
    m = bundled_model(name)
    return m, bundled(name)["formula"]


class TestProduct:
    def test_single_state_reward(self):
        m = single(["b"])
        a, p = setup(m, "F b")
        stop = next(c for c in p.choices(p.initial) if p.choice_action[c] == m.stop)
        assert p.choice_reward[stop] == 1.0

    def test_no_goal_no_reward(self):
        _, p = setup(single([]), "F b")
        assert np.all(p.choice_reward == 0)

    def test_phi1_rewards_from_weights(self):
        m = bundled_model("g1")
        a, p = setup(m, PHI1)
        for v, (s, q) in enumerate(p.states):
            for c in p.choices(v):
                if p.choice_action[c] == m.stop and v != p.terminal:
                    w = a.final_weight(q)
                    assert p.choice_reward[c] == ({2: 1.0, 1: 2.0, 0: 0.0}[w])

    def test_stochastic_rows(self):
        _, p = setup(bundled_model("g2"), PHI3)
        sums = np.add.reduceat(p.succ_prob, p.choice_ptr[:-1])
        assert np.allclose(sums, 1.0, atol=1e-12)
        assert set(np.unique(p.choice_reward)) <= {0.0, 1.0, 2.0, 3.0, 4.0}

    def test_matches_explicit_product(self):
        for name in TOYS:
            m, f = toy(name)
            a, p = setup(m, f)
            states, *_ = explicit_product(m, a)
            assert set(states) == set(p.states)

    def test_atom_mismatch(self):
        m = bundled_model("g1")
        a = compile_formula(parse_formula("F a"), ("a",))
        with pytest.raises(planner.ModelMismatchError):
            planner.product(m, a)


class TestValueIteration:
    def test_single_state(self):
        _, p = setup(single(["b"]), "F b")
        J = planner.value_iteration(p)
        assert J[p.initial] == pytest.approx(1.0)

    def test_unreachable_goal(self):
        _, p = setup(single([]), "F b")
        assert np.all(planner.value_iteration(p) == 0)

    def test_monotone_and_bounded(self):
        _, p = setup(bundled_model("g1"), PHI3)
        J = np.zeros(p.num_states)
        out = np.empty_like(J)
        for _ in range(300):
            kernels.bellman_sweep(J, p.state_ptr, p.choice_reward, p.choice_ptr, p.succ_idx, p.succ_prob, out)
            assert np.all(out >= J - 1e-15) and np.all(out <= p.opt + 1e-12)
            J, out = out, J

    def test_iteration_cap(self):
        _, p = setup(bundled_model("g1"), PHI1)
        with pytest.raises(planner.SolverError, match="converge"):
            planner.iterate_values(p, tol=1e-10, max_iter=5)

    @pytest.mark.parametrize("name", TOYS)
    def test_brute_force_optimum(self, name):
        m, f = toy(name)
        a, p = setup(m, f)
        best, _, n = brute_force_optimum(m, a)
        assert n <= 8
        sol = planner.solve(p)
        assert sol.values[p.initial] == pytest.approx(best, abs=1e-8)
        assert sol.policy_values[p.initial] == pytest.approx(best, abs=1e-8)


class TestExtraction:
    def test_single_state_stops(self):
        m = single(["b"])
        _, p = setup(m, "F b")
        pol = planner.extract_policy(p, planner.value_iteration(p))
        assert pol.choices[p.states[p.initial]] == m.stop

    def test_zero_region_stops(self):
        m = single([])
        _, p = setup(m, "F b")
        pol = planner.extract_policy(p, planner.value_iteration(p))
        assert all(act == m.stop for act in pol.choices.values())

    @pytest.mark.parametrize("name", TOYS)
    def test_extracted_matches_value(self, name):
        m, f = toy(name)
        a, p = setup(m, f)
        J = planner.value_iteration(p)
        pol = planner.extract_policy(p, J)
        assert planner.is_proper(p, pol)
        assert planner.policy_evaluate(p, pol)[p.initial] == pytest.approx(J[p.initial], abs=1e-8)

    @pytest.mark.parametrize("grid,text", [("g1", PHI1), ("g1", PHI3), ("g2", PHI3)])
    def test_gridworld_policies_proper_and_consistent(self, grid, text):
        m = bundled_model(grid)
        _, p = setup(m, text)
        sol = planner.solve(p)
        choice = sol.policy.choice_array(p)
        assert planner.absorption_probability(p, choice).min() >= 1 - 1e-9
        assert np.all(sol.policy_values >= sol.values - 1e-12)
        assert np.all(sol.policy_values <= p.opt + 1e-8)
        # the policy satisfies the Bellman equation: no action improves it
        Q = planner.q_values(p, sol.policy_values)
        assert np.max(np.maximum.reduceat(Q, p.state_ptr[:-1]) - sol.policy_values) <= 1e-9
        assert planner.expected_steps(p, choice)[p.initial] < 1e4

    def test_flat_values_do_not_trap_the_policy(self):
        # where many moves tie, the chosen ones still lead to termination quickly
        _, p = setup(bundled_model("g1"), "F c")
        sol = planner.solve(p)
        steps = planner.expected_steps(p, sol.policy.choice_array(p))
        assert np.isfinite(steps).all() and steps.max() < 1e4


class TestEvaluation:
    def test_single_state(self):
        m = single(["b"])
        _, p = setup(m, "F b")
        pol = planner.Policy({p.states[p.initial]: m.stop})
        assert planner.policy_evaluate(p, pol)[p.initial] == pytest.approx(1.0)

    def test_never_terminating_rejected(self):
        m = single(["b"])
        _, p = setup(m, "F b")
        pol = planner.Policy({p.states[p.initial]: 0})
        with pytest.raises(planner.ImproperPolicyError):
            planner.policy_evaluate(p, pol)
        assert planner.policy_evaluate(p, pol, strict=False)[p.initial] == 0.0
        assert not planner.is_proper(p, pol)

    @pytest.mark.parametrize("name", TOYS)
    def test_every_policy_matches_dense_oracle(self, name):
        m, f = toy(name)
        a, p = setup(m, f)
        states, actions_at, trans, reward, v0, end = explicit_product(m, a)
        movers = [v for v in states if v != end]
        for combo in itertools.product(*(actions_at[v] for v in movers)):
            choice = dict(zip(movers, combo))
            pol = planner.Policy(choice)
            ours = planner.policy_evaluate(p, pol, strict=False)
            ref = evaluate_dense(states, trans, reward, choice, end)
            for v in states:
                assert ours[p.index[v]] == pytest.approx(ref[v], abs=1e-10)

    @pytest.mark.parametrize("J,opt,d", [(2, 2, 1 / 3), (0, 2, 1.0), (1, 1, 0.5)])
    def test_expected_dissatisfaction(self, J, opt, d):
        assert planner.expected_dissatisfaction(J, opt) == pytest.approx(d, abs=1e-15)

    def test_expected_dissatisfaction_range(self):
        with pytest.raises(ValueError):
            planner.expected_dissatisfaction(3.0, 2)

    def test_policy_json_round_trip(self):
        m, f = toy("toy_priority")
        a, p = setup(m, f)
        sol = planner.solve(p)
        doc = sol.policy.to_json(p, f, sol.policy_values[p.initial])
        assert planner.Policy.from_json(doc, m, a) == sol.policy
        assert doc["opt"] == 2 and {"state", "automaton_state", "action"} <= set(doc["choices"][0])

    def test_values_csv(self):
        m, f = toy("toy_fork")
        _, p = setup(m, f)
        text = planner.values_csv(p, planner.value_iteration(p))
        lines = text.splitlines()
        assert lines[0] == "state,automaton_state,value" and len(lines) == p.num_states + 1


class TestSatisfactionProbability:
    def chain(self, rows, labels, actions=("go",)):
        states = sorted({r[0] for r in rows} | {r[2] for r in rows})
        return load_mdp({"atoms": ["b"], "states": states, "initial": states[0], "actions": list(actions),
                         "labels": labels,
                         "transitions": [{"from": f, "action": a, "to": t, "prob": pr} for f, a, t, pr in rows]})

    def test_sure_chain(self):
        m = self.chain([("s0", "go", "s1", 1.0), ("s1", "go", "s1", 1.0)], {"s1": ["b"]})
        a, p = setup(m, "F b")
        s1 = m.state_index("s1")
        choices = {key: (m.stop if key[0] == s1 else 0) for key in p.states if key[0] != m.terminal}
        prob = planner.satisfaction_probability(m, p, planner.Policy(choices), parse_formula("F b"), starts=[0])
        assert prob["s0"] == pytest.approx(1.0)

    def test_single_step_split(self):
        rows = [("s0", "go", "sb", 0.8), ("s0", "go", "sd", 0.2), ("sb", "go", "sb", 1.0), ("sd", "go", "sd", 1.0)]
        m = self.chain(rows, {"sb": ["b"]})
        a, p = setup(m, "F b")
        choices = {key: m.stop for key in p.states if key[0] != m.terminal}
        choices[p.states[p.initial]] = 0
        prob = planner.satisfaction_probability(m, p, planner.Policy(choices), parse_formula("F b"), starts=[0])
        assert prob["s0"] == pytest.approx(0.8)

    def test_rejects_preference_goal(self):
        m, f = toy("toy_fork")
        a, p = setup(m, f)
        with pytest.raises(ValueError):
            planner.satisfaction_probability(m, p, planner.solve(p).policy, parse_formula("a *> b"))

    def test_agrees_with_direct_solve_on_toys(self):
        # with opt = 1 the value is exactly the probability of the goal
        m, _ = toy("toy_chain")
        a, p = setup(m, "F b")
        sol = planner.solve(p)
        prob = planner.satisfaction_probability(m, p, sol.policy, parse_formula("F b"), starts=[m.initial])
        assert prob["s0"] == pytest.approx(sol.policy_values[p.initial], abs=1e-12)

    def test_agrees_with_monte_carlo_on_g1(self):
        # independent vectorised simulation over the MDP and automaton tables
        m = bundled_model("g1")
        a, p = setup(m, PHI1)
        policy = planner.solve(p).policy
        exact = planner.satisfaction_probability(m, p, policy, parse_formula("F b"), starts=[m.initial])
        S, A = len(m.states), len(m.actions)
        masks = np.array([sum(1 << m.atoms.index(x) for x in m.labels[s]) for s in range(S)])
        has_b = np.array(["b" in m.labels[s] for s in range(S)])
        delta = np.array(a.delta)
        act = np.full((S, delta.shape[0]), -1)
        for (s, q), x in policy.choices.items():
            act[s, q] = x
        succ, cum = np.zeros((S, A, 3), dtype=int), np.ones((S, A, 3))
        for (s, x), rows in m.transitions.items():
            succ[s, x, :len(rows)] = [t for t, _ in rows]
            succ[s, x, len(rows):] = rows[-1][0]
            cum[s, x, :len(rows)] = np.cumsum([pr for _, pr in rows])
        n = 100_000
        rng = np.random.default_rng(3)
        s = np.full(n, m.initial)
        q = delta[a.initial, masks[s]]
        seen = has_b[s].copy()
        live = np.ones(n, dtype=bool)
        for _ in range(10**5):
            x = act[s, q]
            live &= x != m.stop
            if not live.any():
                break
            idx = np.flatnonzero(live)
            k = (rng.random(len(idx))[:, None] >= cum[s[idx], x[idx]]).sum(axis=1).clip(max=2)
            s[idx] = succ[s[idx], x[idx], k]
            q[idx] = delta[q[idx], masks[s[idx]]]
            seen[idx] |= has_b[s[idx]]
        assert not live.any()
        mean = seen.mean()
        se = np.sqrt(mean * (1 - mean) / n)
        assert se > 0 and abs(exact[m.states[m.initial]] - mean) <= 3 * se

class TestSimulation:
    def test_deterministic_episode(self):
        m = single(["b"])
        a, p = setup(m, "F b")
        pol = planner.Policy({p.states[p.initial]: m.stop})
        r = planner.simulate(m, pol, a, 50, seed=1)
        assert r.mean == 0.5 and r.stderr == 0.0

    def test_seeded(self):
        m = bundled_model("g1")
        a, p = setup(m, PHI1)
        pol = planner.solve(p).policy
        r1 = planner.simulate(m, pol, a, 2000, seed=7)
        r2 = planner.simulate(m, pol, a, 2000, seed=7)
        assert r1.mean == r2.mean and np.array_equal(r1.scores, r2.scores)

    def test_block_size_does_not_change_results(self):
        m = bundled_model("g1")
        a, p = setup(m, PHI1)
        pol = planner.solve(p).policy
        r1 = planner.simulate(m, pol, a, 500, seed=3, block=64)
        r2 = planner.simulate(m, pol, a, 500, seed=3)
        assert np.array_equal(r1.scores, r2.scores)

    def test_step_cap(self):
        m = single(["b"])
        a, p = setup(m, "F b")
        with pytest.raises(planner.SolverError, match="steps"):
            planner.simulate(m, planner.Policy({p.states[p.initial]: 0}), a, 1, seed=0, step_cap=100)

    def test_toy_mean_near_exact(self):
        m, f = toy("toy_priority")
        a, p = setup(m, f)
        sol = planner.solve(p)
        r = planner.simulate(m, sol.policy, a, 20000, seed=11)
        d = planner.expected_dissatisfaction(sol.policy_values[p.initial], p.opt)
        assert abs(r.mean - d) <= 4 * r.stderr

    def test_scores_are_table_values(self):
        m = bundled_model("g1")
        a, p = setup(m, PHI1)
        r = planner.simulate(m, planner.solve(p).policy, a, 1000, seed=5)
        assert set(np.round(r.scores * 3).astype(int)) <= {1, 2, 3}
