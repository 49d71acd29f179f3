"""Acceptance gate: one test and one PASS/FAIL summary line per criterion."""

import json
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from acceptance_report import criterion
from helpers import (
    ABC, PHI1, PHI2, PHI3, TOYS, brute_force_optimum, bundled, bundled_model, random_ltlf,
    random_preference,
)
from prefplan import planner
from prefplan.cli import main
from prefplan.formula import dissatisfaction_score, optionality, parse_formula, parse_trace, satisfaction_degree_oracle
from prefplan.ltlf import all_traces, build_dfa, ltlf_holds
from prefplan.mdp import hole_states, parse_cell
from prefplan.wdfa import compile_formula, degree_via_wdfa, max_trace_weight, max_weight, run_weight

EPISODES = 100_000
SEED = 7


def solve(grid, text, starts=None):
    m = bundled_model(grid)
    a = compile_formula(parse_formula(text), m.atoms)
    p = planner.product(m, a, starts=starts)
    return m, a, p, planner.solve(p)


def test_c1_table_scores():
    with criterion(1, "worked degrees and exact scores for phi1") as detail:
        f = parse_formula(PHI1)
        got = []
        for text, k, score in [("b;a", 1, Fraction(1, 3)), ("-;-;a", 2, Fraction(2, 3)), ("-;-", None, Fraction(1))]:
            degree = satisfaction_degree_oracle(parse_trace(text), f)
            s = dissatisfaction_score(degree, optionality(f))
            got.append(f"{text}->{degree or 'unsat'},{s}")
            assert degree == k and s == score
        detail.append(" ".join(got))


def test_c2_phi1_weights():
    with criterion(2, "phi1 automaton run weights on representative words") as detail:
        a = compile_formula(parse_formula(PHI1), ABC)
        words = {"b;a": 1, "a": 2, "b": 1, "-": 0}
        got = {w: run_weight(a, parse_trace(w)) for w in words}
        detail.append(str(got))
        assert got == words


def test_c3_oracle_equivalence():
    with criterion(3, "automaton degree == definition-level degree, all traces <= 3") as detail:
        t0 = time.perf_counter()
        traces = list(all_traces(ABC, 3))
        assert len(traces) == 584
        for text in (PHI1, PHI2, PHI3):
            f = parse_formula(text)
            a = compile_formula(f, ABC)
            bad = sum(degree_via_wdfa(a, w) != satisfaction_degree_oracle(w, f) for w in traces)
            assert bad == 0, f"{bad} mismatches for {text}"
        elapsed = time.perf_counter() - t0
        detail.append(f"3 formulas x 584 traces, {elapsed:.2f}s")
        assert elapsed < 10


def test_c4_dfa_correctness():
    with criterion(4, "200 random LTLf formulas: DFA == semantics on traces <= 4") as detail:
        t0 = time.perf_counter()
        rng = random.Random(20240601)
        atoms = ("a", "b")
        traces = list(all_traces(atoms, 4))
        for _ in range(200):
            f = random_ltlf(rng, atoms, 4)
            d = build_dfa(f, atoms)
            for w in traces:
                assert d.accepts(w) == ltlf_holds(w, f), f"{f} on {w}"
        elapsed = time.perf_counter() - t0
        detail.append(f"{len(traces)} traces each, {elapsed:.2f}s")
        assert elapsed < 60


@pytest.mark.xfail(strict=True, reason="max weight equals opt only when every degree is reachable; "
                                       "redundant ordered-disjunction options break it (see README)")
def test_c5_max_weight_equals_optionality():
    with criterion(5, "max_weight == optionality on 50 random satisfiable formulas") as detail:
        rng = random.Random(2024)
        traces = list(all_traces(ABC, 4))
        checked, mismatches, reachable_ok = 0, [], 0
        while checked < 50:
            f = random_preference(rng, ABC)
            degrees = [satisfaction_degree_oracle(w, f) for w in traces]
            if all(d is None for d in degrees):
                continue
            checked += 1
            a = compile_formula(f, ABC)
            mw = max_weight(a)
            reachable_ok += max_trace_weight(a) == max(d for d in degrees if d is not None)
            if mw != optionality(f):
                mismatches.append(f"{f} (max_weight={mw}, opt={optionality(f)})")
        detail.append(f"{len(mismatches)}/50 mismatches, e.g. {mismatches[0] if mismatches else '-'}")
        detail.append(f"max_trace_weight == best reachable degree on {reachable_ok}/50")
        assert reachable_ok == 50
        assert not mismatches


def test_c6_brute_force_optimality():
    with criterion(6, "value iteration + extraction == exhaustive policy enumeration on toys") as detail:
        for name in TOYS:
            m = bundled_model(name)
            a = compile_formula(parse_formula(bundled(name)["formula"]), m.atoms)
            best, _, n = brute_force_optimum(m, a)
            p = planner.product(m, a)
            sol = planner.solve(p)
            assert len(m.states) <= 5 and p.num_states <= 8 and n == p.num_states
            vi, ex = sol.values[p.initial], sol.policy_values[p.initial]
            detail.append(f"{name}: brute={best:.10g} vi={vi:.10g} policy={ex:.10g}")
            assert abs(vi - best) <= 1e-8 and abs(ex - best) <= 1e-8


def test_c7_value_score_identity(tmp_path, capsys):
    with criterion(7, "J*(v0) vs simulated K(1-d) on g1+phi1; plan/eval d agree") as detail:
        m, a, p, sol = solve("g1", PHI1)
        J0 = float(sol.policy_values[p.initial])
        r = planner.simulate(m, sol.policy, a, EPISODES, SEED)
        K = p.K
        gap = abs(J0 - K * (1 - r.mean))
        detail.append(f"J*={J0:.6f} K(1-d^)={K * (1 - r.mean):.6f} gap={gap:.2e} 3K*SE={3 * K * r.stderr:.2e}")
        assert r.stderr > 0
        assert gap <= 3 * K * r.stderr

        pol = tmp_path / "policy.json"
        assert main(["plan", "--mdp", "g1", "--formula", PHI1, "--out-policy", str(pol), "--format", "json"]) == 0
        planned = json.loads(capsys.readouterr().out)
        assert main(["eval", "--mdp", "g1", "--formula", PHI1, "--policy", str(pol), "--format", "json"]) == 0
        evaluated = json.loads(capsys.readouterr().out)
        diff = abs(planned["d"] - evaluated["d"])
        rel = abs(planned["d"] - (1 - planned["J*"] / planned["K"]))
        detail.append(f"|d_plan - d_eval|={diff:.1e}")
        assert diff <= 1e-8 and rel <= 1e-8


def test_c8_properness():
    with criterion(8, "extracted policies terminate w.p. 1 and never hit the step cap") as detail:
        cases = [(name, bundled(name)["formula"]) for name in TOYS]
        cases += [(g, f) for g in ("g1", "g2") for f in (PHI1, PHI3)]
        worst = 1.0
        for grid, text in cases:
            m, a, p, sol = solve(grid, text)
            absorb = planner.absorption_probability(p, sol.policy.choice_array(p))
            worst = min(worst, float(absorb.min()))
            assert absorb.min() >= 1 - 1e-9, (grid, text)
            planner.simulate(m, sol.policy, a, 10_000, seed=1)  # raises on the step cap
        detail.append(f"{len(cases)} fixtures, min absorption {worst:.12f}")


def test_c9_runtime():
    with criterion(9, "planning on the 8x8 gridworld within 5 s") as detail:
        for name, text in (("phi1", PHI1), ("phi3", PHI3)):
            t0 = time.perf_counter()
            solve("g1", text)
            elapsed = time.perf_counter() - t0
            detail.append(f"{name} {elapsed:.3f}s")
            assert elapsed <= 5


def test_c10_qualitative():
    with criterion(10, "preference policy favours b; sealed corner scores 0 on g2", gating=False) as detail:
        m = bundled_model("g1")
        holes = hole_states(m)
        free = [s for s in range(len(m.states)) if s != m.terminal and s not in holes]
        means = {}
        for name, text in (("pi*", PHI1), ("pi_or", "F b || (F a || F c)")):
            _, _, p, sol = solve("g1", text, starts=free)
            prob = planner.satisfaction_probability(m, p, sol.policy, parse_formula("F b"), starts=free)
            means[name] = float(np.mean(list(prob.values())))
        detail.append(f"mean Pr(F b): pi*={means['pi*']:.4f} pi_or={means['pi_or']:.4f}")

        g2 = bundled_model("g2")
        free2 = [s for s in range(len(g2.states)) if s != g2.terminal and s not in hole_states(g2)]
        _, _, p2, sol2 = solve("g2", PHI3, starts=free2)
        corner = [s for s in free2 if parse_cell(g2.states[s]) in {(1, 6), (1, 7), (1, 8), (2, 6), (2, 7), (2, 8)}]
        corner_values = [float(sol2.values[p2.start_state(s)]) for s in corner]
        detail.append(f"g2+phi3 sealed-corner max value {max(corner_values):.3g}")
        assert means["pi*"] >= means["pi_or"]
        assert max(corner_values) == 0.0
