"""Command-line front end: ``prefplan {compile,score,plan,eval,gridworld,heatmap}``.

Exit codes: 0 success, 1 usage or parse error, 2 validation error,
3 solver or numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from importlib.resources import files
from pathlib import Path

import numpy as np

from prefplan import planner
from prefplan.formula import (
    FormulaSyntaxError, FormulaValidationError, TraceSyntaxError, dissatisfaction_score,
    optionality, parse_formula, parse_trace, satisfaction_degree_oracle,
)
from prefplan.ltlf import ClosureOverflowError, NotLtlfError, StateLimitError
from prefplan.mdp import (
    GridConfig, MdpValidationError, gridworld, hole_states, load_model, parse_cell,
    region_summary, save_mdp, validate,
)
from prefplan.wdfa import AlphabetMismatchError, compile_formula, degree_via_wdfa, export_dot, is_empty, max_weight

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_SOLVER = 0, 1, 2, 3
BUNDLED = ("g1", "g2", "toy_chain", "toy_fork", "toy_priority")

log = logging.getLogger("prefplan")


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers

def _read_doc(ref: str) -> dict:
    """Load JSON from a path, or from a bundled fixture name such as ``g1``."""
    path = Path(ref)
    if path.exists():
        text = path.read_text()
    elif ref in BUNDLED:
        text = files("prefplan.data").joinpath(ref + ".json").read_text()
    else:
        raise UsageError(f"no such file or bundled model: {ref}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise UsageError(f"{ref}: invalid JSON: {e}") from None


def _formula(text: str):
    try:
        return parse_formula(text)
    except FormulaSyntaxError as e:
        raise UsageError(f"formula: {e}") from None
    except FormulaValidationError as e:
        raise ValidationError(f"formula: {e}") from None


def _atoms(text: str, f=None) -> tuple:
    atoms = tuple(a.strip() for a in text.split(",") if a.strip())
    if len(set(atoms)) != len(atoms):
        raise UsageError("--atoms contains duplicates")
    if f is not None:
        missing = sorted(f.atoms() - set(atoms))
        if missing:
            raise ValidationError(f"--atoms does not cover {', '.join(missing)}")
    return atoms


def _model(ref: str):
    try:
        m = load_model(_read_doc(ref))
    except (MdpValidationError, ValueError, KeyError, TypeError) as e:
        raise ValidationError(f"{ref}: {e}") from None
    problems = validate(m)
    if problems:
        raise ValidationError(f"{ref}: " + "; ".join(problems))
    return m


def _compile(f, atoms):
    missing = sorted(f.atoms() - set(atoms))
    if missing:
        raise ValidationError(f"formula uses atoms {missing} that the model does not declare {list(atoms)}")
    try:
        return compile_formula(f, atoms)
    except (ClosureOverflowError, StateLimitError, NotLtlfError) as e:
        raise ValidationError(str(e)) from None


def _num(x: float) -> str:
    return format(float(x), ".15g")


def _emit(args, summary: dict, text: str) -> None:
    if args.format == "json":
        print(json.dumps(summary, indent=2, sort_keys=False))
    else:
        print(text)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _all_starts(m) -> list:
    return [s for s in range(len(m.states)) if s != m.terminal]


# ---------------------------------------------------------------- commands

def cmd_compile(args) -> int:
    f = _formula(args.formula)
    atoms = _atoms(args.atoms, f)
    try:
        a = compile_formula(f, atoms, minimize_leaves=args.minimize)
    except (ClosureOverflowError, StateLimitError) as e:
        raise ValidationError(str(e)) from None
    if args.dot:
        Path(args.dot).write_text(export_dot(a))
    if args.json:
        Path(args.json).write_text(json.dumps(a.to_json(), indent=2) + "\n")
    empty = is_empty(a)
    if empty:
        _warn("empty preference language")
    summary = {"states": a.num_states, "opt": a.opt, "max_weight": max_weight(a), "empty": empty}
    _emit(args, summary, f"states={a.num_states} opt={a.opt} max_weight={max_weight(a)}")
    return EXIT_OK


def cmd_score(args) -> int:
    f = _formula(args.formula)
    atoms = _atoms(args.atoms, f)
    try:
        trace = parse_trace(args.trace, atoms)
    except TraceSyntaxError as e:
        raise UsageError(f"trace: {e}") from None
    a = _compile(f, atoms)
    degree = degree_via_wdfa(a, trace)
    oracle = satisfaction_degree_oracle(trace, f)
    if degree != oracle:
        print(f"error: automaton degree {degree} disagrees with definition-level degree {oracle}",
              file=sys.stderr)
        return EXIT_SOLVER
    opt = optionality(f)
    sc = dissatisfaction_score(degree, opt)
    deg_text = "unsat" if degree is None else str(degree)
    summary = {"degree": degree, "opt": opt, "score": str(sc), "score_decimal": float(sc)}
    _emit(args, summary, f"degree={deg_text} score={sc} ({_num(float(sc))}) opt={opt}")
    return EXIT_OK


def cmd_plan(args) -> int:
    m = _model(args.mdp)
    f = _formula(args.formula)
    a = _compile(f, m.atoms)
    t0 = time.perf_counter()
    try:
        p = planner.product(m, a, starts=_all_starts(m) if args.all_starts else None)
        sol = planner.solve(p, tol=args.tol, max_iter=args.max_iter)
    except planner.ModelMismatchError as e:
        raise ValidationError(str(e)) from None
    elapsed = time.perf_counter() - t0
    if is_empty(a):
        _warn("empty preference language")
    J0 = float(sol.policy_values[p.initial])
    d = planner.expected_dissatisfaction(J0, p.opt)
    if args.out_policy:
        Path(args.out_policy).write_text(json.dumps(sol.policy.to_json(p, args.formula, J0), indent=2) + "\n")
    if args.out_values:
        Path(args.out_values).write_text(planner.values_csv(p, sol.policy_values))
    summary = {"J*": J0, "d": d, "opt": p.opt, "K": p.K, "product_states": p.num_states,
               "iterations": sol.iterations, "value_iteration_J": float(sol.values[p.initial]),
               "wall_time_s": elapsed}
    _emit(args, summary, f"J*={_num(J0)} d={_num(d)} opt={p.opt} product_states={p.num_states} "
                         f"iterations={sol.iterations} time={elapsed:.3f}s")
    return EXIT_OK


def cmd_eval(args) -> int:
    m = _model(args.mdp)
    f = _formula(args.formula)
    a = _compile(f, m.atoms)
    try:
        p = planner.product(m, a)
        policy = planner.Policy.from_json(_read_doc(args.policy), m, a)
        choice = policy.choice_array(p)
    except planner.ModelMismatchError as e:
        raise ValidationError(f"policy does not match model/formula: {e}") from None
    absorb = float(planner.absorption_probability(p, choice)[p.initial])
    proper = planner.is_proper(p, policy)
    J = planner.policy_evaluate(p, policy, strict=False)
    J0 = float(J[p.initial])
    d = planner.expected_dissatisfaction(J0, p.opt)
    summary = {"J": J0, "d": d, "opt": p.opt, "proper": proper, "termination_probability": absorb}
    lines = [f"J={_num(J0)} d={_num(d)} opt={p.opt} proper={str(proper).lower()}"]
    status = EXIT_OK
    if not proper:
        _warn(f"policy is improper (terminates with probability {_num(absorb)}); "
              "non-terminating mass is scored 1")
        status = EXIT_SOLVER
    if args.against:
        psi = _formula(args.against)
        if not psi.is_ltlf():
            raise ValidationError("--against must be a pure LTLf formula")
        if not proper:
            raise planner.ImproperPolicyError("satisfaction probability needs a proper policy")
        prob = planner.satisfaction_probability(m, p, policy, psi, starts=[m.initial])
        pr = prob[m.states[m.initial]]
        summary["against"] = {"formula": args.against, "probability": pr}
        lines.append(f"Pr[{args.against}]={_num(pr)}")
    if args.mc:
        if not proper:
            raise planner.ImproperPolicyError("simulation needs a proper policy")
        r = planner.simulate(m, policy, a, args.mc, args.seed)
        summary["mc"] = {"episodes": r.episodes, "seed": args.seed, "mean": r.mean, "stderr": r.stderr}
        lines.append(f"mc_mean={_num(r.mean)} mc_se={_num(r.stderr)} episodes={r.episodes} seed={args.seed}")
    _emit(args, summary, "\n".join(lines))
    return status


def cmd_gridworld(args) -> int:
    doc = _read_doc(args.config)
    try:
        cfg = GridConfig.from_json(doc)
        m = gridworld(cfg)
    except (ValueError, KeyError, TypeError) as e:
        raise ValidationError(f"{args.config}: {e}") from None
    Path(args.out).write_text(json.dumps(save_mdp(m), indent=2) + "\n")
    summary = {"cells": cfg.rows * cfg.cols, "holes": len(cfg.holes), "regions": region_summary(cfg),
               "states": len(m.states)}
    regions = " ".join(f"{k}={v}" for k, v in summary["regions"].items())
    _emit(args, summary, f"cells={summary['cells']} holes={summary['holes']} regions: {regions} "
                         f"states={len(m.states)} (with terminator)")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    m = _model(args.mdp)
    cells = {s: parse_cell(name) for s, name in enumerate(m.states) if s != m.terminal}
    if any(c is None for c in cells.values()):
        raise ValidationError("heatmap needs a gridworld model with cell-named states like (c,r)")
    holes = hole_states(m)
    f = _formula(args.formula)
    a = _compile(f, m.atoms)
    free = [s for s in sorted(cells, key=lambda s: (cells[s][1], cells[s][0])) if s not in holes]
    if args.policy or args.against:
        if not (args.policy and args.against):
            raise UsageError("--policy and --against go together")
        psi = _formula(args.against)
        if not psi.is_ltlf():
            raise ValidationError("--against must be a pure LTLf formula")
        try:
            p = planner.product(m, a, starts=free)
            policy = planner.Policy.from_json(_read_doc(args.policy), m, a)
            prob = planner.satisfaction_probability(m, p, policy, psi, starts=free)
        except planner.ModelMismatchError as e:
            raise ValidationError(f"policy does not cover every cell (plan with --all-starts): {e}") from None
        values = {s: prob[m.states[s]] for s in free}
    else:
        p = planner.product(m, a, starts=free)
        J, _ = planner.iterate_values(p, tol=args.tol)
        values = {s: float(J[p.start_state(s)]) for s in free}
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["col", "row", "value"])
        for s in free:
            w.writerow([cells[s][0], cells[s][1], repr(values[s])])
    vals = np.array(list(values.values()))
    summary = {"rows": len(free), "min": float(vals.min()), "max": float(vals.max())}
    _emit(args, summary, f"rows={len(free)} min={_num(vals.min())} max={_num(vals.max())}")
    return EXIT_OK


# ---------------------------------------------------------------- wiring

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="prefplan", description="Preference-based planning over LTLf goals.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--format", choices=("text", "json"), default="text")
        return p

    p = common(sub.add_parser("compile", help="compile a preference formula to a weighted automaton"))
    p.add_argument("--formula", required=True)
    p.add_argument("--atoms", required=True, help="comma-separated ordered atom list")
    p.add_argument("--dot")
    p.add_argument("--json")
    p.add_argument("--minimize", action=argparse.BooleanOptionalAction, default=True,
                   help="minimize leaf DFAs before lifting (default: on)")
    p.set_defaults(func=cmd_compile)

    p = common(sub.add_parser("score", help="satisfaction degree and dissatisfaction score of a trace"))
    p.add_argument("--formula", required=True)
    p.add_argument("--atoms", required=True)
    p.add_argument("--trace", required=True, help="symbols separated by ';', '-' for the empty set")
    p.set_defaults(func=cmd_score)

    p = common(sub.add_parser("plan", help="optimal policy for a model and preference formula"))
    p.add_argument("--mdp", required=True, help="MDP JSON, gridworld config, or bundled name (g1, g2, ...)")
    p.add_argument("--formula", required=True)
    p.add_argument("--out-policy")
    p.add_argument("--out-values")
    p.add_argument("--tol", type=float, default=planner.DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=planner.MAX_ITER)
    p.add_argument("--all-starts", action="store_true",
                   help="cover every MDP state as a start, not only the initial one")
    p.set_defaults(func=cmd_plan)

    p = common(sub.add_parser("eval", help="evaluate a policy exactly and optionally by simulation"))
    p.add_argument("--mdp", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--formula", required=True)
    p.add_argument("--against", help="pure LTLf formula whose satisfaction probability to report")
    p.add_argument("--mc", type=int, default=0, help="Monte-Carlo episodes")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("gridworld", help="generate a gridworld MDP"))
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gridworld)

    p = common(sub.add_parser("heatmap", help="per-cell values or satisfaction probabilities as CSV"))
    p.add_argument("--mdp", required=True)
    p.add_argument("--formula", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy")
    p.add_argument("--against")
    p.add_argument("--tol", type=float, default=planner.DEFAULT_TOL)
    p.set_defaults(func=cmd_heatmap)
    return ap


def _glue_values(argv: list) -> list:
    # Traces such as "-;-;a" start with a dash; keep argparse from reading them as options.
    out = []
    it = iter(argv)
    for tok in it:
        if tok == "--trace":
            nxt = next(it, None)
            out.append(tok if nxt is None else f"--trace={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_glue_values(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, AlphabetMismatchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (planner.SolverError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
