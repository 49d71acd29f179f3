"""Compare the compiled and pure-Python kernels on the bundled 8x8 gridworld.

    python3 benchmarks/bench_kernels.py [--sweeps 200] [--episodes 20000]

Both backends run on identical inputs; the script also checks that their
outputs agree before reporting timings.
"""

import argparse
import json
import time
from importlib.resources import files

import numpy as np

from prefplan import kernels, planner
from prefplan.formula import parse_formula
from prefplan.mdp import load_model
from prefplan.wdfa import compile_formula

PHI3 = "(F b *> (F a || F c)) & (F(a && F(b && F c)) *> F(a && F c) || F(b && F c))"


def setup(grid: str, text: str):
    m = load_model(json.loads(files("prefplan.data").joinpath(grid + ".json").read_text()))
    p = planner.product(m, compile_formula(parse_formula(text), m.atoms))
    return m, p


def bench_sweeps(mod, p, sweeps: int) -> tuple[float, np.ndarray]:
    J = np.zeros(p.num_states)
    out = np.empty_like(J)
    t0 = time.perf_counter()
    for _ in range(sweeps):
        mod.bellman_sweep(J, p.state_ptr, p.choice_reward, p.choice_ptr, p.succ_idx, p.succ_prob, out)
        J, out = out, J
    return time.perf_counter() - t0, J


def bench_episodes(mod, m, p, choice, cum, episodes: int) -> tuple[float, np.ndarray]:
    rng = np.random.default_rng(0)
    uniforms, pos, first = rng.random(1 << 20), 0, 0
    rewards = np.zeros(episodes)
    finals = np.zeros(episodes, dtype=np.int64)
    elapsed = 0.0
    while first < episodes:
        t0 = time.perf_counter()
        done, pos, status = mod.run_episodes(p.initial, first, episodes - first, choice, p.choice_action,
                                             p.choice_reward, p.choice_ptr, p.succ_idx, cum, m.stop,
                                             uniforms, pos, 10**6, rewards, finals)
        elapsed += time.perf_counter() - t0
        first += done
        if status == mod.STEP_CAP:
            raise SystemExit("episode hit the step cap")
        if status == mod.NEED_UNIFORMS:
            uniforms, pos = np.concatenate([uniforms[pos:], rng.random(1 << 20)]), 0
    return elapsed, rewards


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", default="g1")
    ap.add_argument("--sweeps", type=int, default=200)
    ap.add_argument("--episodes", type=int, default=20_000)
    args = ap.parse_args()

    m, p = setup(args.grid, PHI3)
    choice = planner.solve(p).policy.choice_array(p)
    cum = np.empty_like(p.succ_prob)
    for c in range(len(p.choice_action)):
        lo, hi = p.choice_ptr[c], p.choice_ptr[c + 1]
        cum[lo:hi] = np.cumsum(p.succ_prob[lo:hi])

    backends = kernels.backends()
    print(f"{args.grid} + phi3: {p.num_states} product states, {len(p.choice_action)} choices, "
          f"{len(p.succ_idx)} successor entries")
    if "cython" not in backends:
        print("compiled extension not built; timing the Python fallback only")

    results = {}
    for name, mod in backends.items():
        t_sweep, J = bench_sweeps(mod, p, args.sweeps)
        t_ep, rewards = bench_episodes(mod, m, p, choice, cum, args.episodes)
        results[name] = (t_sweep, t_ep, J, rewards)
        print(f"{name:>7}: {args.sweeps} sweeps {t_sweep * 1e3:8.1f} ms   "
              f"{args.episodes} episodes {t_ep * 1e3:8.1f} ms")

    if len(results) == 2:
        py, cy = results["python"], results["cython"]
        if not np.allclose(py[2], cy[2], rtol=0, atol=1e-12) or not np.array_equal(py[3], cy[3]):
            raise SystemExit("backends disagree")
        print(f"speedup: sweeps x{py[0] / cy[0]:.1f}, episodes x{py[1] / cy[1]:.1f} (outputs identical)")


if __name__ == "__main__":
    main()
