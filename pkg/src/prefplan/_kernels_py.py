"""Pure-Python/numpy kernels; behaviour must match ``_kernels.pyx`` exactly.

The product MDP is stored in CSR form: state ``v`` owns choices
``state_ptr[v]:state_ptr[v+1]`` and choice ``c`` owns successor entries
``choice_ptr[c]:choice_ptr[c+1]``.
"""

import numpy as np

OK, NEED_UNIFORMS, STEP_CAP = 0, 1, 2


def bellman_sweep(J, state_ptr, reward, choice_ptr, succ_idx, succ_prob, out):
    """One Jacobi Bellman backup into ``out``; returns the sup-norm change."""
    q = reward + np.add.reduceat(succ_prob * J[succ_idx], choice_ptr[:-1])
    out[:] = np.maximum.reduceat(q, state_ptr[:-1])
    return float(np.max(np.abs(out - J))) if len(J) else 0.0


def run_episodes(start, first, count, choice_of, choice_action, reward, choice_ptr,
                 succ_idx, succ_cum, stop_action, uniforms, pos, step_cap,
                 out_reward, out_final):
    """Simulate episodes ``first .. first+count-1`` under a fixed choice per state.

    Each stochastic step consumes one uniform. Returns ``(done, pos, status)``;
    on ``NEED_UNIFORMS`` the unfinished episode restarts from ``pos``.
    """
    n_u = len(uniforms)
    choice_of = choice_of.tolist()
    choice_action = choice_action.tolist()
    choice_ptr = choice_ptr.tolist()
    succ_idx = succ_idx.tolist()
    succ_cum = succ_cum.tolist()
    done = 0
    while done < count:
        v = start
        p = pos
        steps = 0
        while True:
            c = choice_of[v]
            if choice_action[c] == stop_action:
                out_reward[first + done] = reward[c]
                out_final[first + done] = v
                break
            if p >= n_u:
                return done, pos, NEED_UNIFORMS
            u = uniforms[p]
            p += 1
            lo, hi = choice_ptr[c], choice_ptr[c + 1]
            k = lo
            while k < hi - 1 and u >= succ_cum[k]:
                k += 1
            v = succ_idx[k]
            steps += 1
            if steps > step_cap:
                return done, p, STEP_CAP
        pos = p
        done += 1
    return done, pos, OK
