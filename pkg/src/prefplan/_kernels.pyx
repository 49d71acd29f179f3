# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_kernels_py`` for the reference semantics."""

from libc.math cimport fabs, INFINITY
from libc.stdint cimport int64_t

OK, NEED_UNIFORMS, STEP_CAP = 0, 1, 2


def bellman_sweep(const double[::1] J, const int64_t[::1] state_ptr,
                  const double[::1] reward, const int64_t[::1] choice_ptr,
                  const int64_t[::1] succ_idx, const double[::1] succ_prob,
                  double[::1] out):
    cdef Py_ssize_t n = state_ptr.shape[0] - 1
    cdef Py_ssize_t v, c, k
    cdef double best, q, diff, delta = 0.0
    with nogil:
        for v in range(n):
            best = -INFINITY
            for c in range(state_ptr[v], state_ptr[v + 1]):
                q = reward[c]
                for k in range(choice_ptr[c], choice_ptr[c + 1]):
                    q = q + succ_prob[k] * J[succ_idx[k]]
                if q > best:
                    best = q
            out[v] = best
            diff = fabs(best - J[v])
            if diff > delta:
                delta = diff
    return delta


def run_episodes(int64_t start, int64_t first, int64_t count,
                 const int64_t[::1] choice_of, const int64_t[::1] choice_action,
                 const double[::1] reward, const int64_t[::1] choice_ptr,
                 const int64_t[::1] succ_idx, const double[::1] succ_cum,
                 int64_t stop_action, const double[::1] uniforms, int64_t pos,
                 int64_t step_cap, double[::1] out_reward, int64_t[::1] out_final):
    cdef int64_t n_u = uniforms.shape[0]
    cdef int64_t done = 0
    cdef int64_t v, p, c, k, hi, steps
    cdef double u
    cdef int status = 0
    with nogil:
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
                    status = 1
                    break
                u = uniforms[p]
                p += 1
                k = choice_ptr[c]
                hi = choice_ptr[c + 1]
                while k < hi - 1 and u >= succ_cum[k]:
                    k += 1
                v = succ_idx[k]
                steps += 1
                if steps > step_cap:
                    status = 2
                    break
            if status == 1:
                break
            if status == 2:
                pos = p
                break
            pos = p
            done += 1
    return done, pos, status
