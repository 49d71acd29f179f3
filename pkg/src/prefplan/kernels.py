"""Kernel backend selection.

The compiled extension is used when importable; set ``PREFPLAN_PURE_PYTHON=1``
to force the fallback.
"""

import os

from prefplan import _kernels_py

if os.environ.get("PREFPLAN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from prefplan import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

bellman_sweep = _impl.bellman_sweep
run_episodes = _impl.run_episodes
OK, NEED_UNIFORMS, STEP_CAP = _impl.OK, _impl.NEED_UNIFORMS, _impl.STEP_CAP


def backends() -> dict:
    """All importable backends by name, for equivalence tests and benchmarks."""
    out = {"python": _kernels_py}
    try:
        from prefplan import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
