"""Optional numba-accelerated inner loop for the trajectory integrator.

Models may carry a triple of jitted scalar kernels ``(drift, diffusion,
level)`` with in-place signatures ``drift(x, out)``, ``diffusion(x, out2d)``
and ``level(x) -> float``.  When numba is unavailable (or a model has no
kernels) the integrator falls back to a pure-Python loop with the identical
arithmetic, operation for operation, so both paths produce bit-identical
trajectories from the same stream.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


if HAVE_NUMBA:

    @njit(cache=False)
    def em_block(x, normals, h, sqh, a_thr, top, drift_f, dif_f, lev_f,
                 states, levels):
        """Advance the Euler-Maruyama recursion over one block of draws.

        Mutates ``x`` in place; writes visited states/levels into the output
        buffers.  Returns ``(steps_used, status)`` with status 0 = ran out of
        block, 1 = crossed the top level, 2 = absorbed.
        """
        n_steps, n_noise = normals.shape
        d = x.shape[0]
        b = np.empty(d)
        s = np.empty((d, n_noise))
        for k in range(n_steps):
            drift_f(x, b)
            dif_f(x, s)
            for i in range(d):
                acc = x[i] + h * b[i]
                for j in range(n_noise):
                    acc += sqh * s[i, j] * normals[k, j]
                x[i] = acc
            lv = lev_f(x)
            for i in range(d):
                states[k, i] = x[i]
            levels[k] = lv
            if lv > top:
                return k + 1, 1
            if lv <= a_thr:
                return k + 1, 2
        return n_steps, 0

else:  # pragma: no cover - exercised only without numba
    em_block = None


def em_block_py(drift, diffusion, level, x, normals, h, sqh, a_thr, top,
                states, levels):
    """Pure-Python mirror of :func:`em_block` (same arithmetic order)."""
    n_steps, n_noise = normals.shape
    d = x.shape[0]
    for k in range(n_steps):
        b = np.asarray(drift(x), dtype=float).reshape(d)
        s = np.asarray(diffusion(x), dtype=float).reshape(d, n_noise)
        for i in range(d):
            acc = x[i] + h * b[i]
            for j in range(n_noise):
                acc += sqh * s[i, j] * normals[k, j]
            x[i] = acc
        lv = float(level(x))
        states[k] = x
        levels[k] = lv
        if lv > top:
            return k + 1, 1
        if lv <= a_thr:
            return k + 1, 2
    return n_steps, 0
