"""Stopped diffusion trajectories under fixed-step Euler-Maruyama.

A trajectory is integrated from its start until the first grid state whose
level strictly exceeds the top level (success), the first state at or below
the absorbing threshold (absorption), or the step budget (censoring).  All
crossing conventions are strict, the entrance state at a level is the first
overshooting grid state, and a successful trajectory's score is capped at
exactly 1 so that success tests are exact in floating point.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Optional

import numpy as np

from . import _fastpath
from .rng import RngStream


class Status(IntEnum):
    """Terminal state of a trajectory."""

    CENSORED = 0
    REACHED_TOP = 1
    ABSORBED = 2


class CensoredPathError(RuntimeError):
    """Raised by policies that treat a censored trajectory as a hard error."""


# Block sizes for Gaussian draws; grows so short resampled pieces stay cheap.
_BLOCK_SCHEDULE = (128, 512, 2048, 8192)


@dataclass(frozen=True)
class DiffusionModel:
    """A stopped diffusion: dynamics, level function, absorbing set, start law.

    Parameters
    ----------
    dim, noise_dim : int
        State dimension d and number of independent Brownian drivers.
    drift : callable
        ``(d,) -> (d,)`` drift vector field.
    diffusion : callable
        ``(d,) -> (d, noise_dim)`` diffusion matrix field.
    level : callable
        ``(d,) -> float`` level (reaction-coordinate) function.
    init_sampler : callable
        ``RngStream -> (d,)`` sampler of the initial law on the zero level
        set; every drawn state must satisfy ``|level(x)| <= level_tol``.
    step : float
        Euler-Maruyama time step h.
    max_steps : int
        Step budget after which a path is censored.
    absorb_threshold : float
        The absorbing set is ``{level <= absorb_threshold}``; must be < 0.
    top_level : float
        Success level, fixed at 1.

    The ``*_vec`` attributes are optional vectorized forms used by the
    batched sampler, ``diffusion_const`` short-circuits constant diffusion
    matrices, and ``kernels`` holds jitted scalar callbacks for the
    single-trajectory integrator.  Models are immutable and safe to share.
    """

    dim: int
    noise_dim: int
    drift: Callable
    diffusion: Callable
    level: Callable
    init_sampler: Callable
    step: float
    max_steps: int
    absorb_threshold: float = -1.0
    top_level: float = 1.0
    level_tol: float = 1e-9
    name: str = "custom"
    drift_vec: Optional[Callable] = None
    diffusion_vec: Optional[Callable] = None
    level_vec: Optional[Callable] = None
    diffusion_const: Optional[np.ndarray] = None
    init_sampler_vec: Optional[Callable] = None
    kernels: Optional[tuple] = None

    def __post_init__(self):
        if self.dim < 1 or self.noise_dim < 1:
            raise ValueError("dim and noise_dim must be positive")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if not self.absorb_threshold < 0.0 < self.top_level:
            raise ValueError("need absorb_threshold < 0 < top_level")
        if self.top_level != 1.0:
            raise ValueError("top_level is fixed at 1")
        if self.diffusion_const is not None:
            mat = np.asarray(self.diffusion_const, dtype=float)
            if mat.shape != (self.dim, self.noise_dim):
                raise ValueError("diffusion_const has wrong shape")
            object.__setattr__(self, "diffusion_const", mat)

    def eval_level(self, x) -> float:
        return float(self.level(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class Trajectory:
    """A discretized stopped path with terminal status and cached score.

    ``states[k]`` is the state after ``k`` steps, ``levels[k]`` its level.
    The sequence is never extended past the stopping index; for a successful
    path exactly the last stored level exceeds 1.  ``score`` is the running
    maximum of the levels capped at 1, and equals 1 iff the path succeeded.
    """

    states: np.ndarray
    levels: np.ndarray
    status: Status
    score: float

    def __post_init__(self):
        self.states.flags.writeable = False
        self.levels.flags.writeable = False

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]


def _run_blocks(model: DiffusionModel, x: np.ndarray, rng: RngStream,
                budget: int):
    """Integrate from ``x`` (mutated) for at most ``budget`` steps.

    Returns ``(states, levels, status_code, run_max, used)`` where the arrays
    exclude the starting state.
    """
    h = model.step
    sqh = np.sqrt(h)
    a_thr = model.absorb_threshold
    top = model.top_level
    n_noise = model.noise_dim
    use_fast = _fastpath.HAVE_NUMBA and model.kernels is not None

    state_chunks = []
    level_chunks = []
    used = 0
    run_max = -np.inf
    status_code = 0
    block_i = 0
    while used < budget:
        block = min(_BLOCK_SCHEDULE[min(block_i, len(_BLOCK_SCHEDULE) - 1)],
                    budget - used)
        block_i += 1
        normals = rng.raw_normals((block, n_noise))
        states = np.empty((block, model.dim))
        levels = np.empty(block)
        if use_fast:
            used_b, status_code = _fastpath.em_block(
                x, normals, h, sqh, a_thr, top,
                model.kernels[0], model.kernels[1], model.kernels[2],
                states, levels)
        else:
            used_b, status_code = _fastpath.em_block_py(
                model.drift, model.diffusion, model.level,
                x, normals, h, sqh, a_thr, top, states, levels)
        rng.counter += used_b * n_noise
        if used_b:
            state_chunks.append(states[:used_b])
            level_chunks.append(levels[:used_b])
            run_max = max(run_max, float(levels[:used_b].max()))
            used += used_b
        if status_code != 0:
            break
    if state_chunks:
        all_states = np.concatenate(state_chunks, axis=0)
        all_levels = np.concatenate(level_chunks, axis=0)
    else:
        all_states = np.empty((0, model.dim))
        all_levels = np.empty(0)
    return all_states, all_levels, status_code, run_max, used


def simulate_path(model: DiffusionModel, x0, rng: RngStream) -> Trajectory:
    """Simulate one stopped trajectory from ``x0``.

    Consumes ``noise_dim`` Gaussian draws per realized step, step by step;
    ``rng`` must be a fresh stream dedicated to this call (the integrator
    reads draws in blocks, so the stream position after the call is not
    meaningful).  Censoring is returned as a status, never raised.
    """
    x0 = np.array(x0, dtype=float).reshape(model.dim)
    lv0 = float(model.level(x0))
    if lv0 <= model.absorb_threshold:
        raise ValueError("start state is already absorbed "
                         f"(level {lv0} <= {model.absorb_threshold})")
    if lv0 > model.top_level:
        return Trajectory(x0[None, :].copy(), np.array([lv0]),
                          Status.REACHED_TOP, 1.0)

    states, levels, code, run_max, _ = _run_blocks(
        model, x0.copy(), rng, model.max_steps)
    all_states = np.concatenate([x0[None, :], states], axis=0)
    all_levels = np.concatenate([[lv0], levels])
    status = Status(code)
    if status is Status.REACHED_TOP:
        score = 1.0
    else:
        score = min(1.0, max(lv0, run_max))
    return Trajectory(all_states, all_levels, status, score)


def resume_path(model: DiffusionModel, prefix: Trajectory, k: int,
                rng: RngStream) -> Trajectory:
    """Extend ``prefix.states[:k+1]`` with a fresh simulation.

    The continuation is a Markov restart from ``states[k]``: it depends only
    on that state and on ``rng``.  Stopping rules are those of
    :func:`simulate_path` with the remaining step budget
    ``max_steps - k``.
    """
    if not 0 <= k < len(prefix):
        raise IndexError(f"prefix index {k} out of range")
    pre_states = prefix.states[: k + 1].copy()
    pre_levels = prefix.levels[: k + 1].copy()
    lv_k = float(pre_levels[-1])
    pre_max = float(pre_levels.max())
    if lv_k <= model.absorb_threshold:
        raise ValueError("prefix endpoint is absorbed; cannot resume")
    if lv_k > model.top_level:
        return Trajectory(pre_states, pre_levels, Status.REACHED_TOP, 1.0)
    if pre_max > model.top_level:
        raise ValueError("prefix crosses the top level before index k")

    budget = model.max_steps - k
    if budget <= 0:
        return Trajectory(pre_states, pre_levels, Status.CENSORED,
                          min(1.0, pre_max))
    x = pre_states[-1].copy()
    states, levels, code, run_max, _ = _run_blocks(model, x, rng, budget)
    all_states = np.concatenate([pre_states, states], axis=0)
    all_levels = np.concatenate([pre_levels, levels])
    status = Status(code)
    if status is Status.REACHED_TOP:
        score = 1.0
    else:
        score = min(1.0, max(pre_max, run_max))
    return Trajectory(all_states, all_levels, status, score)


def first_crossing_index(traj: Trajectory, t: float) -> Optional[int]:
    """Smallest index whose level strictly exceeds ``t``, if any."""
    mask = traj.levels > t
    if not mask.any():
        return None
    return int(mask.argmax())


def score(traj: Trajectory) -> float:
    """The trajectory's score (cached at simulation time)."""
    return traj.score
