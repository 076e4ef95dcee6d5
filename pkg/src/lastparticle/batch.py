"""Vectorized simulation of many independent trajectories.

This is the workhorse behind the Monte Carlo baselines and the nested
estimators: all samples advance synchronously, finished ones are compacted
out, and only summary quantities (terminal state, step count, running-max
score, optionally the first crossing state of one recording level) are
retained.  Gaussian draws are consumed per step across the currently active
samples, so a batch is reproducible from its stream but is a different
draw-order contract than the single-trajectory integrator.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .process import DiffusionModel, Status
from .rng import RngStream


@dataclass(frozen=True)
class BatchResult:
    """Per-sample summaries of a batched run."""

    status: np.ndarray          # (m,) int8, Status codes
    steps: np.ndarray           # (m,) int64, EM steps until stop
    endpoint: np.ndarray        # (m, d) state at the stopping index
    score: np.ndarray           # (m,) running max level, capped at 1
    crossed: Optional[np.ndarray] = None        # (m,) bool
    crossing_state: Optional[np.ndarray] = None  # (m, d)

    @property
    def success(self) -> np.ndarray:
        return self.status == int(Status.REACHED_TOP)

    @property
    def n_censored(self) -> int:
        return int(np.count_nonzero(self.status == int(Status.CENSORED)))


def _drift_rows(model: DiffusionModel, x: np.ndarray) -> np.ndarray:
    if model.drift_vec is not None:
        return model.drift_vec(x)
    return np.stack([np.asarray(model.drift(row), dtype=float).reshape(-1)
                     for row in x])


def _levels_rows(model: DiffusionModel, x: np.ndarray) -> np.ndarray:
    if model.level_vec is not None:
        return np.asarray(model.level_vec(x), dtype=float)
    return np.array([float(model.level(row)) for row in x])


def _noise_rows(model: DiffusionModel, x: np.ndarray,
                z: np.ndarray) -> np.ndarray:
    if model.diffusion_const is not None:
        return z @ model.diffusion_const.T
    if model.diffusion_vec is not None:
        sig = model.diffusion_vec(x)
        return np.einsum("mdn,mn->md", sig, z)
    out = np.empty_like(x)
    for i, row in enumerate(x):
        sig = np.asarray(model.diffusion(row), dtype=float)
        out[i] = sig.reshape(model.dim, model.noise_dim) @ z[i]
    return out


def simulate_batch(model: DiffusionModel, x0, rng: RngStream,
                   record_level: Optional[float] = None,
                   max_steps: Optional[int] = None) -> BatchResult:
    """Run independent trajectories from the rows of ``x0`` to their stops.

    If ``record_level`` is given, the first state whose level strictly
    exceeds it is captured per sample (the entrance state of that level).
    Raises if any start state is already absorbed.
    """
    x = np.array(x0, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    m, d = x.shape
    if d != model.dim:
        raise ValueError(f"start states have dim {d}, model has {model.dim}")
    cap = model.max_steps if max_steps is None else int(max_steps)
    h = model.step
    sqh = np.sqrt(h)

    lv = _levels_rows(model, x)
    if np.any(lv <= model.absorb_threshold):
        bad = int(np.argmax(lv <= model.absorb_threshold))
        raise ValueError(f"start state {bad} is already absorbed")

    status = np.zeros(m, dtype=np.int8)
    steps = np.full(m, cap, dtype=np.int64)
    endpoint = x.copy()
    run_max = lv.copy()

    recording = record_level is not None
    crossed = None
    crossing_state = None
    if recording:
        crossed = lv > record_level
        crossing_state = np.full((m, d), np.nan)
        crossing_state[crossed] = x[crossed]

    top0 = lv > model.top_level
    status[top0] = int(Status.REACHED_TOP)
    steps[top0] = 0

    idx = np.nonzero(~top0)[0]
    x_act = x[idx]
    max_act = run_max[idx]
    crossed_act = crossed[idx] if recording else None

    step_no = 0
    while idx.size and step_no < cap:
        step_no += 1
        z = rng.normals((idx.size, model.noise_dim))
        x_act = x_act + h * _drift_rows(model, x_act) + sqh * _noise_rows(
            model, x_act, z)
        lv = _levels_rows(model, x_act)
        np.maximum(max_act, lv, out=max_act)
        if recording:
            newly = (~crossed_act) & (lv > record_level)
            if newly.any():
                crossing_state[idx[newly]] = x_act[newly]
                crossed[idx[newly]] = True
                crossed_act |= newly
        top = lv > model.top_level
        absorbed = lv <= model.absorb_threshold
        done = top | absorbed
        if done.any():
            done_idx = idx[done]
            status[done_idx[top[done]]] = int(Status.REACHED_TOP)
            status[done_idx[absorbed[done]]] = int(Status.ABSORBED)
            steps[done_idx] = step_no
            endpoint[done_idx] = x_act[done]
            run_max[done_idx] = max_act[done]
            keep = ~done
            idx = idx[keep]
            x_act = x_act[keep]
            max_act = max_act[keep]
            if recording:
                crossed_act = crossed_act[keep]

    if idx.size:
        # leftovers are censored at the step cap
        endpoint[idx] = x_act
        run_max[idx] = max_act

    score = np.minimum(run_max, 1.0)
    score[status == int(Status.REACHED_TOP)] = 1.0
    return BatchResult(status=status, steps=steps, endpoint=endpoint,
                       score=score, crossed=crossed,
                       crossing_state=crossing_state)


def draw_initial_states(model: DiffusionModel, m: int,
                        rng: RngStream) -> np.ndarray:
    """Draw ``m`` states from the model's initial law on the zero level set."""
    if model.init_sampler_vec is not None:
        x0 = np.asarray(model.init_sampler_vec(m, rng), dtype=float)
    else:
        x0 = np.stack([np.asarray(model.init_sampler(rng), dtype=float)
                       .reshape(model.dim) for _ in range(m)])
    lv = _levels_rows(model, x0)
    if np.any(np.abs(lv) > model.level_tol):
        bad = int(np.argmax(np.abs(lv) > model.level_tol))
        raise ValueError(
            f"init_sampler produced a state off the zero level set "
            f"(|level| = {abs(lv[bad])} at sample {bad})")
    return x0
