"""The last-particle splitting engine.

The engine keeps N stopped trajectories.  At each iteration the particle
with the smallest score is killed at its score tau, a parent is drawn
uniformly among the particles whose score strictly exceeds tau, and the
killed particle is rebuilt from the parent's path cloned up to its first
state strictly above tau and continued with fresh randomness.  The run ends
when every score equals 1, and the reach probability of level t is
estimated by (1 - 1/N)^{J_t} with J_t the number of kills at levels <= t.

Randomness discipline: one stream for all parent selections (consumed in
event order), one stream per initial particle lifetime, one stream per
branching event.  This makes runs replayable and lets the level-synchronous
driver in :mod:`lastparticle.flemingviot` reproduce a run draw for draw.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .process import (CensoredPathError, DiffusionModel, Status, Trajectory,
                      first_crossing_index, resume_path, simulate_path)
from .rng import RngStream, StreamFamily, as_family

# Default branching budget: a generous multiple of the expected event count
# for success probabilities down to 1e-6.
_EXPLOSION_LOG_P = np.log(1e6)


class ExplosionError(RuntimeError):
    """Raised when the branching count exceeds its budget.

    This signals a run that cannot terminate in reasonable time: from some
    visited states the success probability is (numerically) zero, or the
    step/branching budgets are far too small for the model at hand.
    """


class SelectionError(RuntimeError):
    """Raised when no valid parent exists (all scores at the minimum)."""


@dataclass
class Particle:
    """One trajectory slot in the particle system."""

    id: int
    traj: Trajectory

    @property
    def score(self) -> float:
        return self.traj.score


@dataclass(frozen=True)
class BranchingEvent:
    """One kill-and-rebranch step.

    ``tau`` is the killed particle's score, ``sigma_index`` the index on the
    parent's path of its first state strictly above ``tau``.
    """

    j: int
    tau: float
    killed: int
    parent: int
    sigma_index: int


@dataclass(frozen=True)
class LevelSnapshot:
    """The particle population frozen at a grid level t.

    ``entrance_states[n]`` is particle n's first state strictly above t and
    ``j_t`` the number of branchings at levels <= t, so that
    ``p_t = (1 - 1/N)^{j_t}``.
    """

    t: float
    j_t: int
    entrance_states: np.ndarray   # (N, d)
    entrance_indices: np.ndarray  # (N,)
    entrance_levels: np.ndarray   # (N,)
    p_t: float


@dataclass
class AmsDiagnostics:
    """Counters accumulated over one run."""

    selections: int = 0
    tie_events: int = 0
    censored_paths: int = 0
    tau_decreases: int = 0
    entrance_violations: int = 0


@dataclass(frozen=True)
class AmsRun:
    """Results of one last-particle run."""

    model: DiffusionModel
    n_particles: int
    seed: int
    replicate: int
    events: tuple
    snapshots: tuple
    final_scores: np.ndarray
    diagnostics: AmsDiagnostics
    final_trajectories: Optional[tuple] = None

    @property
    def j1(self) -> int:
        return len(self.events)

    @property
    def p1(self) -> float:
        return (1.0 - 1.0 / self.n_particles) ** len(self.events)

    @property
    def taus(self) -> np.ndarray:
        return np.array([e.tau for e in self.events])


def _fresh_trajectory(model: DiffusionModel, rng: RngStream,
                      censor_policy: str,
                      diag: AmsDiagnostics) -> Trajectory:
    x0 = np.asarray(model.init_sampler(rng), dtype=float).reshape(model.dim)
    lv0 = float(model.level(x0))
    if abs(lv0) > model.level_tol:
        raise ValueError(
            f"init_sampler produced |level| = {abs(lv0)} > tol")
    traj = simulate_path(model, x0, rng)
    return _apply_censor_policy(traj, censor_policy, diag)


def _apply_censor_policy(traj: Trajectory, policy: str,
                         diag: AmsDiagnostics) -> Trajectory:
    if traj.status is Status.CENSORED:
        diag.censored_paths += 1
        if policy == "error":
            raise CensoredPathError(
                "trajectory censored at the step budget; raise max_steps "
                "or run with censor_policy='absorb'")
        warnings.warn("censored trajectory treated as absorbed",
                      RuntimeWarning, stacklevel=3)
    return traj


def initialize_particles(model: DiffusionModel, n_particles: int,
                         family: StreamFamily,
                         censor_policy: str = "error",
                         diagnostics: Optional[AmsDiagnostics] = None
                         ) -> list[Particle]:
    """Draw N starting states and run each to its stop."""
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    diag = diagnostics if diagnostics is not None else AmsDiagnostics()
    return [
        Particle(n, _fresh_trajectory(model, family.init(n), censor_policy,
                                      diag))
        for n in range(n_particles)
    ]


def uniform_other(stream: RngStream, eligible: Sequence[int]) -> int:
    """One uniform draw from a sorted list of candidate indices.

    Shared by the event-driven engine and the level-synchronous driver so
    both consume identical selection draws.
    """
    if not eligible:
        raise SelectionError("no particle with a strictly larger score "
                             "is available for cloning")
    return eligible[stream.uniform_index(len(eligible))]


def ams_step(model: DiffusionModel, particles: list[Particle], j: int,
             select_stream: RngStream, family: StreamFamily,
             diagnostics: AmsDiagnostics,
             censor_policy: str = "error") -> Optional[BranchingEvent]:
    """Perform one kill-and-rebranch iteration; None means termination.

    Ties at the minimal score are broken towards the smallest index and
    counted; tied particles are excluded from the parent pool (they have no
    state strictly above tau to clone from).
    """
    scores = [p.score for p in particles]
    killed = int(np.argmin(scores))
    tau = scores[killed]
    if tau >= 1.0:
        return None
    diagnostics.selections += 1
    if scores.count(tau) > 1:
        diagnostics.tie_events += 1
    eligible = [n for n, s in enumerate(scores) if s > tau]
    parent = uniform_other(select_stream, eligible)
    sigma = first_crossing_index(particles[parent].traj, tau)
    if sigma is None:
        raise AssertionError("parent has no strict crossing of tau; "
                             "eligibility filter is broken")
    clone = resume_path(model, particles[parent].traj, sigma,
                        family.branch(j))
    clone = _apply_censor_policy(clone, censor_policy, diagnostics)
    particles[killed].traj = clone
    return BranchingEvent(j=j, tau=tau, killed=killed, parent=parent,
                          sigma_index=sigma)


def _take_snapshot(particles: list[Particle], t: float, j_t: int,
                   n_particles: int,
                   diag: AmsDiagnostics) -> LevelSnapshot:
    idx = np.empty(n_particles, dtype=np.int64)
    states = np.empty((n_particles, particles[0].traj.states.shape[1]))
    levels = np.empty(n_particles)
    for n, p in enumerate(particles):
        k = first_crossing_index(p.traj, t)
        if k is None:
            raise AssertionError("snapshot requested before all particles "
                                 "cleared the level")
        idx[n] = k
        states[n] = p.traj.states[k]
        levels[n] = p.traj.levels[k]
    diag.entrance_violations += int(np.count_nonzero(levels <= t))
    p_t = (1.0 - 1.0 / n_particles) ** j_t
    return LevelSnapshot(t=float(t), j_t=j_t, entrance_states=states,
                         entrance_indices=idx, entrance_levels=levels,
                         p_t=p_t)


def run_ams(model: DiffusionModel, n_particles: int, seed_or_family,
            level_grid: Sequence[float] = (),
            keep_paths: bool = False,
            censor_policy: str = "error",
            max_branchings: Optional[int] = None,
            replicate: int = 0) -> AmsRun:
    """Run the last-particle algorithm to termination.

    ``level_grid`` lists levels in [0, 1] at which population snapshots are
    recorded; a level t is materialized at the first iteration whose minimal
    score strictly exceeds t, which is exactly the population after J_t
    branchings.  ``max_branchings`` guards against non-terminating runs.
    """
    family = as_family(seed_or_family, replicate)
    grid = sorted(float(t) for t in level_grid)
    if grid and (grid[0] < 0.0 or grid[-1] > 1.0):
        raise ValueError("level_grid entries must lie in [0, 1]")
    if max_branchings is None:
        max_branchings = int(np.ceil(100 * n_particles * _EXPLOSION_LOG_P))

    diag = AmsDiagnostics()
    particles = initialize_particles(model, n_particles, family,
                                     censor_policy, diag)
    select_stream = family.select()
    events: list[BranchingEvent] = []
    snapshots: list[LevelSnapshot] = []
    pending = list(grid)
    last_tau = -np.inf

    while True:
        min_score = min(p.score for p in particles)
        while pending and min_score > pending[0]:
            snapshots.append(_take_snapshot(particles, pending.pop(0),
                                            len(events), n_particles, diag))
        if min_score >= 1.0:
            break
        if len(events) >= max_branchings:
            raise ExplosionError(
                f"exceeded {max_branchings} branchings (N = {n_particles}); "
                "the run does not appear to terminate")
        event = ams_step(model, particles, len(events) + 1, select_stream,
                         family, diag, censor_policy)
        if event is None:  # pragma: no cover - guarded by min_score above
            break
        if event.tau < last_tau:
            diag.tau_decreases += 1
        last_tau = event.tau
        events.append(event)

    # Remaining grid levels materialize against the final population,
    # including t = 1 whose entrance states are the terminal states.
    for t in pending:
        snapshots.append(_take_snapshot(particles, t, len(events),
                                        n_particles, diag))

    final_scores = np.array([p.score for p in particles])
    return AmsRun(
        model=model,
        n_particles=n_particles,
        seed=family.seed,
        replicate=family.replicate,
        events=tuple(events),
        snapshots=tuple(snapshots),
        final_scores=final_scores,
        diagnostics=diag,
        final_trajectories=tuple(p.traj for p in particles) if keep_paths
        else None,
    )


def estimate(snapshot: LevelSnapshot, phi: Callable):
    """The three estimators at one level: (p_t, eta_t(phi), gamma_t(phi))."""
    from .levelset import apply_observable

    vals = apply_observable(phi, snapshot.entrance_states)
    eta = float(vals.mean())
    return snapshot.p_t, eta, snapshot.p_t * eta


def path_observable_estimate(run: AmsRun, psi: Callable):
    """Average a path functional over the N final stopped trajectories.

    Returns ``(gamma_1(psi), eta_1(psi))`` where gamma = p_1 * eta.  The run
    must have been produced with ``keep_paths=True``.
    """
    if run.final_trajectories is None:
        raise ValueError("run was made without keep_paths=True")
    vals = np.array([float(psi(traj)) for traj in run.final_trajectories])
    eta = float(vals.mean())
    return run.p1 * eta, eta
