"""Level-indexed processes and the killed-process particle driver.

The level-indexed process (stochastic wave) of a stopped trajectory assigns
to each level t the trajectory's first state strictly above t, or a cemetery
symbol once the trajectory can no longer clear t.  Running N copies of such
a killed process level-synchronously, and reviving every killed particle
from a uniformly chosen survivor, reproduces the last-particle engine when
the level grid contains every realized branching level; the two engines then
agree draw for draw under the shared stream discipline.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ams import AmsRun, ExplosionError, SelectionError, uniform_other
from .batch import simulate_batch
from .levelset import CommittorEstimate, apply_observable
from .process import (CensoredPathError, DiffusionModel, Status, Trajectory,
                      first_crossing_index, resume_path, simulate_path)
from .rng import RngStream, as_family

_EXPLOSION_LOG_P = np.log(1e6)


class _Cemetery:
    __slots__ = ()

    def __repr__(self):
        return "CEMETERY"


#: Absorbing symbol for killed wave states; observables vanish there.
CEMETERY = _Cemetery()

# Default displacement tolerance for recording wave jumps: 1e-3 times the
# level-range diameter (the slab spans levels -1..1).
DEFAULT_JUMP_TOL = 2e-3


@dataclass(frozen=True)
class LevelIndexedPath:
    """One sampled stochastic wave read on a level grid.

    ``states[k]`` is the entrance state at ``grid[k]`` or None once dead;
    ``death_level`` is the first grid level at which the path was dead.
    ``jumps`` records, per grid increment whose entrance state moved by more
    than ``jump_tol``, the level of the post-move entrance state (a precise
    path value, so jump levels carry no grid atoms).
    """

    grid: np.ndarray
    states: tuple
    death_level: Optional[float]
    jumps: np.ndarray
    jump_tol: float

    @property
    def alive_mask(self) -> np.ndarray:
        return np.array([s is not None for s in self.states])


def level_indexed_sample(model: DiffusionModel, x0, level_grid,
                         rng: RngStream,
                         jump_tol: float = DEFAULT_JUMP_TOL
                         ) -> LevelIndexedPath:
    """Sample one wave: simulate a stopped trajectory and read its crossings.

    ``x0`` must lie on the zero level set.  The path is alive at a grid
    level t exactly when the trajectory strictly exceeds t, i.e. while
    ``score > t`` (success keeps it alive through t = 1).
    """
    grid = np.asarray(sorted(float(t) for t in level_grid))
    if grid.size == 0 or grid[0] < 0.0 or grid[-1] > 1.0:
        raise ValueError("level_grid must be nonempty within [0, 1]")
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    if abs(float(model.level(x0))) > model.level_tol:
        raise ValueError("x0 is not on the zero level set")
    traj = simulate_path(model, x0, rng)
    if traj.status is Status.CENSORED:
        raise CensoredPathError("underlying trajectory censored; raise "
                                "max_steps")
    states = []
    death_level = None
    for t in grid:
        alive = traj.status is Status.REACHED_TOP or traj.score > t
        if alive:
            k = first_crossing_index(traj, t) if t < 1.0 else len(traj) - 1
            states.append(traj.states[k])
        else:
            states.append(None)
            if death_level is None:
                death_level = float(t)
    jumps = []
    for k in range(len(grid) - 1):
        a, b = states[k], states[k + 1]
        if a is None or b is None:
            continue
        if float(np.linalg.norm(b - a)) > jump_tol:
            kb = first_crossing_index(traj, grid[k + 1]) \
                if grid[k + 1] < 1.0 else len(traj) - 1
            jumps.append(float(traj.levels[kb]))
    return LevelIndexedPath(grid=grid, states=tuple(states),
                            death_level=death_level,
                            jumps=np.asarray(jumps), jump_tol=jump_tol)


class KilledProcessSampler(ABC):
    """Abstract killed Markov input of the particle driver.

    States are opaque; the driver only needs three things: fresh initial
    states, level advancement that may return :data:`CEMETERY`, and rebirth
    from a survivor's state at a given level.  Time-homogeneity in the level
    variable and absorption at the cemetery are the sampler's contract.
    """

    @abstractmethod
    def initial_state(self, rng: RngStream):
        """Draw a fresh state at level 0 (may consume the whole stream)."""

    @abstractmethod
    def advance(self, state, t_from: float, t_to: float, rng: RngStream):
        """Move a live state from level t_from to t_to, or CEMETERY."""

    def rebirth(self, survivor_state, level: float, rng: RngStream):
        """Revived state adopting the survivor at ``level``."""
        return survivor_state

    def observe(self, state, level: float):
        """A point in R^d summarizing the state at ``level`` (or None)."""
        return None

    def score_of(self, state) -> Optional[float]:
        return None


class BernoulliKillingSampler(KilledProcessSampler):
    """Synthetic point sampler dying with probability q per grid increment."""

    def __init__(self, death_prob: float, dim: int = 1):
        if not 0.0 <= death_prob < 1.0:
            raise ValueError("death probability must be in [0, 1)")
        self.death_prob = death_prob
        self.dim = dim

    def initial_state(self, rng):
        return np.zeros(self.dim)

    def advance(self, state, t_from, t_to, rng):
        if t_to > t_from and rng.uniforms(()) < self.death_prob:
            return CEMETERY
        return state

    def observe(self, state, level):
        return state


class AmsPathSampler(KilledProcessSampler):
    """Wave sampler whose states are full stopped trajectories.

    The future of each trajectory is simulated at birth, so advancing costs
    no randomness: a state survives level t exactly while its score strictly
    exceeds t (success survives everything).  Rebirth clones the survivor's
    path up to its first state strictly above the death level and resumes
    it with the event's own stream, which is precisely the engine's cloning
    step.
    """

    def __init__(self, model: DiffusionModel, censor_policy: str = "error"):
        self.model = model
        self.censor_policy = censor_policy

    def _check(self, traj: Trajectory) -> Trajectory:
        if traj.status is Status.CENSORED and self.censor_policy == "error":
            raise CensoredPathError("trajectory censored at the step budget")
        return traj

    def initial_state(self, rng):
        x0 = np.asarray(self.model.init_sampler(rng), dtype=float)
        return self._check(simulate_path(self.model, x0, rng))

    def advance(self, traj, t_from, t_to, rng):
        if traj.status is Status.REACHED_TOP or traj.score > t_to:
            return traj
        return CEMETERY

    def rebirth(self, survivor, level, rng):
        sigma = first_crossing_index(survivor, level)
        if sigma is None:
            raise SelectionError("survivor does not clear the death level")
        return self._check(resume_path(self.model, survivor, sigma, rng))

    def observe(self, traj, level):
        k = first_crossing_index(traj, level) if level < 1.0 \
            else len(traj) - 1
        return traj.states[k]

    def score_of(self, traj):
        return traj.score


def ams_as_fv_sampler(model: DiffusionModel,
                      censor_policy: str = "error") -> AmsPathSampler:
    """The killed-process sampler that makes the driver replay the engine."""
    return AmsPathSampler(model, censor_policy)


@dataclass(frozen=True)
class FvBranching:
    j: int
    level: float
    killed: int
    parent: int


@dataclass(frozen=True)
class FvResult:
    """Results of one level-synchronous particle run."""

    grid: np.ndarray
    n_particles: int
    branchings: tuple
    p_per_level: np.ndarray
    final_states: tuple
    final_scores: Optional[np.ndarray]
    populations: Optional[tuple]
    max_deaths_per_level: int

    @property
    def n_branchings(self) -> int:
        return len(self.branchings)

    @property
    def p_final(self) -> float:
        return (1.0 - 1.0 / self.n_particles) ** len(self.branchings)


def run_fleming_viot(sampler: KilledProcessSampler, n_particles: int,
                     level_grid, seed_or_family,
                     keep_populations: bool = False,
                     max_branchings: Optional[int] = None,
                     replicate: int = 0) -> FvResult:
    """Evolve N copies of a killed process with uniform rebirth.

    The grid is canonicalized to start at 0 and end at 1.  At each grid
    level, killed particles are processed in index order: each is revived
    from a uniformly chosen currently-alive particle, consuming one draw
    from the shared selection stream per death.  All particles dying in one
    increment with no survivor is an error.
    """
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    family = as_family(seed_or_family, replicate)
    grid = np.unique(np.asarray([float(t) for t in level_grid]))
    if grid.size and (grid[0] < 0.0 or grid[-1] > 1.0):
        raise ValueError("level_grid entries must lie in [0, 1]")
    if grid.size == 0 or grid[0] > 0.0:
        grid = np.concatenate([[0.0], grid])
    if grid[-1] < 1.0:
        grid = np.concatenate([grid, [1.0]])
    if max_branchings is None:
        max_branchings = int(np.ceil(100 * n_particles * _EXPLOSION_LOG_P))

    select_stream = family.select()
    # Lifetime streams: a particle draws from its init stream until its
    # first rebirth, then from the stream of the branching that revived it.
    streams = [family.init(n) for n in range(n_particles)]
    states = [sampler.initial_state(streams[n]) for n in range(n_particles)]
    branchings: list[FvBranching] = []
    p_per_level = np.empty(grid.size)
    populations = [] if keep_populations else None
    max_deaths = 0

    t_prev = grid[0]
    for gi, t in enumerate(grid):
        dead = []
        for n in range(n_particles):
            nxt = sampler.advance(states[n], t_prev, t, streams[n])
            if nxt is CEMETERY:
                states[n] = CEMETERY
                dead.append(n)
            else:
                states[n] = nxt
        max_deaths = max(max_deaths, len(dead))
        for n in dead:
            if len(branchings) >= max_branchings:
                raise ExplosionError(
                    f"exceeded {max_branchings} branchings; the run does "
                    "not appear to terminate")
            eligible = [m for m in range(n_particles)
                        if states[m] is not CEMETERY]
            parent = uniform_other(select_stream, eligible)
            j = len(branchings) + 1
            bstream = family.branch(j)
            states[n] = sampler.rebirth(states[parent], float(t), bstream)
            streams[n] = bstream
            branchings.append(FvBranching(j=j, level=float(t), killed=n,
                                          parent=parent))
        p_per_level[gi] = (1.0 - 1.0 / n_particles) ** len(branchings)
        if keep_populations:
            obs = [sampler.observe(s, float(t)) for s in states]
            populations.append(None if any(o is None for o in obs)
                               else np.asarray(obs, dtype=float))
        t_prev = t

    score_list = [sampler.score_of(s) for s in states]
    final_scores = (np.asarray(score_list, dtype=float)
                    if all(s is not None for s in score_list) else None)
    return FvResult(grid=grid, n_particles=n_particles,
                    branchings=tuple(branchings), p_per_level=p_per_level,
                    final_states=tuple(states), final_scores=final_scores,
                    populations=tuple(populations) if keep_populations
                    else None,
                    max_deaths_per_level=max_deaths)


def event_grid(run: AmsRun) -> np.ndarray:
    """The grid on which the driver replays a given engine run exactly."""
    return np.unique(np.concatenate([[0.0], run.taus, [1.0]]))


def semigroup_apply(model: DiffusionModel, x, h: float, phi, m: int,
                    rng: RngStream,
                    censored_tol: float = 0.01) -> CommittorEstimate:
    """Monte Carlo application of the wave semigroup: E[phi(X_h) | X_0 = x].

    The observable vanishes at the cemetery.  ``h`` is a level increment
    with ``level(x) + h <= 1``; ``h = 0`` returns ``phi(x)`` exactly.
    """
    x = np.asarray(x, dtype=float).reshape(model.dim)
    t0 = float(model.level(x))
    u = t0 + h
    if h < 0 or u > model.top_level + 1e-12:
        raise ValueError("need 0 <= h <= 1 - level(x)")
    if h == 0.0:
        return CommittorEstimate(value=float(phi(x)), std_error=0.0,
                                 n_samples=0)
    u = min(u, model.top_level)
    starts = np.broadcast_to(x, (m, model.dim))
    res = simulate_batch(model, starts, rng, record_level=u)
    n_censored = res.n_censored
    if n_censored > censored_tol * m:
        raise CensoredPathError(
            f"{n_censored}/{m} samples censored (> {censored_tol:.0%})")
    values = np.zeros(m)
    hit = res.crossed
    if hit.any():
        values[hit] = apply_observable(phi, res.crossing_state[hit])
    mean = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    return CommittorEstimate(value=mean, std_error=se, n_samples=m,
                             n_censored=n_censored)
