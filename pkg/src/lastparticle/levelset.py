"""Level functions, committor oracles, and diffusion-condition validation.

The committor q(y) is the probability, from state y, of reaching the top
level set before the absorbing set.  In one dimension it has a closed form
through the scale function; in general it is estimated here by plain nested
Monte Carlo, never by PDE solves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .batch import simulate_batch
from .process import CensoredPathError, DiffusionModel
from .rng import RngStream

_FD_SCALE = 1e-5  # finite-difference step is _FD_SCALE * (1 + |y|)


@dataclass(frozen=True)
class LevelFunction:
    """A level function with an analytic or finite-difference gradient."""

    fn: Callable
    gradient: Optional[Callable] = None

    def __call__(self, y) -> float:
        return float(self.fn(np.asarray(y, dtype=float)))

    def grad(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.gradient is not None:
            return np.asarray(self.gradient(y), dtype=float).reshape(y.shape)
        return _fd_gradient(self.fn, y)


def _fd_gradient(fn: Callable, y: np.ndarray) -> np.ndarray:
    g = np.empty_like(y)
    for i in range(y.size):
        h = _FD_SCALE * (1.0 + abs(float(y[i])))
        up = y.copy()
        dn = y.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (float(fn(up)) - float(fn(dn))) / (2.0 * h)
    return g


def _fd_hessian_max(fn: Callable, y: np.ndarray) -> float:
    """Largest absolute second finite difference of ``fn`` at ``y``."""
    d = y.size
    f0 = float(fn(y))
    worst = 0.0
    for i in range(d):
        hi = _FD_SCALE * (1.0 + abs(float(y[i])))
        up = y.copy()
        dn = y.copy()
        up[i] += hi
        dn[i] -= hi
        worst = max(worst, abs((float(fn(up)) - 2.0 * f0 + float(fn(dn)))
                               / hi ** 2))
        for j in range(i + 1, d):
            hj = _FD_SCALE * (1.0 + abs(float(y[j])))
            pp = y.copy(); pp[i] += hi; pp[j] += hj
            pm = y.copy(); pm[i] += hi; pm[j] -= hj
            mp = y.copy(); mp[i] -= hi; mp[j] += hj
            mm = y.copy(); mm[i] -= hi; mm[j] -= hj
            val = (float(fn(pp)) - float(fn(pm)) - float(fn(mp))
                   + float(fn(mm))) / (4.0 * hi * hj)
            worst = max(worst, abs(val))
    return worst


@dataclass(frozen=True)
class CommittorEstimate:
    """A Monte Carlo committor-type estimate with its standard error."""

    value: float
    std_error: float
    n_samples: int
    n_censored: int = 0

    def agrees_with(self, other: "CommittorEstimate", n_sigma: float = 3.0,
                    extra_se: float = 0.0) -> bool:
        se = math.hypot(self.std_error, other.std_error) + extra_se
        return abs(self.value - other.value) <= n_sigma * se if se > 0 \
            else self.value == other.value


@dataclass(frozen=True)
class EllipticityReport:
    """Spot-check of the diffusion conditions on a probe set.

    ``min_quadratic_form`` is the smallest value of grad(xi)^T a grad(xi)
    over the probes (a = sigma sigma^T); the check passes when it stays
    above ``delta_min``.  Magnitudes of the drift, diffusion and level
    second differences are reported to flag blow-ups.  A grid of probes is
    an honest spot check, not a proof of uniformity.
    """

    passed: bool
    min_quadratic_form: float
    argmin_probe: np.ndarray
    delta_min: float
    n_probes: int
    drift_max_abs: float
    diffusion_max_abs: float
    level_hessian_max_abs: float


def check_ellipticity(model: DiffusionModel, probes,
                      delta_min: float) -> EllipticityReport:
    """Evaluate the non-degeneracy form grad(xi)^T a grad(xi) on probes."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.shape[1] != model.dim:
        raise ValueError("probe dimension mismatch")
    lf = LevelFunction(model.level)
    min_qf = np.inf
    argmin = probes[0]
    drift_max = 0.0
    dif_max = 0.0
    hess_max = 0.0
    for y in probes:
        b = np.asarray(model.drift(y), dtype=float)
        sig = np.asarray(model.diffusion(y), dtype=float).reshape(
            model.dim, model.noise_dim)
        g = lf.grad(y)
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(sig))
                and np.all(np.isfinite(g))):
            raise ValueError(f"non-finite model evaluation at probe {y}")
        a = sig @ sig.T
        qf = float(g @ a @ g)
        if qf < min_qf:
            min_qf = qf
            argmin = y.copy()
        drift_max = max(drift_max, float(np.max(np.abs(b))))
        dif_max = max(dif_max, float(np.max(np.abs(sig))))
        hess = _fd_hessian_max(model.level, y)
        if not np.isfinite(hess):
            raise ValueError(f"non-finite level second difference at {y}")
        hess_max = max(hess_max, hess)
    return EllipticityReport(
        passed=bool(min_qf >= delta_min),
        min_quadratic_form=float(min_qf),
        argmin_probe=argmin,
        delta_min=float(delta_min),
        n_probes=int(probes.shape[0]),
        drift_max_abs=drift_max,
        diffusion_max_abs=dif_max,
        level_hessian_max_abs=hess_max,
    )


def slab_probe_grid(box: Sequence[Sequence[float]], points_per_dim: int,
                    level: Callable, lo: float = -1.0,
                    hi: float = 1.0) -> np.ndarray:
    """Uniform grid on ``box`` filtered down to the slab {lo <= xi <= hi}."""
    axes = [np.linspace(float(a), float(b), points_per_dim)
            for a, b in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    lv = np.array([float(level(p)) for p in pts])
    return pts[(lv >= lo) & (lv <= hi)]


def committor_1d_analytic(mu: float, sigma: float, lo: float, hi: float,
                          x: float) -> float:
    """Hitting probability of ``hi`` before ``lo`` for dY = mu ds + sigma dW.

    Evaluated through the scale function s(u) = exp(-2 mu u / sigma^2);
    endpoints clamp to 0 and 1 and the mu = 0 case is the linear limit.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if lo >= hi:
        raise ValueError("need lo < hi")
    if x <= lo:
        return 0.0
    if x >= hi:
        return 1.0
    k = -2.0 * mu / sigma ** 2
    if k == 0.0:
        return (x - lo) / (hi - lo)
    return math.expm1(k * (x - lo)) / math.expm1(k * (hi - lo))


def apply_observable(phi: Callable, points: np.ndarray) -> np.ndarray:
    """Evaluate an observable on rows, vectorized when possible."""
    if points.size == 0:
        return np.empty(0)
    try:
        vals = np.asarray(phi(points), dtype=float)
        if vals.shape == (points.shape[0],):
            return vals
    except Exception:
        pass
    return np.array([float(phi(p)) for p in points])


def estimate_q(model: DiffusionModel, y, phi: Callable, m: int,
               rng: RngStream, censored_tol: float = 0.01
               ) -> CommittorEstimate:
    """Nested Monte Carlo estimate of q(phi)(y) = E_y[phi(end) 1{success}].

    ``phi`` is a bounded observable on the top level set; phi == 1 gives the
    committor.  A state already at or above the top level returns phi(y)
    exactly.  Censored samples are counted and the estimate fails hard if
    their fraction exceeds ``censored_tol``.
    """
    if m < 1:
        raise ValueError("need m >= 1")
    y = np.asarray(y, dtype=float).reshape(model.dim)
    lv = float(model.level(y))
    if lv >= model.top_level:
        return CommittorEstimate(value=float(phi(y)), std_error=0.0,
                                 n_samples=0)
    starts = np.broadcast_to(y, (m, model.dim))
    res = simulate_batch(model, starts, rng)
    n_censored = res.n_censored
    if n_censored > censored_tol * m:
        raise CensoredPathError(
            f"{n_censored}/{m} samples censored (> {censored_tol:.0%}); "
            "increase max_steps")
    values = np.zeros(m)
    succ = res.success
    if succ.any():
        values[succ] = apply_observable(phi, res.endpoint[succ])
    mean = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    return CommittorEstimate(value=mean, std_error=se, n_samples=m,
                             n_censored=n_censored)
