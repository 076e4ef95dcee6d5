"""Built-in diffusion model catalog.

Each factory returns an immutable :class:`~lastparticle.process.DiffusionModel`
with both scalar and vectorized dynamics, plus jitted scalar kernels for the
single-trajectory integrator when numba is available.

* ``bm1d``      -- drifted Brownian motion dY = mu ds + sigma dW with level
  function y, absorbed at y <= -1; the workhorse with an analytic hitting
  probability oracle.
* ``coupled2d`` -- dY1 = (c Y2 - Y1^3 + Y1) ds + dW1, dY2 = -Y2 ds + dW2,
  level y1: a genuinely 2-D target whose level sets carry variance.
* ``prod2d``    -- drifted BM in y1 with an independent
  Ornstein-Uhlenbeck second coordinate; reduces to ``bm1d`` in y1.
* ``bm2d``      -- standard planar Brownian motion with level y1, used for
  stochastic-wave demonstrations.
"""
from __future__ import annotations

import numpy as np

from ._fastpath import HAVE_NUMBA, njit
from .process import DiffusionModel

_OU_STATIONARY_STD = np.sqrt(0.5)  # stationary std of dY = -Y ds + dW


def _bm1d_kernels(mu, sigma):
    if not HAVE_NUMBA:
        return None

    @njit(cache=False)
    def drift(x, out):
        out[0] = mu

    @njit(cache=False)
    def dif(x, out):
        out[0, 0] = sigma

    @njit(cache=False)
    def lev(x):
        return x[0]

    return (drift, dif, lev)


def bm1d(mu: float = -1.0, sigma: float = 1.0, step: float = 1e-3,
         max_steps: int = 200_000) -> DiffusionModel:
    """Drifted Brownian motion on the line, started at 0."""
    mu = float(mu)
    sigma = float(sigma)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return DiffusionModel(
        dim=1,
        noise_dim=1,
        drift=lambda x: np.array([mu]),
        diffusion=lambda x: np.array([[sigma]]),
        level=lambda x: float(x[0]),
        init_sampler=lambda rng: np.zeros(1),
        step=step,
        max_steps=max_steps,
        name="bm1d",
        drift_vec=lambda x: np.full_like(x, mu),
        level_vec=lambda x: x[:, 0],
        diffusion_const=np.array([[sigma]]),
        init_sampler_vec=lambda m, rng: np.zeros((m, 1)),
        kernels=_bm1d_kernels(mu, sigma),
    )


def _coupled2d_kernels(coupling):
    if not HAVE_NUMBA:
        return None

    @njit(cache=False)
    def drift(x, out):
        out[0] = coupling * x[1] - x[0] ** 3 + x[0]
        out[1] = -x[1]

    @njit(cache=False)
    def dif(x, out):
        out[0, 0] = 1.0
        out[0, 1] = 0.0
        out[1, 0] = 0.0
        out[1, 1] = 1.0

    @njit(cache=False)
    def lev(x):
        return x[0]

    return (drift, dif, lev)


def coupled2d(coupling: float = 0.5, step: float = 1e-3,
              max_steps: int = 200_000) -> DiffusionModel:
    """Double-well first coordinate driven by an independent OU coordinate.

    Starts on {y1 = 0} with y2 drawn from the OU stationary law N(0, 1/2).
    """
    c = float(coupling)

    def drift_vec(x):
        out = np.empty_like(x)
        out[:, 0] = c * x[:, 1] - x[:, 0] ** 3 + x[:, 0]
        out[:, 1] = -x[:, 1]
        return out

    def init_vec(m, rng):
        out = np.zeros((m, 2))
        out[:, 1] = _OU_STATIONARY_STD * rng.normals(m)
        return out

    return DiffusionModel(
        dim=2,
        noise_dim=2,
        drift=lambda x: np.array([c * x[1] - x[0] ** 3 + x[0], -x[1]]),
        diffusion=lambda x: np.eye(2),
        level=lambda x: float(x[0]),
        init_sampler=lambda rng: np.array(
            [0.0, _OU_STATIONARY_STD * float(rng.normals(1)[0])]),
        step=step,
        max_steps=max_steps,
        name="coupled2d",
        drift_vec=drift_vec,
        level_vec=lambda x: x[:, 0],
        diffusion_const=np.eye(2),
        init_sampler_vec=init_vec,
        kernels=_coupled2d_kernels(c),
    )


def _prod2d_kernels(mu):
    if not HAVE_NUMBA:
        return None

    @njit(cache=False)
    def drift(x, out):
        out[0] = mu
        out[1] = -x[1]

    @njit(cache=False)
    def dif(x, out):
        out[0, 0] = 1.0
        out[0, 1] = 0.0
        out[1, 0] = 0.0
        out[1, 1] = 1.0

    @njit(cache=False)
    def lev(x):
        return x[0]

    return (drift, dif, lev)


def prod2d(mu: float = -1.0, step: float = 1e-3,
           max_steps: int = 200_000) -> DiffusionModel:
    """Drifted BM in y1 with an independent OU passenger coordinate y2."""
    mu = float(mu)

    def drift_vec(x):
        out = np.empty_like(x)
        out[:, 0] = mu
        out[:, 1] = -x[:, 1]
        return out

    def init_vec(m, rng):
        out = np.zeros((m, 2))
        out[:, 1] = _OU_STATIONARY_STD * rng.normals(m)
        return out

    return DiffusionModel(
        dim=2,
        noise_dim=2,
        drift=lambda x: np.array([mu, -x[1]]),
        diffusion=lambda x: np.eye(2),
        level=lambda x: float(x[0]),
        init_sampler=lambda rng: np.array(
            [0.0, _OU_STATIONARY_STD * float(rng.normals(1)[0])]),
        step=step,
        max_steps=max_steps,
        name="prod2d",
        drift_vec=drift_vec,
        level_vec=lambda x: x[:, 0],
        diffusion_const=np.eye(2),
        init_sampler_vec=init_vec,
        kernels=_prod2d_kernels(mu),
    )


def _bm2d_kernels():
    if not HAVE_NUMBA:
        return None

    @njit(cache=False)
    def drift(x, out):
        out[0] = 0.0
        out[1] = 0.0

    @njit(cache=False)
    def dif(x, out):
        out[0, 0] = 1.0
        out[0, 1] = 0.0
        out[1, 0] = 0.0
        out[1, 1] = 1.0

    @njit(cache=False)
    def lev(x):
        return x[0]

    return (drift, dif, lev)


def bm2d(step: float = 1e-3, max_steps: int = 2_000_000) -> DiffusionModel:
    """Standard planar Brownian motion started at the origin, level y1."""
    return DiffusionModel(
        dim=2,
        noise_dim=2,
        drift=lambda x: np.zeros(2),
        diffusion=lambda x: np.eye(2),
        level=lambda x: float(x[0]),
        init_sampler=lambda rng: np.zeros(2),
        step=step,
        max_steps=max_steps,
        name="bm2d",
        drift_vec=lambda x: np.zeros_like(x),
        level_vec=lambda x: x[:, 0],
        diffusion_const=np.eye(2),
        init_sampler_vec=lambda m, rng: np.zeros((m, 2)),
        kernels=_bm2d_kernels(),
    )


CATALOG = {
    "bm1d": bm1d,
    "coupled2d": coupled2d,
    "prod2d": prod2d,
    "bm2d": bm2d,
}


def build_model(name: str, params: dict | None = None,
                step: float | None = None,
                max_steps: int | None = None) -> DiffusionModel:
    """Instantiate a catalog model by name with optional overrides."""
    if name not in CATALOG:
        raise KeyError(f"unknown model {name!r}; catalog: {sorted(CATALOG)}")
    kwargs = dict(params or {})
    if step is not None:
        kwargs["step"] = step
    if max_steps is not None:
        kwargs["max_steps"] = max_steps
    return CATALOG[name](**kwargs)
