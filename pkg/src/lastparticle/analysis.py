"""Baselines, asymptotic-variance quadrature, and statistical diagnostics.

The central object is the asymptotic variance of the unnormalized estimator,

    sigma_1^2(phi) = p_1^2 V_eta1(phi) - p_1^2 log(p_1) eta_1(phi)^2
                     - 2 * integral_0^1 V_eta_t(q(phi)) p_t dp_t,

evaluated here by nested Monte Carlo: conditional entrance clouds at each
level node, an inner committor-type estimate per cloud point with the usual
inner-noise debiasing, and a Stieltjes trapezoid rule in the p variable.
Everything in this module is kept independent of the splitting engine so it
can serve as its oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .ams import path_observable_estimate, run_ams
from .batch import draw_initial_states, simulate_batch
from .levelset import apply_observable
from .process import DiffusionModel, Status, Trajectory
from .rng import StreamFamily, as_family


@dataclass(frozen=True)
class BoundCheck:
    """One pass/fail bound comparison with its margin."""

    name: str
    value: float
    bound: float
    passed: bool
    margin: float


@dataclass(frozen=True)
class EstimatorReport:
    """Replicate-aggregated summary of one scalar estimator."""

    values: np.ndarray
    mean: float
    variance: float
    std_error: float
    n_replicates: int
    n_particles: Optional[int] = None
    step: Optional[float] = None
    checks: dict = field(default_factory=dict)


def summarize(values, n_particles=None, step=None,
              checks=None) -> EstimatorReport:
    values = np.asarray(values, dtype=float)
    r = values.size
    var = float(values.var(ddof=1)) if r > 1 else 0.0
    return EstimatorReport(
        values=values,
        mean=float(values.mean()),
        variance=var,
        std_error=math.sqrt(var / r) if r > 0 else float("nan"),
        n_replicates=r,
        n_particles=n_particles,
        step=step,
        checks=dict(checks or {}),
    )


# ---------------------------------------------------------------------------
# Naive Monte Carlo baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NaiveReport:
    """Success-fraction baseline with conditional observables.

    ``p_hat`` carries an exact binomial standard error.  Conditional means
    are over successful samples only and are None when nothing succeeded.
    """

    m_samples: int
    n_success: int
    n_censored: int
    p_hat: float
    p_std_error: float
    cond_phi_mean: Optional[float]
    cond_phi_std_error: Optional[float]
    gamma_phi: Optional[float]
    entrance_time_mean: Optional[float]
    entrance_time_std_error: Optional[float]
    step: float


def naive_monte_carlo(model: DiffusionModel, m_samples: int, seed_or_family,
                      phi: Optional[Callable] = None,
                      psi: Optional[Callable] = None,
                      replicate: int = 0) -> NaiveReport:
    """I.i.d. baseline: simulate ``m_samples`` fresh paths and count successes.

    ``phi`` is an endpoint observable evaluated on successes; the entrance
    time (steps * h, capped at the budget) is always tracked.  ``psi``, a
    general path functional, forces per-trajectory simulation and is meant
    for small m.
    """
    if m_samples < 1:
        raise ValueError("need m_samples >= 1")
    family = as_family(seed_or_family, replicate)
    if psi is not None:
        vals = np.empty(m_samples)
        succ = np.zeros(m_samples, dtype=bool)
        censored = 0
        times = np.empty(m_samples)
        for i in range(m_samples):
            stream = family.sample(i)
            x0 = np.asarray(model.init_sampler(stream), dtype=float)
            traj = _simulate_one(model, x0, stream)
            censored += traj.status is Status.CENSORED
            succ[i] = traj.status is Status.REACHED_TOP
            vals[i] = float(psi(traj))
            times[i] = traj.n_steps * model.step
        phi_vals = vals
    else:
        x0 = draw_initial_states(model, m_samples, family.sample(0))
        res = simulate_batch(model, x0, family.sample(1))
        succ = res.success
        censored = res.n_censored
        times = res.steps.astype(float) * model.step
        phi_vals = None
        if phi is not None:
            phi_vals = np.zeros(m_samples)
            if succ.any():
                phi_vals[succ] = apply_observable(phi, res.endpoint[succ])
    n_succ = int(np.count_nonzero(succ))
    p_hat = n_succ / m_samples
    p_se = math.sqrt(p_hat * (1.0 - p_hat) / m_samples)
    cond_mean = cond_se = gamma = None
    if phi_vals is not None and n_succ > 0:
        sel = phi_vals[succ]
        cond_mean = float(sel.mean())
        cond_se = float(sel.std(ddof=1) / math.sqrt(n_succ)) \
            if n_succ > 1 else 0.0
        gamma = p_hat * cond_mean
    t_mean = t_se = None
    if n_succ > 0:
        sel = times[succ]
        t_mean = float(sel.mean())
        t_se = float(sel.std(ddof=1) / math.sqrt(n_succ)) \
            if n_succ > 1 else 0.0
    return NaiveReport(
        m_samples=m_samples, n_success=n_succ, n_censored=int(censored),
        p_hat=p_hat, p_std_error=p_se,
        cond_phi_mean=cond_mean, cond_phi_std_error=cond_se,
        gamma_phi=gamma,
        entrance_time_mean=t_mean, entrance_time_std_error=t_se,
        step=model.step)


def _simulate_one(model, x0, stream) -> Trajectory:
    from .process import simulate_path

    return simulate_path(model, x0, stream)


# ---------------------------------------------------------------------------
# Replicated splitting runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicateResult:
    """Arrays of per-replicate splitting estimates plus pooled diagnostics."""

    p_values: np.ndarray
    j1_values: np.ndarray
    gamma_values: Optional[np.ndarray]
    eta_psi_values: Optional[np.ndarray]
    n_particles: int
    n_replicates: int
    step: float
    seed: int
    tie_events: int
    selections: int
    tau_decreases: int
    entrance_violations: int
    censored_paths: int


def replicate_ams(model: DiffusionModel, n_particles: int,
                  n_replicates: int, seed: int,
                  phi: Optional[Callable] = None,
                  psi: Optional[Callable] = None,
                  level_grid: Sequence[float] = (),
                  censor_policy: str = "error",
                  first_replicate: int = 0) -> ReplicateResult:
    """Run independent splitting replicates with disjoint stream families."""
    p_vals = np.empty(n_replicates)
    j_vals = np.empty(n_replicates, dtype=np.int64)
    g_vals = np.empty(n_replicates) if phi is not None else None
    e_vals = np.empty(n_replicates) if psi is not None else None
    ties = selections = tau_dec = entr = censored = 0
    for r in range(n_replicates):
        run = run_ams(model, n_particles,
                      StreamFamily(seed, first_replicate + r),
                      level_grid=level_grid,
                      keep_paths=psi is not None or phi is not None,
                      censor_policy=censor_policy)
        p_vals[r] = run.p1
        j_vals[r] = run.j1
        if phi is not None:
            ends = np.stack([t.endpoint for t in run.final_trajectories])
            g_vals[r] = run.p1 * float(apply_observable(phi, ends).mean())
        if psi is not None:
            _, eta = path_observable_estimate(run, psi)
            e_vals[r] = eta
        d = run.diagnostics
        ties += d.tie_events
        selections += d.selections
        tau_dec += d.tau_decreases
        entr += d.entrance_violations
        censored += d.censored_paths
    return ReplicateResult(
        p_values=p_vals, j1_values=j_vals, gamma_values=g_vals,
        eta_psi_values=e_vals, n_particles=n_particles,
        n_replicates=n_replicates, step=model.step, seed=seed,
        tie_events=ties, selections=selections, tau_decreases=tau_dec,
        entrance_violations=entr, censored_paths=censored)


# ---------------------------------------------------------------------------
# Variance bounds and the variance formula by quadrature
# ---------------------------------------------------------------------------

def variance_bounds(p: float):
    """Bracket for the asymptotic variance of the probability estimator:
    (-p^2 log p, 2 p (1 - p))."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    return -p * p * math.log(p), 2.0 * p * (1.0 - p)


@dataclass(frozen=True)
class QuadratureBudgets:
    """Sampling budgets of the variance quadrature.

    ``m_p`` outer trajectories per node (for p_t and the entrance cloud),
    ``m_q`` inner trajectories per retained cloud point, ``m_eta`` the
    maximum number of cloud points kept per node.
    """

    m_p: int = 10_000
    m_q: int = 1_000
    m_eta: int = 256


@dataclass(frozen=True)
class NodeDiagnostics:
    t: float
    p_hat: float
    cloud_size: int
    v_eta_q: float                # debiased variance of q(phi) on the cloud
    inner_var_mean: float
    eta_q_mean: float             # cloud mean of q(phi)
    v_eta_q_one: float            # same for phi == 1 (committor cloud)
    q_one_mean: float
    bernoulli_cap: float          # (p1/pt)(1 - p1/pt) worst-case variance


@dataclass(frozen=True)
class VarianceDecomposition:
    """The three terms of sigma_1^2(phi) with per-node diagnostics."""

    term_v_eta1: float
    term_log: float
    term_integral: float
    total: float
    p1_hat: float
    eta1_phi: float
    nodes: tuple

    def bracket_check(self, tol: float = 0.0) -> BoundCheck:
        lower, upper = variance_bounds(self.p1_hat)
        ok = (lower - tol) <= self.total <= (upper + tol)
        margin = min(self.total - lower, upper - self.total)
        return BoundCheck("variance-bracket", self.total, upper, ok, margin)


@dataclass(frozen=True)
class _NodeData:
    t: float
    p_hat: float
    cloud: np.ndarray
    q_phi: np.ndarray        # inner estimates of q(phi) per cloud point
    q_one: np.ndarray        # inner committor estimates per cloud point
    m2_phi: np.ndarray       # inner second moments of phi(end) 1{success}
    m_q: int


def _collect_nodes(model: DiffusionModel, phi: Callable,
                   level_nodes: Sequence[float],
                   budgets: QuadratureBudgets,
                   family: StreamFamily) -> list:
    nodes = [float(t) for t in level_nodes]
    if len(nodes) < 3:
        raise ValueError("need at least K >= 2 increments (3 nodes)")
    if nodes != sorted(nodes) or nodes[0] != 0.0 or nodes[-1] != 1.0:
        raise ValueError("level nodes must be sorted with t_0 = 0, t_K = 1")
    out = []
    for k, t in enumerate(nodes):
        outer_stream = family.sample(2 * k)
        x0 = draw_initial_states(model, budgets.m_p, outer_stream)
        res = simulate_batch(model, x0, outer_stream, record_level=t)
        crossed = res.crossed
        p_hat = float(crossed.mean())
        if not crossed.any():
            raise ValueError(
                f"no trajectory crossed level {t}; increase m_p or use a "
                "coarser node grid")
        cloud = res.crossing_state[crossed][: budgets.m_eta]
        c = cloud.shape[0]
        if t >= 1.0:
            q_phi = apply_observable(phi, cloud)
            q_one = np.ones(c)
            m2_phi = q_phi ** 2
            m_q = 0
        else:
            starts = np.repeat(cloud, budgets.m_q, axis=0)
            inner = simulate_batch(model, starts, family.sample(2 * k + 1))
            succ = inner.success
            w = np.zeros(starts.shape[0])
            if succ.any():
                w[succ] = apply_observable(phi, inner.endpoint[succ])
            w = w.reshape(c, budgets.m_q)
            ind = succ.reshape(c, budgets.m_q).astype(float)
            q_phi = w.mean(axis=1)
            q_one = ind.mean(axis=1)
            m2_phi = (w ** 2).mean(axis=1)
            m_q = budgets.m_q
        out.append(_NodeData(t=t, p_hat=p_hat, cloud=cloud, q_phi=q_phi,
                             q_one=q_one, m2_phi=m2_phi, m_q=m_q))
    return out


def _debiased_variance(estimates: np.ndarray,
                       inner_vars: np.ndarray) -> tuple[float, float]:
    """Outer sample variance minus mean inner sampling variance."""
    outer = float(estimates.var(ddof=1)) if estimates.size > 1 else 0.0
    inner = float(inner_vars.mean()) if inner_vars.size else 0.0
    return outer - inner, inner


def _stieltjes_integral(p_hats: np.ndarray, v_values: np.ndarray) -> float:
    """Trapezoid rule for integral of V(t) p_t dp_t on the p-nodes."""
    total = 0.0
    for k in range(p_hats.size - 1):
        f0 = v_values[k] * p_hats[k]
        f1 = v_values[k + 1] * p_hats[k + 1]
        total += 0.5 * (f0 + f1) * (p_hats[k + 1] - p_hats[k])
    return total


def _assemble(node_data: list, q_vals: list, inner_vars: list,
              p1_hat: float, eta1: float, v_eta1: float):
    p_hats = np.array([nd.p_hat for nd in node_data])
    v_nodes = np.empty(len(node_data))
    diags = []
    for k, nd in enumerate(node_data):
        v, inner_mean = _debiased_variance(q_vals[k], inner_vars[k])
        v_nodes[k] = v
        ratio = min(1.0, p1_hat / nd.p_hat) if nd.p_hat > 0 else 1.0
        diags.append((nd, v, inner_mean, ratio * (1.0 - ratio)))
    term_integral = -2.0 * _stieltjes_integral(p_hats, v_nodes)
    term_v_eta1 = p1_hat ** 2 * v_eta1
    term_log = -p1_hat ** 2 * math.log(p1_hat) * eta1 ** 2
    total = term_v_eta1 + term_log + term_integral
    return term_v_eta1, term_log, term_integral, total, diags


def variance_formula_quadrature(model: DiffusionModel, phi: Callable,
                                level_nodes: Sequence[float],
                                budgets: QuadratureBudgets,
                                seed_or_family,
                                replicate: int = 0) -> VarianceDecomposition:
    """Evaluate the asymptotic-variance formula for gamma_1(phi) numerically.

    At each node t_k: estimate p_{t_k} and a conditional entrance cloud by
    plain Monte Carlo, estimate q(phi) at each cloud point by inner Monte
    Carlo, debias the cloud variance by the mean inner sampling variance,
    and integrate against dp_t by the trapezoid rule on the p-nodes.
    """
    family = as_family(seed_or_family, replicate)
    node_data = _collect_nodes(model, phi, level_nodes, budgets, family)
    p1_hat = node_data[-1].p_hat
    if not 0.0 < p1_hat < 1.0:
        raise ValueError(f"degenerate success estimate p1 = {p1_hat}")
    final = node_data[-1]
    eta1 = float(final.q_phi.mean())
    v_eta1 = float(final.q_phi.var(ddof=1)) if final.q_phi.size > 1 else 0.0

    q_vals, inner_vars, diags = [], [], []
    for nd in node_data:
        q_vals.append(nd.q_phi)
        if nd.m_q > 0:
            iv = (nd.m2_phi - nd.q_phi ** 2) / nd.m_q
        else:
            iv = np.zeros_like(nd.q_phi)
        inner_vars.append(iv)
    tv, tl, ti, total, raw = _assemble(node_data, q_vals, inner_vars,
                                       p1_hat, eta1, v_eta1)
    for nd, v, inner_mean, cap in raw:
        v1, _ = _debiased_variance(
            nd.q_one, nd.q_one * (1 - nd.q_one) / nd.m_q if nd.m_q
            else np.zeros_like(nd.q_one))
        diags.append(NodeDiagnostics(
            t=nd.t, p_hat=nd.p_hat, cloud_size=nd.cloud.shape[0],
            v_eta_q=v, inner_var_mean=inner_mean,
            eta_q_mean=float(nd.q_phi.mean()),
            v_eta_q_one=v1, q_one_mean=float(nd.q_one.mean()),
            bernoulli_cap=cap))
    return VarianceDecomposition(
        term_v_eta1=tv, term_log=tl, term_integral=ti, total=total,
        p1_hat=p1_hat, eta1_phi=eta1, nodes=tuple(diags))


@dataclass(frozen=True)
class EtaVarianceReport:
    """Asymptotic variance of the normalized estimator with its sandwich.

    ``value`` is sigma_1^2(phi - eta_1(phi)) / p_1^2; the sandwich is
    [V_eta1(phi), V_eta1(phi) + sup|phi - eta_1(phi)|^2 sigma^2/p_1^2
    - log p_1].
    """

    value: float
    sandwich_lower: float
    sandwich_upper: float
    within_sandwich: bool
    centering_max_abs_z: float
    sigma2_probability: float
    p1_hat: float
    eta1_phi: float
    decomposition: VarianceDecomposition


def eta_variance_formula(model: DiffusionModel, phi: Callable,
                         level_nodes: Sequence[float],
                         budgets: QuadratureBudgets,
                         seed_or_family,
                         phi_sup: Optional[float] = None,
                         noise_allowance: float = 0.25,
                         replicate: int = 0) -> EtaVarianceReport:
    """Evaluate sigma_1^2 of the centered observable and its sandwich bound.

    Shares one nested-MC node collection between the centered observable,
    the committor clouds, and the probability variance sigma^2.  The
    centering identity (the cloud mean of q(phi - eta_1(phi)) vanishes at
    every node) is reported as a max absolute z-score.
    """
    family = as_family(seed_or_family, replicate)
    node_data = _collect_nodes(model, phi, level_nodes, budgets, family)
    p1_hat = node_data[-1].p_hat
    if not 0.0 < p1_hat < 1.0:
        raise ValueError(f"degenerate success estimate p1 = {p1_hat}")
    final = node_data[-1]
    c = float(final.q_phi.mean())   # eta_1(phi) on the terminal cloud
    v_eta1_phi = float(final.q_phi.var(ddof=1))

    q_vals, inner_vars = [], []
    q_one_vals, one_inner = [], []
    max_z = 0.0
    for nd in node_data:
        q_psi = nd.q_phi - c * nd.q_one
        q_vals.append(q_psi)
        if nd.m_q > 0:
            var_w = nd.m2_phi - nd.q_phi ** 2
            var_one = nd.q_one * (1.0 - nd.q_one)
            cov = nd.q_phi - nd.q_phi * nd.q_one
            iv = (var_w + c * c * var_one - 2.0 * c * cov) / nd.m_q
            iv_one = var_one / nd.m_q
        else:
            iv = np.zeros_like(q_psi)
            iv_one = np.zeros_like(q_psi)
        inner_vars.append(iv)
        q_one_vals.append(nd.q_one)
        one_inner.append(iv_one)
        if q_psi.size > 1:
            se = math.sqrt(max(float(q_psi.var(ddof=1)), 1e-300)
                           / q_psi.size)
            max_z = max(max_z, abs(float(q_psi.mean())) / se)

    tv, tl, ti, total_psi, _ = _assemble(node_data, q_vals, inner_vars,
                                         p1_hat, 0.0, v_eta1_phi)
    value = total_psi / p1_hat ** 2

    _, _, ti_one, sigma2, _ = _assemble(node_data, q_one_vals, one_inner,
                                        p1_hat, 1.0, 0.0)
    if phi_sup is None:
        phi_sup = float(np.max(np.abs(final.q_phi - c))) \
            if final.q_phi.size else 0.0
    lower = v_eta1_phi
    upper = (v_eta1_phi + phi_sup ** 2 * sigma2 / p1_hat ** 2
             - math.log(p1_hat))
    slack = noise_allowance * max(abs(lower), abs(upper), 1e-12)
    within = (lower - slack) <= value <= (upper + slack)
    decomp = VarianceDecomposition(
        term_v_eta1=tv, term_log=tl, term_integral=ti, total=total_psi,
        p1_hat=p1_hat, eta1_phi=0.0, nodes=())
    return EtaVarianceReport(
        value=value, sandwich_lower=lower, sandwich_upper=upper,
        within_sandwich=within, centering_max_abs_z=max_z,
        sigma2_probability=sigma2, p1_hat=p1_hat, eta1_phi=c,
        decomposition=decomp)


# ---------------------------------------------------------------------------
# CLT, step-count, and L2 diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CltReport:
    """Normality and variance diagnostics for replicate p-estimates."""

    n_replicates: int
    n_particles: int
    p_ref: float
    mean_p: float
    bias: float
    empirical_variance: float     # variance of sqrt(N) (p^N - mean)
    variance_std_error: float
    skewness: float
    excess_kurtosis: float
    skew_gate: float
    kurtosis_gate: float
    gates_passed: bool
    bracket_lower: float
    bracket_upper: float
    bracket_passed: bool


def clt_diagnostics(p_values, n_particles: int, p_ref: float) -> CltReport:
    """Gate the replicate distribution of p-estimates against normality.

    The empirical CLT variance is N times the sample variance (centered at
    the sample mean, so the finite-h bias is reported separately as a mean
    shift).  Skewness and excess kurtosis gates are 4 sigma under the
    normal null; the bracket check allows 3 standard errors of the variance
    estimate on each side.
    """
    p_values = np.asarray(p_values, dtype=float)
    r = p_values.size
    if r < 100:
        raise ValueError("need at least 100 replicates")
    mean_p = float(p_values.mean())
    centered = p_values - mean_p
    m2 = float(np.mean(centered ** 2))
    m3 = float(np.mean(centered ** 3))
    m4 = float(np.mean(centered ** 4))
    emp_var = n_particles * float(p_values.var(ddof=1))
    var_se = emp_var * math.sqrt(2.0 / (r - 1))
    skew = m3 / m2 ** 1.5 if m2 > 0 else 0.0
    kurt = m4 / m2 ** 2 - 3.0 if m2 > 0 else 0.0
    skew_gate = 4.0 * math.sqrt(6.0 / r)
    kurt_gate = 4.0 * math.sqrt(24.0 / r)
    lower, upper = variance_bounds(p_ref)
    bracket_ok = (lower - 3.0 * var_se) <= emp_var <= (upper + 3.0 * var_se)
    return CltReport(
        n_replicates=r, n_particles=n_particles, p_ref=p_ref,
        mean_p=mean_p, bias=mean_p - p_ref,
        empirical_variance=emp_var, variance_std_error=var_se,
        skewness=skew, excess_kurtosis=kurt,
        skew_gate=skew_gate, kurtosis_gate=kurt_gate,
        gates_passed=bool(abs(skew) < skew_gate and abs(kurt) < kurt_gate),
        bracket_lower=lower, bracket_upper=upper,
        bracket_passed=bool(bracket_ok))


@dataclass(frozen=True)
class J1Report:
    """Step-count law diagnostics: J_1 ~= -N log p."""

    n_replicates: int
    n_particles: int
    p_ref: float
    mean_j1: float
    predicted_j1: float
    relative_error: float
    dispersion: float             # std(J_1) / sqrt(N)


def j1_scaling_check(j1_values, n_particles: int, p_ref: float) -> J1Report:
    j1_values = np.asarray(j1_values, dtype=float)
    r = j1_values.size
    if r < 100:
        raise ValueError("need at least 100 replicates")
    predicted = -n_particles * math.log(p_ref) if p_ref < 1.0 else 0.0
    mean_j1 = float(j1_values.mean())
    rel = abs(mean_j1 - predicted) / predicted if predicted > 0 else \
        abs(mean_j1)
    return J1Report(
        n_replicates=r, n_particles=n_particles, p_ref=p_ref,
        mean_j1=mean_j1, predicted_j1=predicted, relative_error=rel,
        dispersion=float(j1_values.std(ddof=1)) / math.sqrt(n_particles))


@dataclass(frozen=True)
class L2Report:
    """Mean squared error against the nonasymptotic bound 6 |phi|_inf^2 / N."""

    n_replicates: int
    n_particles: int
    mse: float
    mse_std_error: float
    bound: float
    passed: bool


def l2_bound_check(gamma_values, gamma_ref: float, phi_sup: float,
                   n_particles: int) -> L2Report:
    gamma_values = np.asarray(gamma_values, dtype=float)
    r = gamma_values.size
    if r < 100:
        raise ValueError("need at least 100 replicates")
    sq = (gamma_values - gamma_ref) ** 2
    mse = float(sq.mean())
    mse_se = float(sq.std(ddof=1) / math.sqrt(r))
    bound = 6.0 * phi_sup ** 2 / n_particles
    return L2Report(
        n_replicates=r, n_particles=n_particles, mse=mse,
        mse_std_error=mse_se, bound=bound,
        passed=bool(mse <= bound + 3.0 * mse_se))
