"""Constraint-splitting solver for the segmentation energy.

The length/curvature term is decoupled through auxiliary fields
p = grad phi, m = p/|p| (relaxed to |p| - p.m = 0, |m| <= 1), n = m and
q = div n, each with its own multiplier (lambda1..lambda4) and penalty
weight (gamma1..gamma4). One outer iteration updates, in order: region
means, phi, p, n, m, q, multipliers. phi and n solve screened Poisson
problems by lexicographic Gauss-Seidel sweeps; p, m and q have closed
forms.

Convergence is declared when six relative-L1 metrics (four multiplier
changes, the phi change, and the energy change) all fall below tol.
Denominators are floored at 1e-12 and the test is skipped for the first
two outer iterations, where the multipliers are still warming up from
zero. L1 norms of vector fields sum |entries| over both components.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from . import grid
from .model import (LandmarkSet, ModelParams, RegionMeans, energy_cvel,
                    landmark_mask, q_field, region_means)
from .regularizers import (dirac_eps, dirac_eps_prime, normalize_unit,
                           project_unit_ball, shrink_p)


@dataclass
class SolverState:
    """All primal and dual fields at one outer iteration."""

    phi: np.ndarray
    p: np.ndarray
    m: np.ndarray
    n: np.ndarray
    q: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    lambda3: np.ndarray
    lambda4: np.ndarray
    means: RegionMeans
    outer_iter: int = 0


@dataclass
class ConvergenceReport:
    """Per-iteration trace of the six convergence metrics and the energy."""

    t1: list = field(default_factory=list)
    t2: list = field(default_factory=list)
    t3: list = field(default_factory=list)
    t4: list = field(default_factory=list)
    phi_change: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


@njit(cache=True, nogil=True)
def _gs_sweeps(x, diag, w, f, sweeps):
    # Solves (diag) x = w * (4-neighbor sum) - f in place, replicated
    # borders, sequential lexicographic order for determinism.
    m, n = x.shape
    for _ in range(sweeps):
        for i in range(m):
            im = i - 1 if i > 0 else 0
            ip = i + 1 if i < m - 1 else m - 1
            for j in range(n):
                jm = j - 1 if j > 0 else 0
                jp = j + 1 if j < n - 1 else n - 1
                nb = x[im, j] + x[i, jm] + x[ip, j] + x[i, jp]
                x[i, j] = (w * nb - f[i, j]) / diag[i, j]


def init_state(f, landmarks: LandmarkSet, init_phi, params: ModelParams) -> SolverState:
    """Initial state from a level set: p = m = n = unit forward gradient,
    q = div n, multipliers zero."""
    phi = np.asarray(init_phi, dtype=np.float64).copy()
    p = normalize_unit(grid.gradient(phi, "forward"))
    n = p.copy()
    q = grid.divergence(n)
    shape = phi.shape
    return SolverState(
        phi=phi,
        p=p,
        m=p.copy(),
        n=n,
        q=q,
        lambda1=np.zeros(shape),
        lambda2=np.zeros((2,) + shape),
        lambda3=np.zeros((2,) + shape),
        lambda4=np.zeros(shape),
        means=region_means(f, phi, params.eps),
        outer_iter=0,
    )


def solve_phi(state: SolverState, f, eta, params: ModelParams) -> np.ndarray:
    """Gauss-Seidel solve of (mu*eta - gamma2*Lap) phi = -F, warm-started
    from the current phi.

    F collects the fidelity force, the curvature-weighted interface force,
    and the divergence of the p-constraint terms; it is frozen at the
    incoming iterate for all sweeps.
    """
    g2 = params.gamma2
    q = state.q
    big_f = (q_field(f, state.means, params) * dirac_eps(state.phi, params.eps)
             + params.gamma * (params.a + params.b * q * q)
             * grid.magnitude(state.p) * dirac_eps_prime(state.phi, params.eps)
             + grid.divergence(state.lambda2)
             + g2 * grid.divergence(state.p))
    diag = params.mu * np.asarray(eta, dtype=np.float64) + 4.0 * g2
    phi = state.phi.copy()
    _gs_sweeps(phi, diag, g2, big_f, params.sweeps_phi)
    return phi


def solve_p(state: SolverState, params: ModelParams) -> np.ndarray:
    """Shrinkage step for p, then projection to |p| in {0, 1}."""
    g2 = params.gamma2
    coeff = state.lambda1 + params.gamma1
    a = grid.gradient(state.phi, "forward") + (coeff * state.m - state.lambda2) / g2
    q = state.q
    b = (params.gamma * (params.a + params.b * q * q)
         * dirac_eps(state.phi, params.eps))
    threshold = np.maximum((coeff + b) / g2, 0.0)
    return normalize_unit(shrink_p(a, threshold))


def solve_n(state: SolverState, params: ModelParams) -> np.ndarray:
    """Componentwise Gauss-Seidel solve of (gamma3 - gamma4*Lap) n = -F,
    warm-started from the current n."""
    g3, g4 = params.gamma3, params.gamma4
    big_f = (state.lambda3
             + g4 * grid.gradient(state.q, "forward")
             + grid.gradient(state.lambda4, "forward")
             - g3 * state.m)
    diag = np.full(state.phi.shape, g3 + 4.0 * g4)
    n = state.n.copy()
    for c in (0, 1):
        comp = np.ascontiguousarray(n[c])
        _gs_sweeps(comp, diag, g4, np.ascontiguousarray(big_f[c]), params.sweeps_n)
        n[c] = comp
    return n


def solve_m(state: SolverState, params: ModelParams) -> np.ndarray:
    """Closed form: project n + ((lambda1 + gamma1) p + lambda3) / gamma3
    onto the unit ball."""
    m_tilde = state.n + ((state.lambda1 + params.gamma1) * state.p
                         + state.lambda3) / params.gamma3
    return project_unit_ball(m_tilde)


def solve_q(state: SolverState, params: ModelParams) -> np.ndarray:
    """Closed form: q = (gamma4 div n - lambda4) / (gamma4 + 2 gamma b |p| delta_eps(phi)).

    Evaluated as div n - (lambda4 + w div n) / (gamma4 + w) with
    w = 2 gamma b |p| delta_eps(phi), which is the same expression but keeps
    q == div n exact (no rounding residual feeding lambda4) when the
    curvature weight is inactive.
    """
    g4 = params.gamma4
    w = (2.0 * params.gamma * params.b * grid.magnitude(state.p)
         * dirac_eps(state.phi, params.eps))
    div_n = grid.divergence(state.n)
    return div_n - (state.lambda4 + w * div_n) / (g4 + w)


def update_multipliers(state: SolverState, params: ModelParams):
    """Ascent steps on the four constraint residuals, using the just-updated
    primal fields."""
    p_mag = grid.magnitude(state.p)
    grad_phi = grid.gradient(state.phi, "forward")
    lambda1 = state.lambda1 + params.gamma1 * (p_mag - grid.dot(state.p, state.m))
    lambda2 = state.lambda2 + params.gamma2 * (state.p - grad_phi)
    lambda3 = state.lambda3 + params.gamma3 * (state.n - state.m)
    lambda4 = state.lambda4 + params.gamma4 * (state.q - grid.divergence(state.n))
    return lambda1, lambda2, lambda3, lambda4


def _rel_l1(new, old):
    num = float(np.abs(np.asarray(new) - np.asarray(old)).sum())
    den = max(float(np.abs(np.asarray(old)).sum()), 1e-12)
    return num / den


def convergence_metrics(prev: SolverState, state: SolverState,
                        prev_energy: float, energy: float):
    """(T1, T2, T3, T4, Phi, Sigma): relative L1 changes of the four
    multipliers and phi, and the relative energy change."""
    return (
        _rel_l1(state.lambda1, prev.lambda1),
        _rel_l1(state.lambda2, prev.lambda2),
        _rel_l1(state.lambda3, prev.lambda3),
        _rel_l1(state.lambda4, prev.lambda4),
        _rel_l1(state.phi, prev.phi),
        abs(energy - prev_energy) / max(abs(prev_energy), 1e-12),
    )


def step(state: SolverState, f, eta, params: ModelParams):
    """One outer iteration; returns (new state, metrics, energy)."""
    prev_energy = energy_cvel(f, state.phi, state.means, eta, params)
    st = replace(state, means=region_means(f, state.phi, params.eps))
    st = replace(st, phi=solve_phi(st, f, eta, params))
    st = replace(st, p=solve_p(st, params))
    st = replace(st, n=solve_n(st, params))
    st = replace(st, m=solve_m(st, params))
    st = replace(st, q=solve_q(st, params))
    l1, l2, l3, l4 = update_multipliers(st, params)
    st = replace(st, lambda1=l1, lambda2=l2, lambda3=l3, lambda4=l4,
                 outer_iter=state.outer_iter + 1)
    energy = energy_cvel(f, st.phi, st.means, eta, params)
    metrics = convergence_metrics(state, st, prev_energy, energy)
    return st, metrics, energy


def run_admm(f, landmarks: LandmarkSet, init_phi, params: ModelParams,
             on_iteration=None):
    """Outer loop; returns (final state, ConvergenceReport).

    Early stopping is tested from the third iteration on; the report's
    converged flag reflects the metrics of the last recorded iteration.
    on_iteration(state, metrics, energy), if given, runs after each outer
    iteration; returning False stops the loop (used for cancellation).
    """
    f = np.asarray(f, dtype=np.float64)
    eta = landmark_mask(landmarks, f.shape)
    state = init_state(f, landmarks, init_phi, params)
    report = ConvergenceReport()
    for k in range(1, params.max_outer + 1):
        state, metrics, energy = step(state, f, eta, params)
        t1, t2, t3, t4, phi_change, sigma = metrics
        report.t1.append(t1)
        report.t2.append(t2)
        report.t3.append(t3)
        report.t4.append(t4)
        report.phi_change.append(phi_change)
        report.sigma.append(sigma)
        report.energy.append(energy)
        report.iterations = k
        below = all(v <= params.tol for v in metrics)
        if on_iteration is not None and on_iteration(state, metrics, energy) is False:
            report.converged = below
            return state, report
        if k > 2 and below:
            report.converged = True
            return state, report
    if report.iterations:
        last = (report.t1[-1], report.t2[-1], report.t3[-1], report.t4[-1],
                report.phi_change[-1], report.sigma[-1])
        report.converged = all(v <= params.tol for v in last)
    return state, report


def run_cv_gradient_descent(f, init_phi, params: ModelParams, dt=0.1, steps=500):
    """Explicit gradient-flow baseline for the landmark-free, curvature-free
    model: phi += dt * (div(grad phi / |grad phi|) - Q) * delta_eps(phi),
    with region means refreshed every step.

    Central differences with a 1e-6 guard in the normalization. Raises
    RuntimeError if phi stops being finite.
    """
    f = np.asarray(f, dtype=np.float64)
    phi = np.asarray(init_phi, dtype=np.float64).copy()
    for k in range(1, steps + 1):
        means = region_means(f, phi, params.eps)
        q = q_field(f, means, params)
        g = grid.gradient(phi, "central")
        mag = np.sqrt(g[0] * g[0] + g[1] * g[1])
        curvature = grid.divergence(g / (mag + 1e-6))
        phi += dt * (curvature - q) * dirac_eps(phi, params.eps)
        if not np.isfinite(phi).all():
            raise RuntimeError(f"gradient descent diverged at step {k} (dt={dt})")
    return phi
