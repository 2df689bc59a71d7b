"""Minimize sum_k A_k / R_k(phi) subject to rate floors.

Each rate is replaced by its weighted-MMSE lower bound, which is a concave
quadratic in phi once the weight varpi_k and receiver v_k are fixed and is
tight at their closed-form optima. For multipliers (lambda, mu) the
parametric problem

    min  sum_k lambda_k (A_k - mu_k Rs_k)   s.t.  Rs_k >= r_k,  |phi_n| <= 1

is attacked by block coordinate descent over (varpi, V, phi), and the
multipliers are driven to lambda_k Rs_k = 1, mu_k Rs_k = A_k by a damped
Newton iteration with a sufficient-decrease line search on the squared
residual delta.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import qcqp
from .chanmodel import ChannelSet
from .econ import OffloadEconomy, ratio_objective, server_earning_p2
from .feasibility import CERT_TOL, FeasibilityOptions, SolverFailure, feasibility_check
from .signal import _solve_pd, effective_channels, rates

log = logging.getLogger(__name__)


class InfeasibleStart(RuntimeError):
    """The feasibility check found no phase vector meeting the floors."""


@dataclass
class SumRatioOptions:
    xi: float = 0.5
    eps: float = 0.01
    rho: float = 1e-8
    inner_tol: float = 1e-8        # 1e-6 stops early on flat ridges of the weighted sum rate
    max_inner: int = 200
    max_outer: int = 30
    max_backtrack: int = 60
    extrapolate: bool = True
    solver: qcqp.SolverOptions = field(default_factory=qcqp.SolverOptions)
    feasibility: FeasibilityOptions = field(default_factory=FeasibilityOptions)


@dataclass
class SolverState:
    phi: np.ndarray
    V: np.ndarray          # (K, M) receivers v_k
    varpi: np.ndarray      # (K,)
    lam: np.ndarray
    mu: np.ndarray
    t: int = 0


@dataclass
class OptimizationResult:
    phi: np.ndarray
    objective_trace: list[float]
    delta_trace: list[float]
    rates: np.ndarray
    earning: float
    status: str
    lam: np.ndarray
    mu: np.ndarray
    surrogate_rates: np.ndarray
    start_phi: np.ndarray
    start_objective: float
    step_exponents: list[int] = field(default_factory=list)
    inner_iterations: list[int] = field(default_factory=list)
    min_slack_trace: list[float] = field(default_factory=list)
    diagnostics: str = ""

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def outer_iterations(self) -> int:
        return len(self.delta_trace) - 1

    def kkt_residuals(self, A) -> tuple[float, float]:
        """max |lambda Rs - 1| and max |mu Rs - A| / (1 + A)."""
        A = np.asarray(A, float)
        lam_res = np.abs(self.lam * self.surrogate_rates - 1.0).max()
        mu_res = (np.abs(self.mu * self.surrogate_rates - A) / (1.0 + A)).max()
        return float(lam_res), float(mu_res)


# -- closed-form block updates ------------------------------------------------

def _covariances(ch: ChannelSet, phi):
    H = effective_channels(ch, phi)
    Wt = ch.noise * np.eye(ch.M) + (H * ch.q) @ H.conj().T
    return H, Wt


def update_weights(ch: ChannelSet, phi) -> np.ndarray:
    """varpi_k = 1/q_k + h_k^H W_k^{-1} h_k."""
    H = effective_channels(ch, phi)
    out = np.empty(ch.K)
    for k in range(ch.K):
        # build W_k directly; removing user k from Wt cancels badly at high SINR
        Hk, qk = np.delete(H, k, axis=1), np.delete(ch.q, k)
        Wk = ch.noise * np.eye(ch.M) + (Hk * qk) @ Hk.conj().T
        out[k] = 1.0 / ch.q[k] + np.real(H[:, k].conj() @ _solve_pd(Wk, H[:, k]))
    return out


def update_receivers(ch: ChannelSet, phi) -> np.ndarray:
    """Maximizer of the surrogate over v_k: q_k Wt^{-1} h_k, as a (K, M) array.

    Wt includes user k's own signal. The vector is parallel to W_k^{-1} h_k
    and equals q_k W_k^{-1} h_k / (1 + gamma_k).
    """
    H, Wt = _covariances(ch, phi)
    return (_solve_pd(Wt, H) * ch.q).T


def rate_surrogate(ch: ChannelSet, phi, v, varpi: float, k: int) -> float:
    """-varpi [q_k |1 - v^H h_k|^2 + v^H W_k v] + ln varpi + 1 + ln q_k."""
    H = effective_channels(ch, phi)
    v = np.asarray(v, complex)
    g = v.conj() @ H
    others = sum(ch.q[j] * abs(g[j]) ** 2 for j in range(ch.K) if j != k)
    bracket = ch.q[k] * abs(1.0 - g[k]) ** 2 + others + ch.noise * np.real(np.vdot(v, v))
    return float(-varpi * bracket + np.log(varpi) + 1.0 + np.log(ch.q[k]))


def surrogate_form(ch: ChannelSet, v, varpi: float, k: int) -> qcqp.QuadForm:
    """The surrogate of user k as phi^H T_k phi + 2 Re{t_k^H phi} + c_k."""
    v = np.asarray(v, complex)
    q = ch.q
    vF = np.einsum("m,jmn->jn", v.conj(), ch.cascaded())  # v^H F_j
    vd = ch.h_d @ v.conj()                                # v^H h_d,j
    T = -varpi * np.einsum("j,jn,jm->nm", q, vF.conj(), vF)
    coef = q * vd
    coef[k] = q[k] * (vd[k] - 1.0)
    t = -varpi * (coef @ vF.conj())
    c = (np.log(varpi) - varpi * q[k] + 1.0 + np.log(q[k])
         - ch.noise * varpi * np.real(np.vdot(v, v))
         - varpi * np.sum(q * np.abs(vd) ** 2)
         + 2 * varpi * q[k] * np.real(vd[k]))
    return qcqp.QuadForm(T, t, c)


def build_p12(ch: ChannelSet, V, varpi, lam, mu, floors) -> qcqp.QcqpProblem:
    """Maximize sum_k lam_k mu_k Rs_k(phi) s.t. Rs_k(phi) >= r_k, |phi_n| <= 1."""
    forms = [surrogate_form(ch, V[k], varpi[k], k) for k in range(ch.K)]
    weights = np.asarray(lam, float) * np.asarray(mu, float)
    N = ch.N
    T = np.zeros((N, N), complex)
    t = np.zeros(N, complex)
    c = 0.0
    for wk, f in zip(weights, forms):
        T += wk * f.P
        t += wk * f.p
        c += wk * f.c
    cons = [qcqp.Constraint(f, float(r), ">=") for f, r in zip(forms, floors)]
    return qcqp.QcqpProblem(cons, qcqp.QuadForm(T, t, c), "max", n=N)


def surrogate_rates(ch: ChannelSet, phi, V, varpi) -> np.ndarray:
    return np.array([rate_surrogate(ch, phi, V[k], varpi[k], k) for k in range(ch.K)])


# -- inner block coordinate descent -----------------------------------------

def _weighted_sum(weights, Rs) -> float:
    return float(np.dot(weights, Rs))


def _project_disk(phi):
    mag = np.abs(phi)
    return np.where(mag > 1.0, phi / np.maximum(mag, 1e-300), phi)


def _extrapolate(ch, weights, floors, old, new, max_doublings: int = 12):
    """Push further along the last phase step while the true objective improves.

    Candidates new + beta (new - old), beta = 1, 2, 4, ..., are projected onto
    the disks and kept only if the weighted true sum rate increases and every
    true rate stays above its floor.
    """
    d = new - old
    best = new
    best_val = _weighted_sum(weights, rates(ch, new))
    beta = 1.0
    for _ in range(max_doublings):
        cand = _project_disk(new + beta * d)
        R = rates(ch, cand)
        val = _weighted_sum(weights, R)
        if val <= best_val or np.any(R < floors):
            break
        best, best_val = cand, val
        beta *= 2
    return best


def inner_bcd(ch: ChannelSet, state: SolverState, floors, opts: SumRatioOptions | None = None
              ) -> tuple[SolverState, int, list[float]]:
    """Cycle (varpi, V, phi) updates for fixed multipliers.

    Returns the new state (with varpi, V refreshed at the final phi, so the
    surrogate rates equal the true rates), the number of cycles, and the
    trace of sum_k lam_k mu_k Rs_k before each phase update.
    """
    opts = opts or SumRatioOptions()
    floors = np.asarray(floors, float)
    weights = state.lam * state.mu
    phi = state.phi.copy()
    trace = []
    cycles = 0
    for cycles in range(1, opts.max_inner + 1):
        varpi = update_weights(ch, phi)
        V = update_receivers(ch, phi)
        before = _weighted_sum(weights, rates(ch, phi))
        trace.append(before)
        if ch.N == 0 or not np.any(weights > 0):
            break
        prob = build_p12(ch, V, varpi, state.lam, state.mu, floors)
        sol = qcqp.solve(prob, opts.solver, start=phi)
        if sol.status == "infeasible-detected":
            raise SolverFailure("phase subproblem with surrogate floors is infeasible",
                                cycles, sol.status)
        cand_val = prob.objective.value(sol.phi)
        start_val = prob.objective.value(phi)
        cand_ok = np.all(surrogate_rates(ch, sol.phi, V, varpi) >= floors - opts.solver.feas_tol)
        if cand_ok and cand_val >= start_val:
            if opts.extrapolate:
                phi = _extrapolate(ch, weights, floors, phi, sol.phi)
            else:
                phi = sol.phi
        else:
            log.debug("inner cycle %d rejected phase step (status %s, floors ok %s, "
                      "gain %.3e)", cycles, sol.status, cand_ok, cand_val - start_val)
        after = _weighted_sum(weights, rates(ch, phi))
        if abs(after - before) <= opts.inner_tol * max(abs(before), 1e-300):
            break
    varpi = update_weights(ch, phi)
    V = update_receivers(ch, phi)
    return replace(state, phi=phi, V=V, varpi=varpi), cycles, trace


# -- multiplier updates -----------------------------------------------------

def newton_residuals(lam, mu, Rs, A) -> tuple[np.ndarray, np.ndarray]:
    """Lambda_k = lam_k Rs_k - 1 and Gamma_k = mu_k Rs_k - A_k."""
    lam, mu, Rs, A = (np.asarray(x, float) for x in (lam, mu, Rs, A))
    return lam * Rs - 1.0, mu * Rs - A


def residual_norm(lam, mu, Rs, A) -> float:
    Lam, Gam = newton_residuals(lam, mu, Rs, A)
    return float(np.sum(Lam ** 2) + np.sum(Gam ** 2))


def newton_candidate(lam, mu, Rs, A, step: float):
    """lam - step * Lambda/Rs, mu - step * Gamma/Rs."""
    Lam, Gam = newton_residuals(lam, mu, Rs, A)
    return lam - step * Lam / Rs, mu - step * Gam / Rs


def newton_step(lam, mu, Rs, A, xi: float = 0.5, eps: float = 0.01, max_backtrack: int = 60):
    """One damped Newton update with the surrogate rates held fixed.

    Returns (lam, mu, delta, i) where i is the smallest exponent passing the
    sufficient-decrease test and delta the squared residual after the update.
    Raises RuntimeError when no exponent up to ``max_backtrack`` passes.
    """
    if not (0 < xi < 1) or eps <= 0:
        raise ValueError("need 0 < xi < 1 and eps > 0")
    lam, mu, Rs, A = (np.asarray(x, float) for x in (lam, mu, Rs, A))
    delta0 = residual_norm(lam, mu, Rs, A)
    for i in range(max_backtrack + 1):
        step = xi ** i
        lam_i, mu_i = newton_candidate(lam, mu, Rs, A, step)
        delta = residual_norm(lam_i, mu_i, Rs, A)
        if delta <= (1 - step * eps) ** 2 * delta0:
            return lam_i, mu_i, delta, i
    raise RuntimeError(f"no step exponent up to {max_backtrack} passes the decrease test")


# -- full algorithm ---------------------------------------------------------

def _line_search(ch, state, Rs, A, delta, floors, opts):
    """Smallest exponent i whose re-solved candidate passes the decrease test."""
    for i in range(opts.max_backtrack + 1):
        step = opts.xi ** i
        lam_i, mu_i = newton_candidate(state.lam, state.mu, Rs, A, step)
        cand, n_inner, _ = inner_bcd(ch, replace(state, lam=lam_i, mu=mu_i), floors, opts)
        Rs_i = surrogate_rates(ch, cand.phi, cand.V, cand.varpi)
        delta_i = residual_norm(lam_i, mu_i, Rs_i, A)
        if delta_i <= (1 - step * opts.eps) ** 2 * delta:
            return cand, Rs_i, delta_i, i, n_inner
    return None


def initial_state(ch: ChannelSet, phi0, A) -> SolverState:
    R = rates(ch, phi0)
    if np.any(R <= 0):
        raise InfeasibleStart("start point has a zero rate")
    A = np.asarray(A, float)
    return SolverState(np.asarray(phi0, complex).copy(), update_receivers(ch, phi0),
                       update_weights(ch, phi0), 1.0 / R, A / R)


def optimize(ch: ChannelSet, economy: OffloadEconomy, floors=None,
             opts: SumRatioOptions | None = None, phi0=None,
             rng: np.random.Generator | None = None) -> OptimizationResult:
    """Minimize sum_k A_k / R_k over the phase vector subject to the floors.

    Without ``phi0`` the feasibility check supplies the start point and
    :class:`InfeasibleStart` is raised when it fails.
    """
    opts = opts or SumRatioOptions()
    A = economy.A
    floors = economy.floors if floors is None else np.broadcast_to(
        np.asarray(floors, float), (ch.K,)).copy()
    if phi0 is None:
        feas = feasibility_check(ch, floors, opts.feasibility, rng=rng)
        if not feas.feasible:
            raise InfeasibleStart("no feasible phase vector found for the rate floors")
        phi0 = feas.phi
    phi0 = np.asarray(phi0, complex)
    if np.any(rates(ch, phi0) < floors - CERT_TOL):
        raise InfeasibleStart("start point violates the rate floors")

    start_obj = ratio_objective(economy, rates(ch, phi0))
    state = initial_state(ch, phi0, A)
    state, n_inner, _ = inner_bcd(ch, state, floors, opts)
    Rs = surrogate_rates(ch, state.phi, state.V, state.varpi)
    delta = residual_norm(state.lam, state.mu, Rs, A)

    def true_rates(phi):
        return rates(ch, phi)

    R = true_rates(state.phi)
    obj_trace = [ratio_objective(economy, R)]
    delta_trace = [delta]
    inner_trace = [n_inner]
    slack_trace = [float(np.min(R - floors))]
    exps: list[int] = []
    status = "converged"

    diagnostics = ""
    while delta >= opts.rho:
        if state.t >= opts.max_outer:
            status = "max-iter"
            diagnostics = f"outer iteration limit {opts.max_outer} reached"
            break
        accepted = _line_search(ch, state, Rs, A, delta, floors, opts)
        if accepted is None:
            status = "max-iter"
            diagnostics = (f"no step exponent up to {opts.max_backtrack} passed the decrease "
                           f"test at outer iteration {state.t}, delta {delta:.3e}")
            log.warning("multiplier line search failed: %s", diagnostics)
            break
        state, Rs, delta, i, n_inner = accepted
        state = replace(state, t=state.t + 1)
        R = true_rates(state.phi)
        obj_trace.append(ratio_objective(economy, R))
        delta_trace.append(delta)
        exps.append(i)
        inner_trace.append(n_inner)
        slack_trace.append(float(np.min(R - floors)))
        log.debug("outer %d: objective %.10g delta %.3e (i=%d)", state.t, obj_trace[-1], delta, i)

    R = true_rates(state.phi)
    return OptimizationResult(
        phi=state.phi, objective_trace=obj_trace, delta_trace=delta_trace, rates=R,
        earning=server_earning_p2(economy, R), status=status, lam=state.lam, mu=state.mu,
        surrogate_rates=Rs, start_phi=phi0, start_objective=start_obj, step_exponents=exps,
        inner_iterations=inner_trace, min_slack_trace=slack_trace, diagnostics=diagnostics)
