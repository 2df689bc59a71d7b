"""Feasibility check for per-user rate floors.

Block coordinate descent on the max scaled-MSE problem: with the phase vector
fixed, MMSE receivers are optimal; with the receivers fixed, the phase update
is a convex QCQP (minimize alpha subject to e^{r_k} * MSE_k <= alpha and
|phi_n| <= 1). Reaching alpha <= 1 certifies that every rate floor is met.
The test is sufficient only: a negative answer does not prove infeasibility.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import qcqp
from .chanmodel import ChannelSet, SystemGeometry, generate_channels
from .signal import mmse_receivers, rates

log = logging.getLogger(__name__)

CERT_TOL = 1e-6


class SolverFailure(RuntimeError):
    """A QCQP subproblem did not reach an optimal status."""

    def __init__(self, message: str, iteration: int, status: str):
        super().__init__(f"{message} (iteration {iteration}, status {status})")
        self.iteration = iteration
        self.status = status


@dataclass
class FeasibilityOptions:
    conv_tol: float = 1e-5
    max_iter: int = 100
    restarts: int = 5
    solver: qcqp.SolverOptions = field(default_factory=qcqp.SolverOptions)


@dataclass
class FeasibilityResult:
    feasible: bool
    phi: np.ndarray | None
    alpha_trace: list[float]
    iterations: int
    receivers: np.ndarray
    rates: np.ndarray | None = None
    start: np.ndarray | None = None
    last_phi: np.ndarray | None = None
    rate_trace: list[np.ndarray] = field(default_factory=list)


def random_phase(n: int, rng: np.random.Generator) -> np.ndarray:
    """kappa^2 ~ U[0, 1], theta ~ U[0, 2 pi)."""
    kappa = np.sqrt(rng.uniform(0.0, 1.0, n))
    theta = rng.uniform(0.0, 2 * np.pi, n)
    return kappa * np.exp(1j * theta)


def mse_form(ch: ChannelSet, w: np.ndarray, k: int, scale: float = 1.0) -> qcqp.QuadForm:
    """scale * MSE_k(phi, w) as a quadratic form in phi."""
    F = ch.cascaded()                        # (K, M, N)
    wF = np.einsum("m,jmn->jn", w.conj(), F)  # row j: w^H F_j
    wd = ch.h_d @ w.conj()                    # w^H h_d,j
    q = ch.q
    Q = np.einsum("j,jn,jm->nm", q, wF.conj(), wF)
    lin = (q * wd) @ wF.conj() - np.sqrt(q[k]) * wF[k].conj()
    d = (np.sum(q * np.abs(wd) ** 2) - 2 * np.sqrt(q[k]) * np.real(wd[k])
         + ch.noise * np.real(np.vdot(w, w)) + 1.0)
    return qcqp.QuadForm(scale * Q, scale * lin, scale * d)


def build_p8(ch: ChannelSet, receivers: np.ndarray, floors) -> qcqp.QcqpProblem:
    """Phase subproblem: minimize alpha s.t. e^{r_k} MSE_k(phi, w_k) <= alpha."""
    receivers = np.asarray(receivers, complex)
    floors = np.asarray(floors, float)
    if receivers.shape != (ch.K, ch.M):
        raise ValueError(f"receivers shape {receivers.shape}, expected {(ch.K, ch.M)}")
    if floors.shape != (ch.K,):
        raise ValueError("need one rate floor per user")
    if not np.all(np.isfinite(receivers)):
        raise ValueError("receivers must be finite")
    cons = [qcqp.Constraint(mse_form(ch, receivers[k], k, np.exp(floors[k])), None)
            for k in range(ch.K)]
    return qcqp.QcqpProblem(cons, n=ch.N)


def scaled_mse(ch: ChannelSet, phi, receivers, floors) -> np.ndarray:
    """e^{r_k} MSE_k(phi, w_k) for every user, via the quadratic forms."""
    return np.array([mse_form(ch, receivers[k], k, np.exp(floors[k])).value(phi)
                     for k in range(ch.K)])


def _run_bcd(ch, floors, phi, opts, target: float = 1.0) -> FeasibilityResult:
    start = phi.copy()
    W = mmse_receivers(ch, phi)
    alpha = float(np.max(scaled_mse(ch, phi, W, floors)))
    trace = [alpha]
    rate_trace = [rates(ch, phi)]
    it = 0
    while alpha > target and it < opts.max_iter:
        it += 1
        W = mmse_receivers(ch, phi)
        prob = build_p8(ch, W, floors)
        alpha_w = prob.epigraph_value(phi)
        sol = qcqp.solve(prob, opts.solver, start=phi)
        if sol.status == "infeasible-detected":
            raise SolverFailure("phase subproblem reported infeasible", it, sol.status)
        cand = prob.epigraph_value(sol.phi)
        # keep the block update monotone even when the solve stops early
        if cand <= alpha_w:
            phi, new_alpha = sol.phi, cand
        else:
            new_alpha = alpha_w
        new_alpha = min(new_alpha, alpha)
        trace.append(new_alpha)
        rate_trace.append(rates(ch, phi))
        converged = (alpha - new_alpha) <= opts.conv_tol * abs(alpha)
        alpha = new_alpha
        log.debug("bcd iteration %d alpha %.8g", it, alpha)
        if converged:
            break
    W = mmse_receivers(ch, phi)
    r = rate_trace[-1]
    feasible = bool(alpha <= 1.0 and np.all(r >= floors - CERT_TOL))
    return FeasibilityResult(feasible, phi if feasible else None, trace, it, W, r, start, phi,
                             rate_trace)


def feasibility_check(ch: ChannelSet, floors, opts: FeasibilityOptions | None = None,
                      rng: np.random.Generator | None = None, start=None) -> FeasibilityResult:
    """Search for a phase vector meeting every rate floor.

    Runs up to ``opts.restarts`` random starts (or just ``start`` when given)
    and returns the first certified result, else the run with the smallest
    final alpha.
    """
    opts = opts or FeasibilityOptions()
    floors = np.broadcast_to(np.asarray(floors, float), (ch.K,)).copy()
    if np.any(floors < 0):
        raise ValueError("rate floors must be nonnegative")
    rng = rng if rng is not None else np.random.default_rng()
    starts = [np.asarray(start, complex)] if start is not None else None
    n_runs = 1 if starts else max(opts.restarts, 1)
    best = None
    for i in range(n_runs):
        phi0 = starts[0] if starts else random_phase(ch.N, rng)
        res = _run_bcd(ch, floors, phi0, opts)
        if res.feasible:
            return res
        if best is None or res.alpha_trace[-1] < best.alpha_trace[-1]:
            best = res
    return best


def floor_is_met(ch: ChannelSet, phi, floors) -> bool:
    return bool(np.all(rates(ch, phi) >= np.asarray(floors) - CERT_TOL))


def certified_floor(ch: ChannelSet, start, opts: FeasibilityOptions | None = None,
                    stop_at: float = np.inf) -> tuple[float, FeasibilityResult]:
    """Largest common floor certified by one run from ``start``.

    With every floor equal to r, the scaled subproblem is the unscaled one
    times e^r, so the iterates and the relative stopping test do not depend
    on r. One run at floor 0 thus answers the check at every common floor:
    it certifies r exactly when the max MSE along the run reaches e^{-r}.
    The run stops early once ``stop_at`` is certified.
    """
    opts = opts or FeasibilityOptions()
    res = _run_bcd(ch, np.zeros(ch.K), np.asarray(start, complex), opts,
                   target=float(np.exp(-stop_at)))
    return float(-np.log(min(res.alpha_trace))), res


def feasibility_probability(geometry: SystemGeometry, floor: float, trials: int, seed: int,
                            mode: str = "optimized", opts: FeasibilityOptions | None = None
                            ) -> float:
    """Fraction of channel realizations whose common rate floor is certified.

    ``mode`` is ``none`` (direct links only), ``random`` (a batch of random
    phase draws) or ``optimized`` (the feasibility check started from the same
    batch). Realization ``i`` uses channel seed ``seed + i``.
    """
    hits = [trial_outcomes(geometry, floor, seed + i, opts)[mode] for i in range(trials)]
    return float(np.mean(hits))


def trial_outcomes(geometry: SystemGeometry, floor: float, seed: int,
                   opts: FeasibilityOptions | None = None,
                   modes=("none", "random", "optimized")) -> dict[str, bool]:
    """Feasibility of one realization under each IRS mode at one common floor."""
    out = sweep_outcomes(geometry, [floor], seed, opts, modes)
    return {m: bool(v[0]) for m, v in out.items()}


def sweep_outcomes(geometry: SystemGeometry, floors, seed: int,
                   opts: FeasibilityOptions | None = None,
                   modes=("none", "random", "optimized")) -> dict[str, np.ndarray]:
    """Feasibility of one realization at each common floor, per IRS mode.

    The random batch and the optimized starts share the phase draws, so the
    optimized outcome is never worse than the random one.
    """
    opts = opts or FeasibilityOptions()
    floors = np.asarray(floors, float)
    ch = generate_channels(geometry, seed)
    out = {}
    if "none" in modes:
        best = float(np.min(rates(ch.without_irs(), np.zeros(0))))
        out["none"] = floors <= best + CERT_TOL
    rng = np.random.default_rng([seed, 1])
    draws = [random_phase(ch.N, rng) for _ in range(max(opts.restarts, 1))]
    best_random = max(float(np.min(rates(ch, phi))) for phi in draws)
    random_ok = floors <= best_random + CERT_TOL
    if "random" in modes:
        out["random"] = random_ok
    if "optimized" in modes:
        ok = random_ok.copy()
        for phi0 in draws:
            if ok.all():
                break
            r_star, _ = certified_floor(ch, phi0, opts, stop_at=floors.max())
            ok |= floors <= r_star
        out["optimized"] = ok
    return out
