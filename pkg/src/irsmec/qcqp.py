"""Convex complex QCQP with per-coordinate disk constraints.

Problems have the form::

    minimize / maximize   phi^H P0 phi + 2 Re{p0^H phi} + c0
    subject to            phi^H Pi phi + 2 Re{pi^H phi} + ci  (<= | >=)  bound_i
                          |phi_n| <= radius_n

or, with no objective, the epigraph form ``minimize alpha`` where constraints
with ``bound=None`` read ``form(phi) <= alpha``.

The solver is a log-barrier interior-point method on the real embedding
z = [Re phi; Im phi] with damped Newton centering and a phase-I stage for
starts that are not strictly feasible.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import nnls


class NonConvexError(ValueError):
    """Problem data failed the eigenvalue convexity certification."""


@dataclass
class QuadForm:
    """phi -> phi^H P phi + 2 Re{p^H phi} + c with Hermitian P."""

    P: np.ndarray
    p: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, complex))
        self.p = np.asarray(self.p, complex).reshape(-1)
        self.c = float(np.real(self.c))
        n = self.p.size
        if self.P.shape != (n, n):
            raise ValueError(f"matrix shape {self.P.shape} does not match vector length {n}")

    @property
    def n(self) -> int:
        return self.p.size

    def value(self, phi) -> float:
        phi = np.asarray(phi, complex)
        return float(np.real(np.vdot(phi, self.P @ phi)) + 2 * np.real(np.vdot(self.p, phi)) + self.c)

    def real_embedding(self) -> tuple[np.ndarray, np.ndarray, float]:
        """(A, b, c) with z^T A z + 2 b^T z + c equal to the complex form."""
        Ph = 0.5 * (self.P + self.P.conj().T)
        A = np.block([[Ph.real, -Ph.imag], [Ph.imag, Ph.real]])
        b = np.concatenate([self.p.real, self.p.imag])
        return A, b, self.c

    def scaled(self, s: float) -> QuadForm:
        return QuadForm(s * self.P, s * self.p, s * self.c)


@dataclass
class Constraint:
    form: QuadForm
    bound: float | None = 0.0
    sense: str = "<="

    def __post_init__(self):
        if self.sense not in ("<=", ">="):
            raise ValueError(f"unknown constraint sense {self.sense!r}")
        if self.bound is None and self.sense != "<=":
            raise ValueError("epigraph constraints must read form <= alpha")


@dataclass
class QcqpProblem:
    constraints: list[Constraint]
    objective: QuadForm | None = None
    sense: str = "min"
    disk_radius: float | np.ndarray = 1.0
    n: int | None = None

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        sizes = {c.form.n for c in self.constraints}
        if self.objective is not None:
            sizes.add(self.objective.n)
        if self.n is not None:
            sizes.add(self.n)
        if len(sizes) != 1:
            raise ValueError(f"inconsistent problem dimensions {sorted(sizes)}")
        self.n = sizes.pop()
        self.disk_radius = np.broadcast_to(np.asarray(self.disk_radius, float), (self.n,)).copy()
        if self.objective is None:
            if self.sense != "min":
                raise ValueError("epigraph problems minimize alpha")
            if not any(c.bound is None for c in self.constraints):
                raise ValueError("epigraph problem without epigraph constraints")

    @property
    def epigraph(self) -> bool:
        return self.objective is None

    def objective_value(self, phi, alpha: float | None = None) -> float:
        if self.epigraph:
            return self.epigraph_value(phi) if alpha is None else float(alpha)
        return self.objective.value(phi)

    def epigraph_value(self, phi) -> float:
        """Smallest feasible alpha at ``phi``."""
        return max(c.form.value(phi) for c in self.constraints if c.bound is None)

    def violations(self, phi, alpha: float | None = None) -> np.ndarray:
        """Positive entries are constraint violations (disks last)."""
        if alpha is None and self.epigraph:
            alpha = self.epigraph_value(phi)
        out = []
        for c in self.constraints:
            v = c.form.value(phi)
            if c.bound is None:
                out.append(v - alpha)
            elif c.sense == "<=":
                out.append(v - c.bound)
            else:
                out.append(c.bound - v)
        out.extend(np.abs(np.asarray(phi, complex)) - self.disk_radius)
        return np.asarray(out, float)


@dataclass
class SolverOptions:
    kkt_tol: float = 1e-7
    feas_tol: float = 1e-8
    t0: float = 1.0
    t_factor: float = 10.0
    newton_tol: float = 1e-16
    max_newton: int = 100
    max_outer: int = 40
    armijo: float = 0.25
    backtrack: float = 0.5


@dataclass
class QcqpSolution:
    phi: np.ndarray
    objective: float
    slacks: np.ndarray
    kkt_residual: float
    iterations: int
    status: str
    duality_gap: float = np.inf
    alpha: float | None = None
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


@dataclass
class ConvexityReport:
    entries: list[tuple[str, bool, float]]

    @property
    def convex(self) -> bool:
        return all(ok for _, ok, _ in self.entries)

    def failures(self) -> list[str]:
        return [name for name, ok, _ in self.entries if not ok]


def _curvature_ok(P: np.ndarray, sign: float, rel_tol: float) -> tuple[bool, float]:
    """sign=+1 requires PSD, sign=-1 requires NSD."""
    Ph = 0.5 * (P + P.conj().T)
    if Ph.size == 0:
        return True, 0.0
    eig = np.linalg.eigvalsh(sign * Ph)
    scale = max(np.abs(eig).max(), np.finfo(float).tiny)
    return bool(eig.min() >= -rel_tol * scale), float(sign * eig.min())


def check_convexity(prob: QcqpProblem, rel_tol: float = 1e-8) -> ConvexityReport:
    """Certify every quadratic form has the curvature its role requires."""
    entries = []
    if prob.objective is not None:
        sign = 1.0 if prob.sense == "min" else -1.0
        ok, eig = _curvature_ok(prob.objective.P, sign, rel_tol)
        entries.append(("objective", ok, eig))
    for i, c in enumerate(prob.constraints):
        sign = 1.0 if c.sense == "<=" else -1.0
        ok, eig = _curvature_ok(c.form.P, sign, rel_tol)
        entries.append((f"constraint[{i}]", ok, eig))
    return ConvexityReport(entries)


# -- real standard form ------------------------------------------------------

class _RealForm:
    """minimize w^T A0 w + 2 b0^T w + c0  s.t.  w^T Ai w + 2 bi^T w + ci <= 0, disks.

    w = [x; y] or [x; y; alpha] for epigraph problems.
    """

    def __init__(self, prob: QcqpProblem, shift: float = 0.0):
        N = prob.n
        self.N = N
        self.epi = prob.epigraph
        self.nvar = 2 * N + (1 if self.epi else 0)
        nv = self.nvar
        self.radius2 = prob.disk_radius ** 2

        A0 = np.zeros((nv, nv))
        b0 = np.zeros(nv)
        c0 = 0.0
        if self.epi:
            b0[-1] = 0.5
        else:
            A, b, c = prob.objective.real_embedding()
            s = 1.0 if prob.sense == "min" else -1.0
            A0[:2 * N, :2 * N], b0[:2 * N], c0 = s * A, s * b, s * c
        self.A0, self.b0, self.c0 = A0, b0, c0
        self.obj_sign = 1.0 if prob.sense == "min" else -1.0

        m = len(prob.constraints)
        self.Ai = np.zeros((m, nv, nv))
        self.bi = np.zeros((m, nv))
        self.ci = np.zeros(m)
        for i, con in enumerate(prob.constraints):
            A, b, c = con.form.real_embedding()
            if con.bound is None:
                s, c = 1.0, c
                self.bi[i, -1] = -0.5
            elif con.sense == "<=":
                s, c = 1.0, c - con.bound
            else:
                s, c = -1.0, -(c - con.bound)
            self.Ai[i, :2 * N, :2 * N] = s * A
            self.bi[i, :2 * N] += s * b
            self.ci[i] = (c if con.sense == "<=" else c) - shift
        self.m = m

    def pack(self, phi, alpha=None) -> np.ndarray:
        w = np.concatenate([phi.real, phi.imag])
        if self.epi:
            w = np.append(w, alpha)
        return w

    def unpack(self, w):
        phi = w[:self.N] + 1j * w[self.N:2 * self.N]
        return phi, (w[-1] if self.epi else None)

    def f0(self, w):
        return w @ self.A0 @ w + 2 * self.b0 @ w + self.c0

    def fi(self, w):
        return (self.Ai @ w) @ w + 2 * self.bi @ w + self.ci

    def disk(self, w):
        x, y = w[:self.N], w[self.N:2 * self.N]
        return x * x + y * y - self.radius2

    def strictly_feasible(self, w) -> bool:
        return bool(np.all(self.fi(w) < 0) and np.all(self.disk(w) < 0))


def _barrier_derivs(rf: _RealForm, w, t, slack_index=None):
    """Value, gradient and Hessian of t*f0 - sum log(-f_i) - sum log(-disk_n).

    With ``slack_index`` set, the phase-I variable w[slack_index] is
    subtracted from every quadratic constraint and minimized.
    """
    N, nv = rf.N, w.size
    wv = w[:rf.nvar]
    Aw = rf.Ai @ wv
    f = Aw @ wv + 2 * rf.bi @ wv + rf.ci
    grads = np.zeros((rf.m, nv))
    grads[:, :rf.nvar] = 2 * (Aw + rf.bi)
    if slack_index is not None:
        f = f - w[slack_index]
        grads[:, slack_index] = -1.0
        g0 = np.zeros(nv)
        g0[slack_index] = 1.0
        val0, H0 = w[slack_index], np.zeros((nv, nv))
    else:
        val0 = rf.f0(w)
        g0 = 2 * (rf.A0 @ w + rf.b0)
        H0 = 2 * rf.A0
    h = rf.disk(w)
    if np.any(f >= 0) or np.any(h >= 0):
        return np.inf, None, None
    val = t * val0 - np.sum(np.log(-f)) - np.sum(np.log(-h))
    inv = 1.0 / (-f)
    grad = t * g0 + grads.T @ inv
    H = t * H0 + (grads.T * inv ** 2) @ grads
    H[:rf.nvar, :rf.nvar] += 2 * np.tensordot(inv, rf.Ai, axes=1)
    x, y = w[:N], w[N:2 * N]
    dinv = 1.0 / (-h)
    grad[:N] += 2 * x * dinv
    grad[N:2 * N] += 2 * y * dinv
    idx_x, idx_y = np.arange(N), np.arange(N, 2 * N)
    H[idx_x, idx_x] += 2 * dinv + 4 * x * x * dinv ** 2
    H[idx_y, idx_y] += 2 * dinv + 4 * y * y * dinv ** 2
    H[idx_x, idx_y] += 4 * x * y * dinv ** 2
    H[idx_y, idx_x] += 4 * x * y * dinv ** 2
    return val, grad, H


def _newton_dir(H, g):
    # symmetric Jacobi scaling first: active constraints put entries of order
    # t^2 on the diagonal, and unscaled Cholesky loses positive definiteness
    d = np.sqrt(np.maximum(np.diag(H), np.finfo(float).tiny))
    Hs = H / d[:, None] / d[None, :]
    gs = g / d
    try:
        return -cho_solve(cho_factor(Hs, check_finite=False), gs, check_finite=False) / d
    except LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (Hs + Hs.T))
        vals = np.maximum(vals, 1e-14 * vals.max())
        return -(vecs @ ((vecs.T @ gs) / vals)) / d


def _barrier_value(rf: _RealForm, w, t, slack_index=None) -> float:
    if slack_index is not None:
        f = rf.fi(w[:rf.nvar]) - w[slack_index]
        val0 = w[slack_index]
    else:
        f = rf.fi(w)
        val0 = rf.f0(w)
    h = rf.disk(w)
    if np.any(f >= 0) or np.any(h >= 0):
        return np.inf
    return t * val0 - np.sum(np.log(-f)) - np.sum(np.log(-h))


def _center(rf, w, t, opts, slack_index=None, stop=None):
    """Damped Newton minimization of the barrier function; returns (w, steps)."""
    steps = 0
    prev_dec = np.inf
    stalls = 0
    for _ in range(opts.max_newton):
        val, g, H = _barrier_derivs(rf, w, t, slack_index)
        dw = _newton_dir(H, g)
        dec = -g @ dw
        if dec / 2 <= opts.newton_tol:
            break
        # rounding floor: the decrement stops shrinking once the Newton
        # system is dominated by round-off
        stalls = stalls + 1 if dec >= 0.5 * prev_dec else 0
        if stalls >= 3 and dec < 1e-8:
            break
        prev_dec = dec
        s = 1.0
        if dec < 1e-6:
            # quadratic-convergence region: take the full step while it stays
            # interior; Armijo comparisons drown in rounding here
            while not np.isfinite(_barrier_value(rf, w + s * dw, t, slack_index)):
                s *= opts.backtrack
                if s < 1e-14:
                    return w, steps
        else:
            while _barrier_value(rf, w + s * dw, t, slack_index) > val - opts.armijo * s * dec:
                s *= opts.backtrack
                if s < 1e-14:
                    return w, steps
        w = w + s * dw
        steps += 1
        if stop is not None and stop(w):
            break
    return w, steps


def _interior_start(prob: QcqpProblem, start) -> np.ndarray:
    """Pull a start point strictly inside every disk."""
    N = prob.n
    if start is None:
        return np.zeros(N, complex)
    phi = np.asarray(start, complex).reshape(-1).copy()
    if phi.shape != (N,):
        raise ValueError(f"start has length {phi.size}, expected {N}")
    lim = prob.disk_radius * (1 - 1e-6)
    mag = np.abs(phi)
    over = mag > lim
    phi[over] *= lim[over] / mag[over]
    return phi


def _phase_one(rf: _RealForm, w, opts):
    """Minimize the common slack s with f_i(w) <= s; returns (w, s*, steps)."""
    s0 = max(rf.fi(w).max(), 0.0) + 1.0
    ws = np.append(w, s0)
    t, steps = opts.t0, 0
    found = lambda v: v[-1] < 0 and np.all(rf.fi(v[:-1]) < 0)  # noqa: E731
    for _ in range(opts.max_outer):
        ws, k = _center(rf, ws, t, opts, slack_index=rf.nvar, stop=found)
        steps += k
        if found(ws):
            return ws[:-1], ws[-1], steps
        if (rf.m + 2 * rf.N) / t < opts.feas_tol / 10:
            break
        t *= opts.t_factor
    return ws[:-1], ws[-1], steps


def _kkt(rf: _RealForm, w, t):
    """KKT residual, barrier duality gap and multiplier estimates at ``w``.

    Two multiplier estimates are tried: the barrier ones, -1/(t f_i), and a
    nonnegative least-squares refit on the nearly active constraints. The
    residual is max(relative stationarity, complementarity) for the better one.
    """
    N = rf.N
    f = np.concatenate([rf.fi(w), rf.disk(w)])
    J = np.zeros((f.size, w.size))
    J[:rf.m] = 2 * (np.einsum("kij,j->ki", rf.Ai, w) + rf.bi)
    idx = np.arange(N)
    J[rf.m + idx, idx] = 2 * w[:N]
    J[rf.m + idx, N + idx] = 2 * w[N:2 * N]
    g0 = 2 * (rf.A0 @ w + rf.b0)
    scale = max(1.0, np.abs(g0).max())
    gap = f.size / t

    def residual(lam):
        stat = np.abs(g0 + J.T @ lam).max() / scale
        comp = np.abs(lam * f).max() if lam.size else 0.0
        return max(stat, comp)

    lam_bar = 1.0 / (-t * f)
    best_lam, best = lam_bar, residual(lam_bar)
    active = lam_bar >= 1e-6 * max(lam_bar.max(), 1e-300)
    if np.any(active):
        lam = np.zeros_like(f)
        lam[active] = nnls(J[active].T, -g0)[0]
        r = residual(lam)
        if r < best:
            best_lam, best = lam, r
    return best, gap, best_lam


def solve(prob: QcqpProblem, opts: SolverOptions | None = None, start=None) -> QcqpSolution:
    """Solve a convex QCQP; rejects non-convex data before iterating."""
    opts = opts or SolverOptions()
    report = check_convexity(prob)
    if not report.convex:
        raise NonConvexError(f"non-convex problem data: {', '.join(report.failures())}")

    if prob.n == 0:
        phi = np.zeros(0, complex)
        viol = prob.violations(phi)
        alpha = prob.epigraph_value(phi) if prob.epigraph else None
        feasible = np.all(viol <= opts.feas_tol)
        return QcqpSolution(phi, prob.objective_value(phi), -viol, 0.0, 0,
                            "optimal" if feasible else "infeasible-detected", 0.0, alpha)

    phi0 = _interior_start(prob, start)
    rf = _RealForm(prob)
    alpha0 = None
    if rf.epi:
        alpha0 = prob.epigraph_value(phi0)
        alpha0 += 1e-3 * (1.0 + abs(alpha0))
    w = rf.pack(phi0, alpha0)
    iterations = 0

    if not rf.strictly_feasible(w):
        w, s_star, k = _phase_one(rf, w, opts)
        iterations += k
        if s_star >= 0 or not rf.strictly_feasible(w):
            if s_star > opts.feas_tol:
                phi, alpha = rf.unpack(w)
                viol = prob.violations(phi, alpha)
                return QcqpSolution(phi, prob.objective_value(phi, alpha), -viol, np.inf,
                                    iterations, "infeasible-detected", np.inf, alpha)
            # feasible but without a usable interior: relax by less than feas_tol
            rf = _RealForm(prob, shift=(max(s_star, 0.0) + opts.feas_tol) / 2)
            if not rf.strictly_feasible(w):
                phi, alpha = rf.unpack(w)
                viol = prob.violations(phi, alpha)
                return QcqpSolution(phi, prob.objective_value(phi, alpha), -viol, np.inf,
                                    iterations, "infeasible-detected", np.inf, alpha)

    t = opts.t0
    status = "max-iter"
    kkt_res = gap = np.inf
    lam = np.zeros(0)
    for _ in range(opts.max_outer):
        w, k = _center(rf, w, t, opts)
        iterations += k
        gap = (rf.m + rf.N) / t
        # the multiplier refit is costly; only certify once the gap is small
        if gap < opts.kkt_tol:
            kkt_res, gap, lam = _kkt(rf, w, t)
            if kkt_res < opts.kkt_tol:
                status = "optimal"
                break
        t *= opts.t_factor
    if lam.size == 0:
        kkt_res, gap, lam = _kkt(rf, w, t)

    phi, alpha = rf.unpack(w)
    if alpha is not None:
        alpha = min(alpha, prob.epigraph_value(phi)) if rf.strictly_feasible(w) else alpha
    viol = prob.violations(phi, alpha)
    kkt_residual = kkt_res
    if status == "optimal" and (kkt_residual >= opts.kkt_tol or viol.max() >= opts.feas_tol):
        status = "max-iter"
    return QcqpSolution(phi, prob.objective_value(phi, alpha), -viol, kkt_residual,
                        iterations, status, gap, alpha, lam)
