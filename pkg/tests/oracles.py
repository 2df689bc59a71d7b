"""Brute-force reference computations shared by the module and acceptance tests."""
import itertools

import numpy as np
from scipy.optimize import minimize

from irsmec import qcqp
from irsmec.econ import ratio_objective
from irsmec.signal import rates


def _eval_forms(prob: qcqp.QcqpProblem, Z: np.ndarray):
    """Objective (to minimize) and feasibility mask for complex points Z of shape (P, n)."""
    def form(f):
        PZ = Z @ f.P.T
        return (np.real(np.sum(Z.conj() * PZ, axis=1)) + 2 * np.real(Z @ f.p.conj()) + f.c)

    ok = np.all(np.abs(Z) <= prob.disk_radius + 1e-12, axis=1)
    if prob.epigraph:
        vals = [form(c.form) for c in prob.constraints if c.bound is None]
        obj = np.max(vals, axis=0)
    else:
        obj = form(prob.objective) * (1.0 if prob.sense == "min" else -1.0)
    for c in prob.constraints:
        if c.bound is None:
            continue
        v = form(c.form)
        ok &= (v <= c.bound) if c.sense == "<=" else (v >= c.bound)
    return np.where(ok, obj, np.inf)


def _mesh(axis, dims):
    return np.stack(np.meshgrid(*[axis] * dims, indexing="ij"), -1).reshape(-1, dims)


def grid_search(prob: qcqp.QcqpProblem, step: float = 0.01, tol: float = 1e-4,
                keep: int = 3) -> tuple[float, np.ndarray]:
    """Global optimum of a small convex QCQP by zooming grid search.

    Level 0 is a uniform grid over the bounding box of the disks (spacing
    ``step`` when n = 1, coarser for larger n so the point count stays
    bounded). Each further level lays a finer grid over a +-2 cell box
    around the best ``keep`` feasible points. Returns the value in the
    problem's own sense and the argmin.
    """
    n = prob.n
    dims = 2 * n
    r = float(np.max(prob.disk_radius))
    per_axis = {2: int(round(2 * r / step)) + 1, 4: 21}.get(dims, 11)
    axis = np.linspace(-r, r, per_axis)
    h = axis[1] - axis[0]
    pts = _mesh(axis, dims)
    p = 9 if dims <= 4 else 7
    offsets = _mesh(np.linspace(-2, 2, p), dims)
    best_val, best_z = np.inf, None
    while True:
        Z = pts[:, :n] + 1j * pts[:, n:]
        vals = _eval_forms(prob, Z)
        order = np.argsort(vals)[:keep]
        order = order[np.isfinite(vals[order])]
        if order.size == 0:
            break
        if vals[order[0]] < best_val:
            best_val, best_z = vals[order[0]], Z[order[0]]
        if h < tol:
            break
        pts = (pts[order][:, None, :] + h * offsets[None, :, :]).reshape(-1, dims)
        h = 4 * h / (p - 1)
    if not prob.epigraph and prob.sense == "max":
        best_val = -best_val
    return float(best_val), best_z


def _polish(prob: qcqp.QcqpProblem, z0: np.ndarray, feas_tol: float = 1e-10):
    """SLSQP from a grid point, on the real coordinates (plus alpha for epigraphs)."""
    n = prob.n
    forms = [(c, c.form.real_embedding()) for c in prob.constraints]

    def quad(emb, x):
        A, b, c = emb
        return x @ A @ x + 2 * b @ x + c

    def split(v):
        return (v[:2 * n], v[2 * n]) if prob.epigraph else (v, None)

    cons = []
    for c, emb in forms:
        if c.bound is None:
            cons.append(lambda v, e=emb: split(v)[1] - quad(e, split(v)[0]))
        elif c.sense == "<=":
            cons.append(lambda v, e=emb, b=c.bound: b - quad(e, split(v)[0]))
        else:
            cons.append(lambda v, e=emb, b=c.bound: quad(e, split(v)[0]) - b)
    r2 = prob.disk_radius ** 2
    cons.append(lambda v: r2 - split(v)[0][:n] ** 2 - split(v)[0][n:] ** 2)
    if prob.epigraph:
        fun = lambda v: v[2 * n]  # noqa: E731
        x0 = np.concatenate([z0.real, z0.imag, [prob.epigraph_value(z0)]])
    else:
        emb = prob.objective.real_embedding()
        sign = 1.0 if prob.sense == "min" else -1.0
        fun = lambda v: sign * quad(emb, v)  # noqa: E731
        x0 = np.concatenate([z0.real, z0.imag])
    res = minimize(fun, x0, method="SLSQP",
                   constraints=[{"type": "ineq", "fun": f} for f in cons],
                   options={"ftol": 1e-14, "maxiter": 500})
    x, _ = split(res.x)
    z = x[:n] + 1j * x[n:]
    if np.max(prob.violations(z)) > feas_tol:
        return None
    return z


def polished_optimum(prob: qcqp.QcqpProblem, step: float = 0.01) -> float:
    """Grid search followed by an SLSQP polish of the best grid point.

    The grid alone cannot resolve 1e-4 near curved active constraints; the
    polish is an independent local method, and the better of the two
    feasible values is returned in the problem's own sense.
    """
    val, z = grid_search(prob, step)
    zp = _polish(prob, z)
    if zp is not None:
        pv = prob.objective_value(zp)
        better = pv < val if (prob.epigraph or prob.sense == "min") else pv > val
        if better:
            val = pv
    return float(val)


def random_convex_problem(rng, n: int, kind: str) -> qcqp.QcqpProblem:
    """Random convex instance: ``min``, ``max``, ``constrained`` or ``epigraph``."""
    def psd(rank):
        B = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
        return B @ B.conj().T

    def vec():
        return rng.standard_normal(n) + 1j * rng.standard_normal(n)

    if kind == "min":
        return qcqp.QcqpProblem([], qcqp.QuadForm(psd(rng.integers(1, n + 1)), vec(), 0.3))
    if kind == "max":
        return qcqp.QcqpProblem([], qcqp.QuadForm(-psd(rng.integers(1, n + 1)), vec(), 0.0),
                                "max")
    if kind == "constrained":
        cons = []
        for _ in range(rng.integers(1, 3)):
            f = qcqp.QuadForm(psd(n), vec(), 0.0)
            # bound above the value at the origin keeps the problem strictly feasible
            cons.append(qcqp.Constraint(f, float(rng.uniform(0.3, 3.0))))
        return qcqp.QcqpProblem(cons, qcqp.QuadForm(0.2 * psd(1), 2 * vec(), 0.0))
    if kind == "epigraph":
        cons = [qcqp.Constraint(qcqp.QuadForm(psd(rng.integers(1, n + 1)), vec(),
                                              rng.uniform(-1, 1)), None)
                for _ in range(rng.integers(1, 4))]
        return qcqp.QcqpProblem(cons, n=n)
    raise ValueError(kind)


def unit_modulus_grid(ch, econ, steps: int) -> tuple[float, np.ndarray]:
    """Best sum_k A_k / R_k over a grid of unit-modulus phases (N small).

    Grid points violating the rate floors are skipped.
    """
    thetas = np.arange(steps) * (2 * np.pi / steps)
    best, arg = np.inf, None
    for combo in itertools.product(thetas, repeat=ch.N):
        phi = np.exp(1j * np.array(combo))
        R = rates(ch, phi)
        if np.any(R < econ.floors):
            continue
        val = ratio_objective(econ, R)
        if val < best:
            best, arg = val, phi
    return best, arg
