import numpy as np
import pytest

from conftest import crandn, random_channels, random_phi, scalar_channel
from irsmec import qcqp
from irsmec import sumratio as sr
from irsmec.chanmodel import calibrated_geometry, generate_channels
from irsmec.econ import OffloadEconomy, ratio_objective
from irsmec.feasibility import CERT_TOL
from irsmec.signal import interference_covariance, optimal_receiver, rate, rates


def test_unit_instance():
    ch = scalar_channel()
    assert sr.update_weights(ch, [])[0] == pytest.approx(2.0)
    # the surrogate maximizer is q Wt^{-1} h = 1/2 here, not W^{-1} q h = 1
    assert sr.update_receivers(ch, [])[0, 0] == pytest.approx(0.5)
    assert sr.rate_surrogate(ch, [], [0.5], 2.0, 0) == pytest.approx(np.log(2))
    assert sr.rate_surrogate(ch, [], [1.0], 2.0, 0) == pytest.approx(np.log(2) - 1)


def test_weight_large_power_limit(rng):
    ch = random_channels(rng, q=1e6)
    phi = random_phi(rng, ch.N)
    varpi = sr.update_weights(ch, phi)
    for k in range(ch.K):
        Wk = interference_covariance(ch, phi, k)
        h = ch.h_d[k] + ch.G @ (phi * ch.h_r[k])
        ref = np.real(h.conj() @ np.linalg.solve(Wk, h))
        assert varpi[k] == pytest.approx(ref, rel=1e-5)


def test_surrogate_tight_and_strict(rng):
    for _ in range(50):
        ch = random_channels(rng, M=rng.integers(1, 5), K=rng.integers(1, 5), N=4)
        phi = random_phi(rng, 4)
        varpi, V = sr.update_weights(ch, phi), sr.update_receivers(ch, phi)
        for k in range(ch.K):
            R = rate(ch, phi, k)
            assert abs(sr.rate_surrogate(ch, phi, V[k], varpi[k], k) - R) < 1e-9
            assert sr.rate_surrogate(ch, phi, V[k], 1.1 * varpi[k], k) < R
            v = V[k] + 0.05 * crandn(rng, ch.M)
            assert sr.rate_surrogate(ch, phi, v, varpi[k], k) < R


def test_receiver_two_step_tightness(rng):
    ch = random_channels(rng, M=3, K=3, N=5)
    phi = random_phi(rng, 5)
    V = sr.update_receivers(ch, phi)
    for k in range(ch.K):
        # with v fixed the surrogate is -varpi b + log varpi + const, maximized at 1/b
        b = (1.0 + np.log(ch.q[k]) - sr.rate_surrogate(ch, phi, V[k], 1.0, k))
        assert abs(sr.rate_surrogate(ch, phi, V[k], 1.0 / b, k) - rate(ch, phi, k)) < 1e-9
        u = optimal_receiver(ch, phi, k)
        c = np.vdot(u, V[k]) / np.vdot(u, u)
        np.testing.assert_allclose(V[k], c * u, atol=1e-12)


def test_p12_form_oracle(rng):
    for _ in range(10):
        ch = random_channels(rng, M=3, K=3, N=4)
        V = crandn(rng, ch.K, ch.M)
        varpi = rng.uniform(0.5, 3, ch.K)
        for k in range(ch.K):
            f = sr.surrogate_form(ch, V[k], varpi[k], k)
            assert np.linalg.eigvalsh(f.P).max() <= 1e-12
            for _ in range(20):
                phi = random_phi(rng, ch.N)
                assert abs(f.value(phi) - sr.rate_surrogate(ch, phi, V[k], varpi[k], k)) < 1e-9


def test_p12_aggregation(rng):
    ch = random_channels(rng, M=2, K=3, N=3)
    V = crandn(rng, 3, 2)
    varpi = rng.uniform(0.5, 3, 3)
    lam, mu = rng.uniform(0.1, 1, 3), rng.uniform(0.1, 1, 3)
    prob = sr.build_p12(ch, V, varpi, lam, mu, np.full(3, 0.2))
    assert prob.sense == "max" and qcqp.check_convexity(prob).convex
    phi = random_phi(rng, 3)
    ref = sum(lam[k] * mu[k] * sr.rate_surrogate(ch, phi, V[k], varpi[k], k) for k in range(3))
    assert prob.objective.value(phi) == pytest.approx(ref, abs=1e-9)
    zero = sr.build_p12(ch, V, varpi, np.zeros(3), np.zeros(3), np.zeros(3))
    assert np.all(zero.objective.P == 0) and np.all(zero.objective.p == 0)
    assert np.all(sr.surrogate_form(ch, np.zeros(2), 1.3, 0).P == 0)


def test_newton_residuals():
    Rs, A = np.array([2.0, 4.0]), np.array([1.0, 3.0])
    lam, mu = 1 / Rs, A / Rs
    Lam, Gam = sr.newton_residuals(lam, mu, Rs, A)
    assert np.all(Lam == 0) and np.all(Gam == 0)
    lam2, mu2, delta, i = sr.newton_step(lam, mu, Rs, A)
    assert i == 0 and delta == 0
    np.testing.assert_array_equal(lam2, lam)


def test_newton_one_step_single_user():
    lam, mu, delta, i = sr.newton_step([0.7], [2.0], [1.6], [0.9])
    assert i == 0 and delta == pytest.approx(0.0, abs=1e-28)
    assert lam[0] == pytest.approx(1 / 1.6) and mu[0] == pytest.approx(0.9 / 1.6)


def test_newton_step_minimal_exponent(rng):
    # with Rs fixed the full step always passes; a harsher eps forces backtracking
    for _ in range(50):
        K = rng.integers(1, 5)
        lam, mu = rng.uniform(0.1, 2, K), rng.uniform(0.1, 2, K)
        Rs, A = rng.uniform(0.5, 3, K), rng.uniform(0, 2, K)
        xi, eps = 0.5, rng.uniform(0.5, 1.9)
        d0 = sr.residual_norm(lam, mu, Rs, A)
        _, _, delta, i = sr.newton_step(lam, mu, Rs, A, xi, eps)
        assert delta <= (1 - xi ** i * eps) ** 2 * d0
        if i > 0:
            lp, mp = sr.newton_candidate(lam, mu, Rs, A, xi ** (i - 1))
            assert sr.residual_norm(lp, mp, Rs, A) > (1 - xi ** (i - 1) * eps) ** 2 * d0
    with pytest.raises(ValueError):
        sr.newton_step([1.0], [1.0], [1.0], [1.0], xi=1.0)


def test_initial_state_zero_cost_user(rng):
    ch = random_channels(rng, K=3, N=3)
    phi = random_phi(rng, 3)
    st = sr.initial_state(ch, phi, [1.0, 0.0, 2.0])
    R = rates(ch, phi)
    np.testing.assert_allclose(st.lam, 1 / R)
    assert st.mu[1] == 0 and np.all(st.varpi >= 1)
    Lam, Gam = sr.newton_residuals(st.lam, st.mu, R, [1.0, 0.0, 2.0])
    assert np.abs(Lam).max() < 1e-15 and np.abs(Gam).max() < 1e-15


def test_inner_bcd_single_user_monotone(rng):
    ch = random_channels(rng, M=2, K=1, N=4)
    phi = 0.1 * random_phi(rng, 4)
    st = sr.initial_state(ch, phi, [1.0])
    new, cycles, trace = sr.inner_bcd(ch, st, [0.0])
    assert cycles >= 2
    assert np.all(np.diff(trace) >= -1e-12)
    assert rate(ch, new.phi, 0) >= rate(ch, phi, 0)


def test_inner_bcd_keeps_floors_and_fixed_point(rng):
    ch = random_channels(rng, M=2, K=3, N=3)
    phi = random_phi(rng, 3)
    floors = 0.9 * rates(ch, phi)
    st = sr.initial_state(ch, phi, [1.0, 2.0, 0.5])
    new, _, trace = sr.inner_bcd(ch, st, floors)
    assert np.all(np.diff(trace) >= -1e-12)
    assert np.all(rates(ch, new.phi) >= floors - CERT_TOL)
    again, _, trace2 = sr.inner_bcd(ch, new, floors, sr.SumRatioOptions(max_inner=1))
    w = new.lam * new.mu
    assert abs(w @ rates(ch, again.phi) - w @ rates(ch, new.phi)) < 1e-6 * abs(trace2[0])


def test_optimize_contracts():
    ch = generate_channels(calibrated_geometry(8), 0)
    econ = OffloadEconomy(np.zeros(4), [1.0, 0.5, 2.0, 0.0], np.full(4, 0.5))
    res = sr.optimize(ch, econ, rng=np.random.default_rng(0))
    assert res.status == "converged"
    assert res.delta_trace[-1] < 1e-8
    assert res.objective <= res.start_objective + 1e-12
    lam_res, mu_res = res.kkt_residuals(econ.A)
    assert lam_res < 1e-4 and mu_res < 1e-4
    for i, d0, d1 in zip(res.step_exponents, res.delta_trace, res.delta_trace[1:]):
        assert d1 <= (1 - 0.5 ** i * 0.01) ** 2 * d0
    assert min(res.min_slack_trace) >= -CERT_TOL
    assert res.objective == pytest.approx(ratio_objective(econ, rates(ch, res.phi)))
    assert res.mu[3] == 0
    short = sr.optimize(ch, econ, opts=sr.SumRatioOptions(max_outer=0), phi0=res.start_phi)
    assert short.status == "max-iter" and "limit" in short.diagnostics


def test_optimize_rejects_infeasible_start(rng):
    ch = random_channels(rng, M=2, K=2, N=2)
    econ = OffloadEconomy(np.zeros(2), np.ones(2), np.full(2, 50.0))
    with pytest.raises(sr.InfeasibleStart):
        sr.optimize(ch, econ, phi0=np.zeros(2))
