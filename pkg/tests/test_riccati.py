import math

import numpy as np
import pytest

from roughlq.pendulum import build_pendulum
from roughlq.riccati import (
    ControlDesign,
    RiccatiError,
    care_residual,
    fundamental_solution,
    solve_care,
    solve_lyapunov,
    spectral_abscissa,
    stabilizing_gain,
)


def riccati_ode_solution(a, b, q, r, tau=150.0, dt=5e-3):
    """Independent oracle: integrate dP/dtau = A'P + PA - PBR^-1B'P + Q
    forward (RK4) from P=0 until stationary.

    RK4 preserves the equilibrium exactly, so the horizon (set by the
    slowest closed-loop mode) controls accuracy, not the step size."""
    a, q, r = np.atleast_2d(a), np.atleast_2d(q), np.atleast_2d(r)
    b = np.atleast_2d(b) if np.ndim(b) > 1 else np.asarray(b, dtype=float)[:, None]
    rinv = np.linalg.inv(r)

    def rhs(p):
        return a.T @ p + p @ a - p @ b @ rinv @ b.T @ p + q

    p = np.zeros_like(q)
    steps = int(tau / dt)
    for _ in range(steps):
        k1 = rhs(p)
        k2 = rhs(p + 0.5 * dt * k1)
        k3 = rhs(p + 0.5 * dt * k2)
        k4 = rhs(p + dt * k3)
        p = p + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        p = 0.5 * (p + p.T)
    return p


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def test_scalar_integrator():
    d = solve_care(np.array([[0.0]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    assert d.P[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert d.K[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert d.A_cl[0, 0] == pytest.approx(-1.0, abs=1e-12)


@pytest.mark.parametrize("a,q", [(1.0, 3.0), (-1.0, 3.0), (2.5, 0.7)])
def test_scalar_quadratic_formula(a, q):
    # stabilising root of 2 a p - p^2 + q = 0 is a + sqrt(a^2 + q)
    d = solve_care(np.array([[a]]), np.array([[1.0]]), np.array([[q]]), np.array([[1.0]]))
    assert d.P[0, 0] == pytest.approx(a + math.sqrt(a * a + q), rel=1e-12)


def test_pendulum_care_vs_ode_oracle():
    pm = build_pendulum()
    q, r = np.eye(4), np.array([[1.0]])
    d = solve_care(pm.A, pm.B, q, r)
    assert d.care_residual < 1e-9 * (1.0 + np.linalg.norm(d.P) ** 2)
    oracle = riccati_ode_solution(pm.A, pm.B, q, r)
    assert np.max(np.abs(d.P - oracle)) < 1e-6


def test_design_invariants_on_pendulum():
    pm = build_pendulum()
    d = solve_care(pm.A, pm.B, np.eye(4), np.array([[1.0]]))
    assert np.linalg.norm(d.P - d.P.T) < 1e-10 * np.linalg.norm(d.P)
    assert np.min(np.linalg.eigvalsh(d.P)) > 0.0
    assert spectral_abscissa(d.A_cl) < 0.0


# ---------------------------------------------------------------------------
# residual function
# ---------------------------------------------------------------------------

def test_residual_exact_solution():
    a, b, q, r = (np.array([[x]]) for x in (1.0, 1.0, 3.0, 1.0))
    p = np.array([[3.0]])  # exact: 2*3 - 9 + 3 = 0
    assert care_residual(p, a, b, q, r) < 1e-14


def test_residual_zero_p():
    q = np.eye(3)
    res = care_residual(np.zeros((3, 3)), np.zeros((3, 3)), np.ones((3, 1)), q, np.eye(1))
    assert res == pytest.approx(math.sqrt(3.0), abs=1e-14)


def test_residual_linear_sensitivity():
    # finite-difference: residual of P + eps*I grows ~linearly in eps
    pm = build_pendulum()
    q, r = np.eye(4), np.array([[1.0]])
    d = solve_care(pm.A, pm.B, q, r)
    r1 = care_residual(d.P + 1e-3 * np.eye(4), pm.A, pm.B, q, r)
    r2 = care_residual(d.P + 2e-3 * np.eye(4), pm.A, pm.B, q, r)
    assert r1 > 1e-4
    assert r2 / r1 == pytest.approx(2.0, rel=0.05)


def test_non_stabilizable_pair_rejected():
    # unstable mode invisible to the input
    a = np.diag([1.0, -1.0])
    b = np.array([[0.0], [1.0]])
    with pytest.raises(RiccatiError):
        solve_care(a, b, np.eye(2), np.eye(1))


def test_indefinite_r_rejected():
    with pytest.raises(RiccatiError):
        solve_care(np.zeros((1, 1)), np.eye(1), np.eye(1), -np.eye(1))


# ---------------------------------------------------------------------------
# uniqueness probe
# ---------------------------------------------------------------------------

def test_kleinman_unique_limit_from_two_starts():
    pm = build_pendulum()
    q, r = np.eye(4), np.array([[1.0]])
    k_a = stabilizing_gain(pm.A, pm.B)
    k_b = stabilizing_gain(pm.A, pm.B, shift=40.0)
    assert np.max(np.abs(k_a - k_b)) > 1e-6  # genuinely different starts
    d_a = solve_care(pm.A, pm.B, q, r, k0=k_a)
    d_b = solve_care(pm.A, pm.B, q, r, k0=k_b)
    assert np.max(np.abs(d_a.P - d_b.P)) < 1e-8


# ---------------------------------------------------------------------------
# fundamental solution
# ---------------------------------------------------------------------------

def test_phi_identity_at_s_equals_t():
    a_cl = np.array([[0.0, 1.0], [-2.0, -3.0]])
    assert np.allclose(fundamental_solution(a_cl, 1.5, 1.5), np.eye(2), atol=1e-14)


def test_phi_diagonal_exponential():
    a_cl = np.diag([-1.0, -2.0])
    phi = fundamental_solution(a_cl, 1.0, 0.0)
    assert np.allclose(np.diag(phi), [math.exp(-1.0), math.exp(-2.0)], rtol=1e-12)


def test_phi_semigroup_property():
    rng = np.random.Generator(np.random.PCG64(3))
    a_cl = -np.eye(3) + 0.3 * rng.standard_normal((3, 3))
    worst = 0.0
    for _ in range(20):
        s, u, t = np.sort(rng.uniform(-2.0, 2.0, size=3))[::-1]
        lhs = fundamental_solution(a_cl, s, u) @ fundamental_solution(a_cl, u, t)
        rhs = fundamental_solution(a_cl, s, t)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    assert worst < 1e-10


def test_phi_satisfies_ode_by_central_difference():
    pm = build_pendulum()
    d = solve_care(pm.A, pm.B, np.eye(4), np.array([[1.0]]))
    a_cl = d.A_cl
    s, t = 0.7, 0.2
    errs = []
    for h in (1e-3, 1e-4):
        num = (fundamental_solution(a_cl, s + h, t) - fundamental_solution(a_cl, s - h, t)) / (2 * h)
        errs.append(np.max(np.abs(num - a_cl @ fundamental_solution(a_cl, s, t))))
    order = math.log(errs[0] / errs[1]) / math.log(10.0)
    assert order >= 1.8


def test_phi_decays_for_hurwitz():
    pm = build_pendulum()
    d = solve_care(pm.A, pm.B, np.eye(4), np.array([[1.0]]))
    # beyond a few slowest time constants the norm must contract
    tau = 5.0 / abs(spectral_abscissa(d.A_cl))
    assert np.linalg.norm(fundamental_solution(d.A_cl, tau, 0.0), 2) < 1.0


# ---------------------------------------------------------------------------
# Lyapunov helper
# ---------------------------------------------------------------------------

def test_lyapunov_solver_residual():
    rng = np.random.Generator(np.random.PCG64(5))
    a = -2.0 * np.eye(4) + 0.5 * rng.standard_normal((4, 4))
    q = np.eye(4)
    x = solve_lyapunov(a, q)
    assert np.max(np.abs(a.T @ x + x @ a + q)) < 1e-12
