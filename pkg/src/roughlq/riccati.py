"""Continuous algebraic Riccati equation and the closed-loop flow.

The stabilising solution is computed by Kleinman-Newton iteration: each
step solves a Lyapunov equation by Kronecker vectorisation, which is
exact and entirely adequate at the state dimensions this package targets
(n <= 10).  No Schur/Hamiltonian machinery is required, and the
iteration can be started from any user-supplied stabilising gain, which
the uniqueness probes in the test suite exploit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

__all__ = [
    "RiccatiError",
    "ControlDesign",
    "spectral_abscissa",
    "solve_lyapunov",
    "stabilizing_gain",
    "solve_care",
    "care_residual",
    "fundamental_solution",
]


class RiccatiError(ValueError):
    """Raised when a Riccati problem is ill-posed or iteration fails."""


def spectral_abscissa(m: np.ndarray) -> float:
    """Largest real part of the eigenvalues of ``m``."""
    return float(np.max(np.real(np.linalg.eigvals(m))))


def solve_lyapunov(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve ``a^T X + X a + q = 0`` by Kronecker vectorisation."""
    n = a.shape[0]
    eye = np.eye(n)
    lhs = np.kron(eye, a.T) + np.kron(a.T, eye)
    x = np.linalg.solve(lhs, -q.reshape(n * n, order="F"))
    return x.reshape((n, n), order="F")


def stabilizing_gain(a: np.ndarray, b: np.ndarray, shift: float | None = None) -> np.ndarray:
    """A gain K with ``a - b K`` Hurwitz, via a shifted Lyapunov solve.

    With ``M = a + shift*I`` anti-stable, the solution Z of
    ``M Z + Z M^T = 2 b b^T`` yields the stabilising gain
    ``K = b^T Z^{-1}``.  The shift defaults to ``1 + ||a||_F`` and is
    doubled a few times if the resulting gain fails the eigenvalue
    check; a persistent failure signals a non-stabilisable pair.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] != b.shape[0]:
        raise RiccatiError("A and B row counts disagree")
    if spectral_abscissa(a) < 0.0:
        return np.zeros((b.shape[1], a.shape[0]))
    base = shift if shift is not None else 1.0 + float(np.linalg.norm(a))
    rhs = 2.0 * b @ b.T
    for attempt in range(6):
        m = a + base * (2.0**attempt) * np.eye(a.shape[0])
        try:
            z = solve_lyapunov(m.T, -rhs)  # m z + z m^T = rhs
            z = 0.5 * (z + z.T)
            gain = np.linalg.solve(z, b).T
        except np.linalg.LinAlgError:
            continue
        if spectral_abscissa(a - b @ gain) < 0.0:
            return gain
    raise RiccatiError(
        "could not find a stabilising initial gain; is (A, B) stabilisable?"
    )


@dataclass(frozen=True)
class ControlDesign:
    """Stabilising CARE solution and derived closed-loop data."""

    P: np.ndarray
    K: np.ndarray
    A_cl: np.ndarray
    care_residual: float

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.K.shape[0]


def care_residual(p: np.ndarray, a: np.ndarray, b: np.ndarray, q: np.ndarray, r: np.ndarray) -> float:
    """Frobenius norm of ``A^T P + P A - P B R^{-1} B^T P + Q``."""
    rinv_btp = np.linalg.solve(r, b.T @ p)
    res = a.T @ p + p @ a - p @ b @ rinv_btp + q
    return float(np.linalg.norm(res))


def solve_care(
    a,
    b,
    q,
    r,
    k0: np.ndarray | None = None,
    tol: float = 1e-13,
    max_iter: int = 100,
) -> ControlDesign:
    """Stabilising solution of ``A^T P + P A - P B R^{-1} B^T P + Q = 0``.

    Kleinman-Newton: from a stabilising gain K_i, solve the Lyapunov
    equation for P_i under ``A - B K_i``, then update
    ``K_{i+1} = R^{-1} B^T P_i``.  Each iterate is symmetrised to
    suppress drift.  ``k0`` overrides the automatic initial gain.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    n = a.shape[0]
    if np.linalg.norm(q - q.T) > 1e-10 * max(1.0, np.linalg.norm(q)):
        raise RiccatiError("Q must be symmetric")
    if np.linalg.norm(r - r.T) > 1e-10 * max(1.0, np.linalg.norm(r)):
        raise RiccatiError("R must be symmetric")
    if np.min(np.linalg.eigvalsh(r)) <= 0.0:
        raise RiccatiError("R must be positive definite")

    gain = np.atleast_2d(np.asarray(k0, dtype=float)) if k0 is not None else stabilizing_gain(a, b)
    if spectral_abscissa(a - b @ gain) >= 0.0:
        raise RiccatiError("initial gain is not stabilising")

    p = np.zeros((n, n))
    for _ in range(max_iter):
        a_cl = a - b @ gain
        p_next = solve_lyapunov(a_cl, q + gain.T @ r @ gain)
        p_next = 0.5 * (p_next + p_next.T)
        gain = np.linalg.solve(r, b.T @ p_next)
        if np.linalg.norm(p_next - p) <= tol * max(1.0, np.linalg.norm(p_next)):
            p = p_next
            break
        p = p_next
    else:
        raise RiccatiError("Kleinman iteration did not converge")

    residual = care_residual(p, a, b, q, r)
    a_cl = a - b @ gain
    if np.linalg.norm(p - p.T) > 1e-10 * max(1.0, np.linalg.norm(p)):
        raise RiccatiError("CARE solution drifted from symmetry")
    if np.min(np.linalg.eigvalsh(p)) <= 0.0:
        raise RiccatiError("CARE solution is not positive definite")
    if spectral_abscissa(a_cl) >= 0.0:
        raise RiccatiError("closed-loop matrix is not Hurwitz")
    if residual >= 1e-9 * (1.0 + np.linalg.norm(p) ** 2):
        raise RiccatiError(f"CARE residual too large: {residual:.3e}")
    return ControlDesign(P=p, K=gain, A_cl=a_cl, care_residual=residual)


def fundamental_solution(a_cl: np.ndarray, s: float, t: float) -> np.ndarray:
    """Closed-loop transition matrix ``Phi(s, t) = exp(A_cl (s - t))``.

    Solves ``d Phi / ds = A_cl Phi`` with ``Phi(t, t) = I``; the matrix
    exponential uses scaling-and-squaring with the degree-13 rational
    approximant.
    """
    return expm(np.asarray(a_cl, dtype=float) * (s - t))
