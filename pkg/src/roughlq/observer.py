"""Steady-state observer design under correlated rough noises.

Second moments of the per-step noise increments, normalised by the step,
feed a modified steady-state equation for the error second moment S and
the gain

    L = (2 S C' + R_vw + R_wv') inv(Sigma_w) / 2.

With zero cross-correlations this collapses to the classical
filter algebraic Riccati equation and gain ``L = S C' inv(Sigma_w)``.

The increment moments are grid-dependent quantities for long-memory
noise (the per-step variance of an fBm increment scales like
``dt^(2H)``, so the normalised moment carries ``dt^(2H-1)``): estimate
them on the same grid the simulation uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .riccati import solve_lyapunov, spectral_abscissa

__all__ = [
    "ObserverError",
    "NoiseSecondMoments",
    "ObserverDesign",
    "estimate_second_moments",
    "observer_gain",
    "modified_are_residual",
    "solve_observer_steady_state",
    "error_dynamics_step",
    "gain_stationarity_check",
    "simulate_error_process",
]

MIN_REPLICATIONS = 100


class ObserverError(ValueError):
    """Raised for invalid moments or failed steady-state iteration."""


@dataclass(frozen=True)
class NoiseSecondMoments:
    """Per-step increment second moments, normalised by the step."""

    sigma_v: np.ndarray
    sigma_w: np.ndarray
    r_vw: np.ndarray
    r_wv: np.ndarray
    dt: float
    n_samples: int = 0
    truncation: float | None = None

    def __post_init__(self):
        for name in ("sigma_v", "sigma_w", "r_vw", "r_wv"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))

    @classmethod
    def uncorrelated(cls, sigma_v, sigma_w, dt: float = 0.0) -> "NoiseSecondMoments":
        sigma_v = np.atleast_2d(np.asarray(sigma_v, dtype=float))
        sigma_w = np.atleast_2d(np.asarray(sigma_w, dtype=float))
        n, p = sigma_v.shape[0], sigma_w.shape[0]
        return cls(
            sigma_v=sigma_v,
            sigma_w=sigma_w,
            r_vw=np.zeros((n, p)),
            r_wv=np.zeros((p, n)),
            dt=dt,
        )


@dataclass(frozen=True)
class ObserverDesign:
    """Steady-state error moment S, gain L and the error matrix A - LC."""

    S: np.ndarray
    L: np.ndarray
    A_err: np.ndarray
    residual: float


def _increment_stack(paths) -> np.ndarray:
    if isinstance(paths, np.ndarray):
        arr = paths
        if arr.ndim == 2:
            arr = arr[None]
        inc = np.diff(arr, axis=1)
    else:
        inc = np.stack([p.increments for p in paths])
    return inc


def estimate_second_moments(
    v_paths,
    w_paths,
    truncate_quantile: float | None = None,
) -> NoiseSecondMoments:
    """Sample second moments of jointly sampled (v, w) increments.

    Accepts lists of :class:`SamplePath` or raw ``(reps, N+1, d)``
    arrays; at least 100 replications are required.  When
    ``truncate_quantile`` is set, increments are symmetrically clipped
    at that quantile of their absolute values before the moments are
    formed (heavy-tailed noise has no finite raw second moment; the
    truncated surrogate is what the design consumes), and the clip level
    is recorded.
    """
    dt = v_paths[0].dt if not isinstance(v_paths, np.ndarray) else None
    inc_v = _increment_stack(v_paths)
    inc_w = _increment_stack(w_paths)
    if dt is None:
        raise ObserverError("raw arrays need SamplePath input to carry dt")
    reps = inc_v.shape[0]
    if reps < MIN_REPLICATIONS:
        raise ObserverError(f"need at least {MIN_REPLICATIONS} replications, got {reps}")
    if inc_w.shape[0] != reps or inc_w.shape[1] != inc_v.shape[1]:
        raise ObserverError("v and w replication shapes disagree")

    clip_level = None
    if truncate_quantile is not None:
        level = float(
            np.quantile(np.abs(np.concatenate([inc_v.ravel(), inc_w.ravel()])), truncate_quantile)
        )
        inc_v = np.clip(inc_v, -level, level)
        inc_w = np.clip(inc_w, -level, level)
        clip_level = level

    count = reps * inc_v.shape[1]
    flat_v = inc_v.reshape(count, -1)
    flat_w = inc_w.reshape(count, -1)
    norm = 1.0 / (count * dt)
    sigma_v = norm * (flat_v.T @ flat_v)
    sigma_w = norm * (flat_w.T @ flat_w)
    r_vw = norm * (flat_v.T @ flat_w)
    return NoiseSecondMoments(
        sigma_v=0.5 * (sigma_v + sigma_v.T),
        sigma_w=0.5 * (sigma_w + sigma_w.T),
        r_vw=r_vw,
        r_wv=r_vw.T.copy(),
        dt=dt,
        n_samples=count,
        truncation=clip_level,
    )


def observer_gain(s: np.ndarray, c: np.ndarray, moments: NoiseSecondMoments) -> np.ndarray:
    """Gain ``L = (2 S C' + R_vw + R_wv') inv(Sigma_w) / 2``."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    numer = 0.5 * (2.0 * s @ c.T + moments.r_vw + moments.r_wv.T)
    try:
        return np.linalg.solve(moments.sigma_w, numer.T).T
    except np.linalg.LinAlgError as exc:
        raise ObserverError("Sigma_w is singular; the gain needs its inverse") from exc


def modified_are_residual(s, a, c, moments: NoiseSecondMoments) -> float:
    """Frobenius norm of the modified steady-state equation at S."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    sw = moments.sigma_w
    rvw, rwv = moments.r_vw, moments.r_wv
    solve = np.linalg.solve
    cs = c @ s
    expr = (
        a @ s
        + s @ a.T
        + moments.sigma_v
        - s @ c.T @ solve(sw, cs)
        - 0.25
        * (
            rvw @ solve(sw, rvw.T)
            - rwv.T @ solve(sw, rvw.T)
            + 3.0 * rvw @ solve(sw, rwv)
            + rwv.T @ solve(sw, rwv)
        )
        - rvw @ solve(sw, cs)
        - s @ c.T @ solve(sw, rwv)
    )
    return float(np.linalg.norm(expr))


def _covariance_rate(s, a, c, l_gain, moments: NoiseSecondMoments) -> np.ndarray:
    a_err = a - l_gain @ c
    return (
        a_err @ s
        + s @ a_err.T
        + moments.sigma_v
        + l_gain @ moments.sigma_w @ l_gain.T
        - l_gain @ moments.r_wv
        - moments.r_vw @ l_gain.T
    )


def solve_observer_steady_state(
    a,
    c,
    moments: NoiseSecondMoments,
    tol: float = 1e-13,
    max_iter: int = 500_000,
) -> ObserverDesign:
    """Damped fixed-point iteration on the error-covariance flow.

    Forward-Euler steps of ``dS = rate(S, L(S))`` with the gain
    re-optimised every step and the damping adapted to the observed
    residual; the cross-correlation terms break the symmetric Riccati
    structure a direct solver would need.  Convergence is declared on
    the modified-equation residual relative to ``1 + ||S||^2``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    n = a.shape[0]
    if spectral_abscissa(a) < 0.0:
        s = solve_lyapunov(a.T, moments.sigma_v)
        s = 0.5 * (s + s.T)
        if np.min(np.linalg.eigvalsh(s)) < 0.0:
            s = np.eye(n)
    else:
        s = np.eye(n)

    damp = 1.0
    best_s, best_rel = s, np.inf
    res = np.inf
    for _ in range(max_iter):
        l_gain = observer_gain(s, c, moments)
        a_err = a - l_gain @ c
        rate = _covariance_rate(s, a, c, l_gain, moments)
        res = float(np.linalg.norm(rate))
        scale = 1.0 + float(np.linalg.norm(s)) ** 2
        if res < tol * scale:
            break
        if not np.isfinite(res) or np.linalg.norm(s) > 1e10:
            # blown past the basin: restart from the best iterate, damped
            s = best_s
            damp *= 0.5
            if damp < 1e-8:
                raise ObserverError("steady-state iteration stalled")
            continue
        if res / scale < best_rel:
            best_s, best_rel = s, res / scale
        # forward-Euler stability bound for the covariance flow, whose
        # local Jacobian spectrum is pairwise sums of A_err eigenvalues
        eta = damp * 0.125 / max(1e-12, float(np.linalg.norm(a_err)))
        s = s + eta * rate
        s = 0.5 * (s + s.T)
    else:
        raise ObserverError(
            f"no convergence in {max_iter} iterations; last residual {res:.3e}"
        )

    l_gain = observer_gain(s, c, moments)
    a_err = a - l_gain @ c
    residual = modified_are_residual(s, a, c, moments)
    eig = np.linalg.eigvalsh(0.5 * (s + s.T))
    if eig.min() < -1e-10 * max(1.0, eig.max()):
        raise ObserverError("steady-state moment is not positive semidefinite")
    if spectral_abscissa(a_err) >= 0.0:
        raise ObserverError("error dynamics not Hurwitz at the computed gain")
    if residual >= 1e-8 * (1.0 + float(np.linalg.norm(s)) ** 2):
        raise ObserverError(f"modified steady-state residual too large: {residual:.3e}")
    return ObserverDesign(S=s, L=l_gain, A_err=a_err, residual=residual)


def error_dynamics_step(a, l_gain, c, e, dv, dw, dt: float) -> np.ndarray:
    """One Euler step of ``de = (A - LC) e dt + dv - L dw``."""
    a_err = np.atleast_2d(a) - np.atleast_2d(l_gain) @ np.atleast_2d(c)
    return e + a_err @ e * dt + dv - np.atleast_2d(l_gain) @ dw


def gain_stationarity_check(s, l_gain, c, moments: NoiseSecondMoments) -> float:
    """First-order condition ``||-2SC' + 2 L Sigma_w - R_vw - R_wv'||``."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    l_gain = np.atleast_2d(np.asarray(l_gain, dtype=float))
    expr = -2.0 * s @ c.T + 2.0 * l_gain @ moments.sigma_w - moments.r_vw - moments.r_wv.T
    return float(np.linalg.norm(expr))


def simulate_error_process(a, l_gain, c, v_incs, w_incs, dt: float, e0=None) -> np.ndarray:
    """Error trajectories for stacked increment batches.

    ``v_incs``/``w_incs`` have shape ``(reps, N, d)``; returns the error
    history ``(reps, N + 1, n)`` under the error recursion.
    """
    a_err = np.atleast_2d(a) - np.atleast_2d(l_gain) @ np.atleast_2d(c)
    reps, n_steps, _ = v_incs.shape
    n = a_err.shape[0]
    e = np.zeros((reps, n_steps + 1, n))
    if e0 is not None:
        e[:, 0] = e0
    step = np.eye(n) + a_err * dt
    lt = np.atleast_2d(l_gain).T
    for k in range(n_steps):
        e[:, k + 1] = e[:, k] @ step.T + v_incs[:, k] - w_incs[:, k] @ lt
    return e
