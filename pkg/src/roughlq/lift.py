"""Level-2 rough-path lifts of sampled paths.

A lifted path stores per-step increments and per-step second-order
tensors; values over any grid interval are reconstructed through Chen's
relation

    XX[s, t] = XX[s, u] + XX[u, t] + X[s, u] (x) X[u, t].

Lifts built here interpolate the samples piecewise-linearly, so the
per-step tensor is the iterated integral of the interpolant,
``0.5 * dX (x) dX``, and the lift is geometric: the symmetric part of
``XX[s, t]`` equals ``0.5 * X[s, t] (x) X[s, t]`` on every interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import SamplePath

__all__ = [
    "LiftError",
    "OffGridError",
    "DegeneratePathError",
    "RoughPath",
    "lift_piecewise_linear",
    "reconstruct",
    "chen_gap",
    "chen_defect",
    "holder_estimate",
    "p_variation",
    "rough_integral_admissible",
    "lift_to_csv",
]


class LiftError(ValueError):
    """Raised for structurally invalid lift operations."""


class OffGridError(LiftError):
    """Raised when a query time does not sit on the lift's grid."""


class DegeneratePathError(LiftError):
    """Raised when an estimate is undefined, e.g. on a constant path."""


@dataclass(frozen=True)
class RoughPath:
    """Grid, per-step increments ``dx`` (N, d) and tensors ``area`` (N, d, d).

    Immutable after construction; reconstruction over wider intervals is
    done on demand via Chen accumulation.
    """

    t: np.ndarray
    dx: np.ndarray
    area: np.ndarray
    holder: float | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        dx = np.asarray(self.dx, dtype=float)
        area = np.asarray(self.area, dtype=float)
        n = t.shape[0] - 1
        if n < 1:
            raise LiftError("a rough path needs at least one step")
        if dx.shape != (n, dx.shape[1]) or area.shape != (n, dx.shape[1], dx.shape[1]):
            raise LiftError("inconsistent increment/tensor shapes")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "area", area)

    @property
    def d(self) -> int:
        return self.dx.shape[1]

    @property
    def n_steps(self) -> int:
        return self.dx.shape[0]

    def index_of(self, time: float) -> int:
        """Grid index of ``time``; rejects off-grid queries."""
        dt = self.t[1] - self.t[0]
        k = int(round((time - self.t[0]) / dt))
        if k < 0 or k > self.n_steps or abs(self.t[0] + k * dt - time) > 1e-9 * max(dt, 1.0):
            raise OffGridError(f"time {time} is not on the lift grid")
        return k


def lift_piecewise_linear(path: SamplePath) -> RoughPath:
    """Lift a sampled path through its piecewise-linear interpolant.

    Level 1 keeps the raw increments; the per-step level-2 tensor is the
    iterated integral of the linear interpolant, ``0.5 * dX (x) dX``.
    """
    dx = path.increments
    area = 0.5 * np.einsum("ki,kj->kij", dx, dx)
    return RoughPath(t=path.t, dx=dx, area=area, holder=path.holder)


def reconstruct(rp: RoughPath, s: float, t: float):
    """Assemble ``(X[s,t], XX[s,t])`` by left-to-right Chen accumulation.

    ``s`` and ``t`` must be grid times with ``s <= t``.
    """
    i = rp.index_of(s)
    j = rp.index_of(t)
    if i > j:
        raise LiftError("need s <= t")
    x = np.zeros(rp.d)
    xx = np.zeros((rp.d, rp.d))
    for k in range(i, j):
        xx += rp.area[k] + np.outer(x, rp.dx[k])
        x += rp.dx[k]
    return x, xx


def chen_gap(xx_st, xx_su, xx_ut, x_su, x_ut) -> float:
    """Raw Chen identity residual for explicitly supplied blocks.

    Lets callers check a *claimed* second-level value against the
    composition of its pieces, e.g. to exhibit a constructed violation.
    """
    defect = np.asarray(xx_st) - np.asarray(xx_su) - np.asarray(xx_ut) - np.outer(x_su, x_ut)
    return float(np.linalg.norm(defect))


def chen_defect(rp: RoughPath, s: float, u: float, t: float) -> float:
    """Frobenius norm of XX[s,t] - XX[s,u] - XX[u,t] - X[s,u] (x) X[u,t]."""
    x_su, xx_su = reconstruct(rp, s, u)
    x_ut, xx_ut = reconstruct(rp, u, t)
    _, xx_st = reconstruct(rp, s, t)
    return chen_gap(xx_st, xx_su, xx_ut, x_su, x_ut)


def holder_estimate(path: SamplePath, max_lag: int | None = None) -> float:
    """Regularity exponent from max-increment scaling over dyadic lags.

    Fits ``log max_k |x(t_{k+l}) - x(t_k)|`` against ``log(l * dt)`` by
    least squares over lags l = 1, 2, 4, ...; the slope estimates the
    Holder exponent.  Raises :class:`DegeneratePathError` on constant
    paths, where the statistic is undefined.
    """
    n = path.n_steps
    if n < 64:
        raise LiftError("need at least 64 steps for a regularity estimate")
    if max_lag is None:
        max_lag = min(32, n // 8)
    values = path.values
    lags, peaks = [], []
    lag = 1
    while lag <= max_lag:
        inc = values[lag:] - values[:-lag]
        peak = float(np.max(np.abs(inc)))
        if peak == 0.0:
            raise DegeneratePathError("constant path: regularity undefined")
        lags.append(lag * path.dt)
        peaks.append(peak)
        lag *= 2
    slope = np.polyfit(np.log(lags), np.log(peaks), 1)[0]
    return float(slope)


def p_variation(path: SamplePath, p: float) -> float:
    """p-variation over the sampled grid, by dynamic programming.

    ``sup (sum |x(t_{i+1}) - x(t_i)|^p)^(1/p)`` over all partitions drawn
    from the grid.  The sampled grid stands in for all partitions, so the
    value is a lower bound for the continuous-time supremum.
    """
    if p < 1.0:
        raise LiftError("p-variation needs p >= 1")
    values = path.values
    n = values.shape[0]
    best = np.zeros(n)
    for j in range(1, n):
        seg = np.linalg.norm(values[j] - values[:j], axis=1) ** p
        best[j] = np.max(best[:j] + seg)
    return float(best[-1] ** (1.0 / p))


def rough_integral_admissible(integrand_holder: float, driver_holder: float) -> bool:
    """Uniqueness predicate for controlled rough integrals.

    An alpha-Holder integrand against a beta-Holder driver is admissible
    when (2 + alpha) * beta > 1.
    """
    return (2.0 + integrand_holder) * driver_holder > 1.0


def lift_to_csv(rp: RoughPath, file) -> None:
    """Per-step triples ``k, dX..., XX...`` at full precision."""
    close = False
    if isinstance(file, (str, bytes)):
        file = open(file, "w")
        close = True
    try:
        d = rp.d
        cols = ["k"]
        cols += [f"dx{i + 1}" for i in range(d)]
        cols += [f"xx{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        file.write(",".join(cols) + "\n")
        for k in range(rp.n_steps):
            row = [str(k)]
            row += [f"{v:.17g}" for v in rp.dx[k]]
            row += [f"{v:.17g}" for v in rp.area[k].ravel()]
            file.write(",".join(row) + "\n")
    finally:
        if close:
            file.close()
