"""Closed-loop pathwise integration with input saturation.

The plant is advanced with first-order (Euler) steps,

    x[k+1] = x[k] + (A x[k] + B u[k]) dt + dv[k],

which converges to the rough-differential-equation solution here because
the noise enters additively: a constant diffusion coefficient makes the
second-level driver terms multiply a vanishing derivative, so they drop
from the step expansion (the refinement probe below checks the rate).

The observer consumes integrated measurement increments
``dy[k] = C x[k] dt + dw[k]`` and updates

    xhat[k+1] = xhat[k] + (A xhat[k] + B u[k]) dt + L (dy[k] - C xhat[k] dt),

whose estimation error follows e[k+1] = e[k] + (A - LC) e[k] dt + dv[k]
- L dw[k], the error recursion the observer design optimises.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .control import (
    Predictor,
    gaussian_correction_series,
    pathwise_correction_series,
)
from .lift import lift_piecewise_linear
from .noise import NoiseModel, SamplePath, make_grid, sample_path
from .observer import ObserverDesign
from .riccati import ControlDesign

__all__ = [
    "SimError",
    "StateSpaceModel",
    "SimConfig",
    "Trajectory",
    "integrate",
    "average_cost",
    "continuity_probe",
    "refinement_convergence",
    "trajectory_to_csv",
    "correction_to_csv",
]

#: state-norm threshold beyond which a run is declared diverged, well
#: before floating-point overflow can contaminate stored values
DIVERGENCE_NORM = 1e12


class SimError(ValueError):
    """Raised for inconsistent simulation setups."""


@dataclass(frozen=True)
class StateSpaceModel:
    """Plant matrices with the quadratic cost weights."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.B, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        c = np.atleast_2d(np.asarray(self.C, dtype=float))
        q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        r = np.atleast_2d(np.asarray(self.R, dtype=float))
        n = a.shape[0]
        if a.shape != (n, n) or b.shape[0] != n or c.shape[1] != n or q.shape != (n, n):
            raise SimError("inconsistent state-space shapes")
        if r.shape[0] != r.shape[1] or r.shape[0] != b.shape[1]:
            raise SimError("R must be m x m")
        for name, mat in (("A", a), ("B", b), ("C", c), ("Q", q), ("R", r)):
            object.__setattr__(self, name, mat)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class SimConfig:
    """One closed-loop run: plant, noises, controller and grid settings."""

    model: StateSpaceModel
    noise_v: NoiseModel
    noise_w: NoiseModel
    controller: str = "classical"  # or "glq"
    predictor: str = "pathwise"  # glq correction mode
    observer_enabled: bool = False
    dt: float = 1e-3
    horizon: float = 10.0
    saturation: float = 1000.0
    x0: np.ndarray | None = None
    xhat0: np.ndarray | None = None
    seed: int = 0
    replications: int = 1
    correction_horizon: float | None = None  # None: integrate to path end
    predictor_window: int = 256

    def __post_init__(self):
        if self.controller not in ("classical", "glq"):
            raise SimError(f"unknown controller {self.controller!r}")
        if self.predictor not in ("pathwise", "gaussian", "zero_mean"):
            raise SimError(f"unknown predictor {self.predictor!r}")
        if self.dt <= 0.0 or self.horizon < 10.0 * self.dt:
            raise SimError("need dt > 0 and horizon >= 10 dt")
        if self.saturation <= 0.0:
            raise SimError("saturation must be positive")
        x0 = np.zeros(self.model.n) if self.x0 is None else np.asarray(self.x0, dtype=float)
        xh = np.zeros(self.model.n) if self.xhat0 is None else np.asarray(self.xhat0, dtype=float)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "xhat0", xh)

    def grid(self) -> np.ndarray:
        return make_grid(self.dt, self.horizon)


@dataclass
class Trajectory:
    """Record of one closed-loop run.

    Arrays stop at the divergence step when ``diverged`` is set; the
    running cost is a trapezoidal accumulation of x'Qx + u'Ru and is
    nondecreasing.
    """

    t: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    u_raw: np.ndarray
    u_sat: np.ndarray
    cost_running: np.ndarray
    diverged: bool = False
    t_diverge: float | None = None
    v_correction: np.ndarray | None = None
    v_increments: np.ndarray | None = None

    @property
    def final_cost(self) -> float:
        return float(self.cost_running[-1])


def _correction_series(config: SimConfig, design: ControlDesign, v_path: SamplePath):
    if config.controller != "glq":
        return None
    if config.predictor == "pathwise":
        driver = lift_piecewise_linear(v_path)
        return pathwise_correction_series(design, driver, horizon=config.correction_horizon)
    if config.predictor == "zero_mean":
        Predictor(model=config.noise_v, method="zero_mean")  # validity check
        return np.zeros((v_path.n_steps + 1, design.n))
    pred = Predictor(
        model=config.noise_v, method="gaussian", window=config.predictor_window
    )
    return gaussian_correction_series(
        design, pred, v_path, horizon=config.correction_horizon
    )


def integrate(
    config: SimConfig,
    v_path: SamplePath,
    w_path: SamplePath,
    design: ControlDesign,
    observer: ObserverDesign | None = None,
) -> Trajectory:
    """Run one closed loop over the configured grid.

    ``v_path``/``w_path`` must sit on the config grid.  Divergence
    (non-finite values or state norm beyond 1e12) halts the run cleanly
    at the offending step and flags the trajectory.
    """
    model = config.model
    grid = config.grid()
    if v_path.t.shape != grid.shape or abs(v_path.t[-1] - grid[-1]) > 1e-9:
        raise SimError("v_path grid does not match the configured grid")
    if v_path.d != model.n:
        raise SimError("process noise dimension must equal the state dimension")
    if config.observer_enabled:
        if observer is None:
            raise SimError("observer run requested without an observer design")
        if w_path.t.shape != grid.shape or w_path.d != model.p:
            raise SimError("w_path must live on the grid with output dimension")

    n_steps = grid.shape[0] - 1
    dt = config.dt
    dv = v_path.increments
    dw = w_path.increments if config.observer_enabled else None
    v_corr = _correction_series(config, design, v_path)

    a_dt = np.eye(model.n) + model.A * dt
    b_dt = model.B * dt
    c_dt = model.C * dt
    l_gain = observer.L if observer is not None else None
    q, r = model.Q, model.R

    x = np.empty((n_steps + 1, model.n))
    xhat = np.empty((n_steps + 1, model.n))
    u_raw = np.zeros((n_steps + 1, model.m))
    u_sat = np.zeros((n_steps + 1, model.m))
    cost = np.zeros(n_steps + 1)
    x[0] = config.x0
    xhat[0] = config.xhat0 if config.observer_enabled else config.x0

    diverged = False
    t_div = None
    k_stop = n_steps
    prev_rate = None
    for k in range(n_steps + 1):
        fb_state = xhat[k] if config.observer_enabled else x[k]
        if v_corr is not None:
            fb_state = fb_state + v_corr[k]
        u = -design.K @ fb_state
        u_raw[k] = u
        u_sat[k] = np.clip(u, -config.saturation, config.saturation)

        rate = float(x[k] @ q @ x[k] + u_sat[k] @ r @ u_sat[k])
        if k > 0:
            cost[k] = cost[k - 1] + 0.5 * dt * (prev_rate + rate)
        prev_rate = rate

        if k == n_steps:
            break
        x_next = a_dt @ x[k] + b_dt @ u_sat[k] + dv[k]
        if config.observer_enabled:
            dy = c_dt @ x[k] + dw[k]
            xhat[k + 1] = a_dt @ xhat[k] + b_dt @ u_sat[k] + l_gain @ (dy - c_dt @ xhat[k])
        else:
            xhat[k + 1] = x_next
        x[k + 1] = x_next
        if not np.all(np.isfinite(x_next)) or np.linalg.norm(x_next) > DIVERGENCE_NORM:
            diverged = True
            t_div = grid[k + 1]
            k_stop = k + 1
            # the halt step carries the last accumulated cost
            cost[k + 1] = cost[k]
            break

    end = k_stop + 1
    return Trajectory(
        t=grid[:end],
        x=x[:end],
        xhat=xhat[:end],
        u_raw=u_raw[:end],
        u_sat=u_sat[:end],
        cost_running=cost[:end],
        diverged=diverged,
        t_diverge=t_div,
        v_correction=None if v_corr is None else v_corr[:end],
        v_increments=dv,
    )


def average_cost(traj: Trajectory, q=None, r=None) -> float:
    """Time-averaged quadratic cost; infinite for diverged runs."""
    if traj.diverged:
        return float("inf")
    horizon = float(traj.t[-1])
    if q is None:
        return traj.final_cost / horizon
    integrand = np.einsum("ki,ij,kj->k", traj.x, np.atleast_2d(q), traj.x)
    integrand += np.einsum("ki,ij,kj->k", traj.u_sat, np.atleast_2d(r), traj.u_sat)
    return float(np.trapezoid(integrand, traj.t)) / horizon


# ---------------------------------------------------------------------------
# qualitative probes
# ---------------------------------------------------------------------------

def _smooth_bump(grid: np.ndarray) -> np.ndarray:
    """A fixed C-infinity perturbation shape, zero at both ends."""
    horizon = grid[-1]
    s = grid / horizon
    return np.sin(2.0 * np.pi * s) * (s * (1.0 - s)) * horizon


def _sawtooth(grid: np.ndarray, teeth: int = 64) -> np.ndarray:
    horizon = grid[-1]
    s = grid / horizon
    saw = 2.0 * np.abs(teeth * s - np.floor(teeth * s + 0.5)) - 0.5
    return saw * (s * (1.0 - s)) * horizon


def holder_size(values: np.ndarray, grid: np.ndarray, exponent: float) -> float:
    """Discrete Holder constant sup |f(t)-f(s)| / |t-s|^exponent."""
    best = 0.0
    n = grid.shape[0] - 1
    lag = 1
    while lag <= n:
        num = np.max(np.abs(values[lag:] - values[:-lag]))
        best = max(best, float(num) / (lag * (grid[1] - grid[0])) ** exponent)
        lag *= 2
    return best


def continuity_probe(
    config: SimConfig,
    design: ControlDesign,
    base_v: SamplePath,
    w_path: SamplePath,
    etas,
    shape: str = "smooth",
    observer: ObserverDesign | None = None,
):
    """Trajectory deviation under driver perturbations of shrinking size.

    Perturbs every noise coordinate by ``eta`` times a fixed smooth (or
    sawtooth) path and reports ``(measured Holder size, sup-norm state
    deviation)`` pairs, ordered as given.
    """
    grid = config.grid()
    bump = _smooth_bump(grid) if shape == "smooth" else _sawtooth(grid)
    base_traj = integrate(config, base_v, w_path, design, observer)
    out = []
    exponent = base_v.holder if base_v.holder is not None else 0.5
    for eta in etas:
        pert_values = base_v.values + eta * bump[:, None]
        pert = SamplePath(t=grid, values=pert_values, seed=base_v.seed, holder=base_v.holder)
        traj = integrate(config, pert, w_path, design, observer)
        k = min(base_traj.x.shape[0], traj.x.shape[0])
        deviation = float(np.max(np.abs(traj.x[:k] - base_traj.x[:k])))
        size = eta * holder_size(bump, grid, float(exponent))
        out.append((size, deviation))
    return out


def refinement_convergence(config: SimConfig, design: ControlDesign, levels=(1, 2, 4)):
    """Self-convergence under step halving with a shared noise realisation.

    Samples the driver on the finest grid, aggregates its increments for
    the coarser grids, and compares trajectories on common times.
    Returns the list of successive sup-norm differences and the fitted
    order ``log2(d[i] / d[i+1])`` averaged over pairs.
    """
    finest = max(levels)
    fine_cfg = replace(config, dt=config.dt / finest)
    fine_grid = fine_cfg.grid()
    v_fine = sample_path(config.noise_v, fine_grid, d=config.model.n, seed=config.seed)
    w_fine = sample_path(config.noise_w, fine_grid, d=config.model.p, seed=config.seed + 1)

    trajs = {}
    for level in sorted(levels):
        stride = finest // level
        idx = np.arange(0, fine_grid.shape[0], stride)
        grid = fine_grid[idx]
        v = SamplePath(t=grid, values=v_fine.values[idx], holder=v_fine.holder)
        w = SamplePath(t=grid, values=w_fine.values[idx], holder=w_fine.holder)
        cfg = replace(config, dt=config.dt / level)
        trajs[level] = (integrate(cfg, v, w, design), stride)

    diffs = []
    lv = sorted(levels)
    for a, b in zip(lv[:-1], lv[1:]):
        ta, _ = trajs[a]
        tb, _ = trajs[b]
        ratio = b // a
        k = min(ta.x.shape[0], (tb.x.shape[0] - 1) // ratio + 1)
        diffs.append(float(np.max(np.abs(ta.x[:k] - tb.x[: (k - 1) * ratio + 1 : ratio]))))
    orders = [np.log2(diffs[i] / diffs[i + 1]) for i in range(len(diffs) - 1)]
    return {"diffs": diffs, "order": float(np.mean(orders)) if orders else float("nan")}


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def _write_table(file, header: str, table: np.ndarray) -> None:
    close = False
    if isinstance(file, (str, bytes)):
        file = open(file, "w")
        close = True
    try:
        file.write(header + "\n")
        np.savetxt(file, table, fmt="%.17g", delimiter=",")
    finally:
        if close:
            file.close()


def trajectory_to_csv(traj: Trajectory, file) -> None:
    """Columns ``t,x1..xn,xhat1..xhatn,u_raw,u_sat,cost`` at full precision."""
    n = traj.x.shape[1]
    m = traj.u_raw.shape[1]
    cols = ["t"]
    cols += [f"x{i + 1}" for i in range(n)]
    cols += [f"xhat{i + 1}" for i in range(n)]
    cols += [f"u_raw{i + 1}" if m > 1 else "u_raw" for i in range(m)]
    cols += [f"u_sat{i + 1}" if m > 1 else "u_sat" for i in range(m)]
    cols.append("cost")
    table = np.column_stack(
        [traj.t, traj.x, traj.xhat, traj.u_raw, traj.u_sat, traj.cost_running]
    )
    _write_table(file, ",".join(cols), table)


def correction_to_csv(traj: Trajectory, file) -> None:
    """The V(t) series alongside a trajectory, when recorded."""
    if traj.v_correction is None:
        raise SimError("trajectory has no correction series")
    n = traj.v_correction.shape[1]
    header = "t," + ",".join(f"v{i + 1}" for i in range(n))
    _write_table(file, header, np.column_stack([traj.t, traj.v_correction]))
