"""Benchmark harness: pendulum comparison scenarios and reporting.

Two named scenarios drive the cart-pendulum with the two controller
families over a common bank of seeds:

* ``fbm035``  - fractional noise with Hurst index 0.35,
* ``stable15`` - heavy-tailed stable jump noise with index 1.5.

Noise scales were calibrated on this plant so the plain LQ loop shows
its characteristic failure (saturation followed by exponential escape)
while the prediction-corrected loop survives the same realisations; the
corrected controller evaluates its correction on the realised driver
path (the pathwise mode).  Angles are simulated as deviations; reports
quote ``180 + theta`` degrees so the upright equilibrium reads 180.

Every aggregate in a report is recomputable from the stored per-seed
trajectory CSVs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, format_config, merge
from .noise import NoiseModel, make_grid, sample_path
from .observer import estimate_second_moments, solve_observer_steady_state
from .pendulum import build_pendulum
from .riccati import solve_care
from .sim import (
    SimConfig,
    StateSpaceModel,
    Trajectory,
    correction_to_csv,
    integrate,
    trajectory_to_csv,
)

__all__ = [
    "SCENARIOS",
    "RunRecord",
    "ExperimentReport",
    "scenario_config",
    "build_state_space",
    "run_comparison",
    "emit_plot_data",
    "saturation_onset_duty",
    "ANGLE_EQUILIBRIUM_DEG",
]

ANGLE_EQUILIBRIUM_DEG = 180.0

#: replications used to estimate observer moments, and the quantile at
#: which heavy-tailed increments are clipped before the moments form
MOMENT_REPLICATIONS = 120
HEAVY_TAIL_QUANTILE = 0.999

SCENARIOS = {
    "fbm035": {
        "run": {"scenario": "fbm035", "controllers": "classical,glq", "seeds": "0:20", "observer": "both"},
        "model": {"q_diag": "1,1,1,1", "r": "1"},
        "noise": {
            "kind": "fbm",
            "hurst": "0.35",
            "sigma": "100.0",
            "w_kind": "fbm",
            "w_hurst": "0.35",
            "w_sigma": "1.0",
        },
        "simulate": {
            "dt": "0.001",
            "horizon": "10.0",
            "saturation": "1000.0",
            "x0": "0,0,0,0",
            "predictor": "pathwise",
        },
    },
    "stable15": {
        "run": {"scenario": "stable15", "controllers": "classical,glq", "seeds": "0:20", "observer": "both"},
        "model": {"q_diag": "1,1,1,1", "r": "1"},
        "noise": {
            "kind": "stable",
            "alpha": "1.5",
            "beta": "0",
            "gamma": "20.0",
            "delta": "0",
            "w_kind": "stable",
            "w_alpha": "1.5",
            "w_beta": "0",
            "w_gamma": "1.0",
            "w_delta": "0",
        },
        "simulate": {
            "dt": "0.001",
            "horizon": "10.0",
            "saturation": "1000.0",
            "x0": "0,0,0,0",
            "predictor": "pathwise",
        },
    },
}


@dataclass(frozen=True)
class RunRecord:
    """Per-(controller, mode, seed) outcome row."""

    scenario: str
    controller: str
    mode: str
    seed: int
    diverged: bool
    t_diverge: float | None
    mean_cost: float
    final_norm: float
    final_angle_deg: float
    sat_duty: float
    max_u_raw: float
    trajectory_file: str


@dataclass
class ExperimentReport:
    """All run records plus per-(controller, mode) aggregates."""

    scenario: str
    records: list
    config: dict
    out_dir: str | None = None
    aggregates: dict = field(default_factory=dict)

    def group(self, controller: str, mode: str):
        return [r for r in self.records if r.controller == controller and r.mode == mode]


def _parse_floats(text: str):
    return [float(part) for part in text.split(",") if part.strip() != ""]


def _parse_seeds(text: str):
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi)))
    return [int(part) for part in text.split(",")]


def _noise_from(cfg: dict, prefix: str = "") -> NoiseModel:
    kind = cfg.get(prefix + "kind", "brownian")
    if kind == "fbm":
        return NoiseModel.fbm(
            hurst=float(cfg[prefix + "hurst"]), sigma=float(cfg.get(prefix + "sigma", "1"))
        )
    if kind == "brownian":
        return NoiseModel.brownian(sigma=float(cfg.get(prefix + "sigma", "1")))
    if kind == "stable":
        return NoiseModel.stable(
            alpha=float(cfg[prefix + "alpha"]),
            beta=float(cfg.get(prefix + "beta", "0")),
            gamma=float(cfg.get(prefix + "gamma", "1")),
            delta=float(cfg.get(prefix + "delta", "0")),
        )
    raise ConfigError(f"unknown noise kind {kind!r}")


def scenario_config(name: str, overrides: dict | None = None) -> dict:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; have {sorted(SCENARIOS)}")
    cfg = {s: dict(kv) for s, kv in SCENARIOS[name].items()}
    if overrides:
        cfg = merge(cfg, overrides)
    return cfg


def build_state_space(q_diag, r) -> StateSpaceModel:
    pm = build_pendulum()
    return StateSpaceModel(A=pm.A, B=pm.B, C=pm.C, Q=np.diag(q_diag), R=[[float(r)]])


def saturation_onset_duty(traj: Trajectory, saturation: float, onset_norm: float = 1e3) -> float:
    """Fraction of steps at the saturation limit after divergence onset.

    Onset is the last time the state norm sat below ``onset_norm`` (the
    stabilised regime lives well under it; the kill threshold is far
    above).  Returns the duty over the whole run when the norm never
    reached the onset level.
    """
    railed = np.abs(traj.u_raw).max(axis=1) >= saturation
    norms = np.linalg.norm(traj.x, axis=1)
    below = np.nonzero(norms <= onset_norm)[0]
    onset = below[-1] if below.size else 0
    tail = railed[onset:]
    return float(tail.mean()) if tail.size else 0.0


def _final_window(traj: Trajectory, grid_size: int):
    """Slice covering the last 20% of the nominal horizon (if reached)."""
    k0 = int(0.8 * grid_size)
    if traj.t.shape[0] <= k0:
        return None
    return slice(k0, traj.t.shape[0])


def _observer_design_for(model, noise_v, noise_w, dt: float):
    grid = make_grid(dt, max(0.5, 2000 * dt))
    v_paths = [
        sample_path(noise_v, grid, d=model.n, seed=10_000_019 + 2 * j)
        for j in range(MOMENT_REPLICATIONS)
    ]
    w_paths = [
        sample_path(noise_w, grid, d=model.p, seed=10_000_019 + 2 * j + 1)
        for j in range(MOMENT_REPLICATIONS)
    ]
    heavy = noise_v.kind == "stable" and noise_v.alpha < 2.0
    quantile = HEAVY_TAIL_QUANTILE if heavy else None
    moments = estimate_second_moments(v_paths, w_paths, truncate_quantile=quantile)
    return solve_observer_steady_state(model.A, model.C, moments), moments


def run_comparison(
    scenario: str,
    controllers=None,
    seeds=None,
    overrides: dict | None = None,
    out_dir=None,
) -> ExperimentReport:
    """Run the scenario grid and aggregate an :class:`ExperimentReport`.

    Writes per-seed trajectory CSVs (plus correction series for the
    corrected controller), a per-run ``runs.csv``, an aggregate
    ``summary.txt`` and a config echo when ``out_dir`` is given.  A
    numeric failure inside one run is recorded as that run's divergence
    and never aborts the batch.
    """
    cfg = scenario_config(scenario, overrides)
    run_cfg = cfg["run"]
    if controllers is None:
        controllers = [c.strip() for c in run_cfg["controllers"].split(",")]
    if seeds is None:
        seeds = _parse_seeds(run_cfg["seeds"])
    observer_setting = run_cfg.get("observer", "both")
    modes = {"both": ["fullstate", "observer"], "fullstate": ["fullstate"], "observer": ["observer"]}[
        observer_setting
    ]

    q_diag = _parse_floats(cfg["model"]["q_diag"])
    model = build_state_space(q_diag, cfg["model"]["r"])
    design = solve_care(model.A, model.B, model.Q, model.R)
    noise_v = _noise_from(cfg["noise"])
    noise_w = _noise_from(cfg["noise"], prefix="w_")
    sim_cfg = cfg["simulate"]
    dt = float(sim_cfg["dt"])
    horizon = float(sim_cfg["horizon"])
    saturation = float(sim_cfg["saturation"])
    x0 = np.array(_parse_floats(sim_cfg["x0"]))
    predictor = sim_cfg.get("predictor", "pathwise")

    observer = None
    if "observer" in modes:
        observer, _ = _observer_design_for(model, noise_v, noise_w, dt)

    grid = make_grid(dt, horizon)
    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        (out_path / "trajectories").mkdir(parents=True, exist_ok=True)
        (out_path / "config_echo.cfg").write_text(format_config(cfg))

    records = []
    for seed in seeds:
        # the process-noise stream is indexed by the seed itself so runs
        # are matched across controllers; measurement noise draws from a
        # disjoint stream
        v = sample_path(noise_v, grid, d=model.n, seed=seed)
        w = sample_path(noise_w, grid, d=model.p, seed=1_000_003 + seed)
        for controller in controllers:
            for mode in modes:
                run = SimConfig(
                    model=model,
                    noise_v=noise_v,
                    noise_w=noise_w,
                    controller=controller,
                    predictor=predictor,
                    observer_enabled=(mode == "observer"),
                    dt=dt,
                    horizon=horizon,
                    saturation=saturation,
                    x0=x0,
                    seed=seed,
                )
                tag = f"{scenario}_{controller}_{mode}_seed{seed:03d}"
                try:
                    traj = integrate(run, v, w, design, observer=observer)
                except Exception:
                    # a numeric failure counts as that run's divergence
                    records.append(
                        RunRecord(
                            scenario=scenario,
                            controller=controller,
                            mode=mode,
                            seed=seed,
                            diverged=True,
                            t_diverge=0.0,
                            mean_cost=float("inf"),
                            final_norm=float("inf"),
                            final_angle_deg=float("inf"),
                            sat_duty=1.0,
                            max_u_raw=float("inf"),
                            trajectory_file="",
                        )
                    )
                    continue
                window = _final_window(traj, grid.shape[0])
                if traj.diverged or window is None:
                    final_norm = float("inf")
                    final_angle = float("inf")
                else:
                    final_norm = float(np.max(np.linalg.norm(traj.x[window], axis=1)))
                    final_angle = float(np.degrees(np.max(np.abs(traj.x[window, 1]))))
                fname = ""
                if out_path is not None:
                    fname = f"trajectories/{tag}.csv"
                    trajectory_to_csv(traj, str(out_path / fname))
                    if traj.v_correction is not None:
                        correction_to_csv(traj, str(out_path / f"trajectories/{tag}_correction.csv"))
                records.append(
                    RunRecord(
                        scenario=scenario,
                        controller=controller,
                        mode=mode,
                        seed=seed,
                        diverged=traj.diverged,
                        t_diverge=traj.t_diverge,
                        mean_cost=float("inf") if traj.diverged else traj.final_cost / horizon,
                        final_norm=final_norm,
                        final_angle_deg=final_angle,
                        sat_duty=saturation_onset_duty(traj, saturation),
                        max_u_raw=float(np.max(np.abs(traj.u_raw))),
                        trajectory_file=fname,
                    )
                )

    report = ExperimentReport(scenario=scenario, records=records, config=cfg, out_dir=str(out_dir) if out_dir else None)
    report.aggregates = _aggregate(report, controllers, modes)
    if out_path is not None:
        _write_runs_csv(report, out_path / "runs.csv")
        _write_summary(report, out_path / "summary.txt")
    return report


def _aggregate(report: ExperimentReport, controllers, modes) -> dict:
    out = {}
    for controller in controllers:
        for mode in modes:
            rows = report.group(controller, mode)
            if not rows:
                continue
            diverged = [r for r in rows if r.diverged]
            alive = [r for r in rows if not r.diverged]
            out[(controller, mode)] = {
                "runs": len(rows),
                "divergence_rate": len(diverged) / len(rows),
                "median_t_diverge": float(np.median([r.t_diverge for r in diverged])) if diverged else float("nan"),
                "median_sat_duty_diverged": float(np.median([r.sat_duty for r in diverged])) if diverged else float("nan"),
                "mean_cost_survivors": float(np.mean([r.mean_cost for r in alive])) if alive else float("nan"),
                "median_final_norm": float(np.median([r.final_norm for r in alive])) if alive else float("nan"),
                "max_final_angle_deg": float(np.max([r.final_angle_deg for r in alive])) if alive else float("nan"),
                "max_u_raw": float(np.max([r.max_u_raw for r in rows])),
            }
    return out


def _write_runs_csv(report: ExperimentReport, path: Path) -> None:
    cols = (
        "scenario,controller,mode,seed,diverged,t_diverge,mean_cost,"
        "final_norm,final_angle_deg,sat_duty,max_u_raw,trajectory_file"
    )
    lines = [cols]
    for r in report.records:
        lines.append(
            ",".join(
                [
                    r.scenario,
                    r.controller,
                    r.mode,
                    str(r.seed),
                    str(int(r.diverged)),
                    "" if r.t_diverge is None else f"{r.t_diverge:.17g}",
                    f"{r.mean_cost:.17g}",
                    f"{r.final_norm:.17g}",
                    f"{r.final_angle_deg:.17g}",
                    f"{r.sat_duty:.17g}",
                    f"{r.max_u_raw:.17g}",
                    r.trajectory_file,
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")


def _write_summary(report: ExperimentReport, path: Path) -> None:
    lines = [f"scenario = {report.scenario}"]
    for (controller, mode), agg in sorted(report.aggregates.items()):
        for key in sorted(agg):
            lines.append(f"{controller}.{mode}.{key} = {agg[key]:.17g}")
    lines.append("")
    lines.append("# config echo")
    lines.append(format_config(report.config))
    path.write_text("\n".join(lines))


# ---------------------------------------------------------------------------
# figure data
# ---------------------------------------------------------------------------

def emit_plot_data(report: ExperimentReport, out_dir) -> list:
    """Per-run figure CSVs (states with the 180-degree angle offset, and
    pre/post-saturation control) plus a hashed manifest.

    Returns the manifest rows ``(filename, sha256)``.
    """
    if report.out_dir is None:
        raise ConfigError("report was produced without an output directory")
    src = Path(report.out_dir)
    dst = Path(out_dir)
    dst.mkdir(parents=True, exist_ok=True)
    manifest = []
    for rec in report.records:
        if not rec.trajectory_file:
            continue
        data = np.genfromtxt(src / rec.trajectory_file, delimiter=",", names=True)
        tag = f"{rec.scenario}_{rec.controller}_{rec.mode}_seed{rec.seed:03d}"
        t = np.atleast_1d(data["t"])
        states = np.column_stack(
            [
                t,
                np.atleast_1d(data["x1"]),
                ANGLE_EQUILIBRIUM_DEG + np.degrees(np.atleast_1d(data["x2"])),
                np.atleast_1d(data["x3"]),
                np.degrees(np.atleast_1d(data["x4"])),
            ]
        )
        state_file = f"{tag}_states.csv"
        _save_figure_csv(dst / state_file, "t,cart_m,angle_deg,cart_rate,angle_rate_deg", states)
        control = np.column_stack([t, np.atleast_1d(data["u_raw"]), np.atleast_1d(data["u_sat"])])
        ctrl_file = f"{tag}_control.csv"
        _save_figure_csv(dst / ctrl_file, "t,u_raw,u_sat", control)
        manifest.append(state_file)
        manifest.append(ctrl_file)

    rows = [(name, _sha256(dst / name)) for name in manifest]
    lines = ["file,sha256"] + [f"{name},{digest}" for name, digest in rows]
    lines.append("# generating config")
    lines.append(format_config(report.config))
    (dst / "manifest.csv").write_text("\n".join(lines))
    return rows


def _save_figure_csv(path: Path, header: str, table: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, table, fmt="%.17g", delimiter=",")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()
