"""Linear-quadratic control under rough, non-semimartingale noise."""

from .noise import (
    NoiseError,
    NoiseModel,
    SamplePath,
    empirical_char_fn,
    fbm_covariance,
    make_grid,
    sample_fbm,
    sample_path,
    sample_stable,
    stable_char_fn,
)
from .lift import (
    DegeneratePathError,
    LiftError,
    OffGridError,
    RoughPath,
    chen_defect,
    holder_estimate,
    lift_piecewise_linear,
    p_variation,
    reconstruct,
    rough_integral_admissible,
)
from .riccati import (
    ControlDesign,
    RiccatiError,
    care_residual,
    fundamental_solution,
    solve_care,
    spectral_abscissa,
)
from .pendulum import PendulumModel, build_pendulum
from .control import (
    CorrectionTerm,
    Predictor,
    PredictorError,
    completion_of_squares_gap,
    correction_term,
    default_horizon,
    glq_control_law,
    pathwise_correction,
    pathwise_cost,
    predict_increments,
)
from .observer import (
    NoiseSecondMoments,
    ObserverDesign,
    ObserverError,
    error_dynamics_step,
    estimate_second_moments,
    gain_stationarity_check,
    observer_gain,
    solve_observer_steady_state,
)
from .sim import (
    SimConfig,
    SimError,
    StateSpaceModel,
    Trajectory,
    average_cost,
    continuity_probe,
    integrate,
    refinement_convergence,
)
from .bench import SCENARIOS, ExperimentReport, emit_plot_data, run_comparison

__version__ = "0.1.0"
