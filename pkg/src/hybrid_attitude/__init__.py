"""Velocity-aided attitude observers on SO(3) with intermittent measurements."""

from .analysis import (
    ConvergenceReport,
    ISSStudyResult,
    MetricSeries,
    compute_metrics,
    convergence_report,
    iss_study,
    lyapunov_vr,
    lyapunov_vzeta,
    lyapunov_vzeta_prime,
    plot_comparison,
)
from .config import ScenarioConfig, load_config, parse_config
from .exceptions import (
    AxisNotUnit,
    CertificateMismatch,
    ConfigError,
    EmptyTrace,
    HybridAttitudeError,
    Infeasible,
    InvalidBounds,
    KvOutOfRange,
    NotAntiSymmetric,
    ScheduleOutOfRange,
    TimerNotExpired,
)
from .gains import (
    LyapunovCertificate,
    build_q,
    certify_lmi,
    check_lemma3,
    enumerate_equilibria,
    lambda_pair,
    monodromy_eigs,
    prop3_bound,
    prop3_check,
    spectral_radius_feasible,
    verify_certificate,
)
from .observers import (
    ContinuousObserver,
    EstimatorState,
    GainSet,
    HybridObserver,
    HybridTrace,
    ReducedObserver,
    flow_continuous,
    flow_hybrid,
    flow_reduced,
    innovation_continuous,
    innovation_hybrid,
    jump_hybrid,
    run_hybrid,
)
from .so3 import (
    angle_axis_to_rotation,
    distance_to_identity,
    exp_so3,
    pa,
    psi,
    skew,
    vec,
    weighted_vector_identity_check,
)
from .world import (
    NoiseSpec,
    SamplingSchedule,
    WorldConstants,
    emit_events,
    emit_imu,
    figure_eight,
    generate_schedule,
    propagate_truth,
)

__version__ = "0.1.0"
