"""Distance estimation over a diffusive molecular channel: channel model, CRLB,
estimators, particle simulation and a Monte Carlo harness."""

__version__ = "0.1.0"

from .channel import (
    Correction,
    DistanceSolutionSet,
    EnvironmentParams,
    expected_count,
    invert_count,
    peak_count,
    peak_time,
    system1,
    system2,
)
from .crlb import (
    LikelihoodConstants,
    ObservationSeries,
    UnboundedCRLBError,
    crlb,
    fisher_information,
    log_likelihood,
    score,
)
from .estimators import (
    EstimateRecord,
    MlSearchSpec,
    Protocol,
    envd_estimate,
    ml_estimate,
    moving_max,
    moving_min,
    rtt_estimate,
    sat_estimate,
)
from .particle_sim import SimConfig, SimMode, sample_poisson_series, simulate_realization
from .harness import (
    EnvdConfig,
    ExperimentConfig,
    MlConfig,
    RttConfig,
    SatConfig,
    Sweep,
    SweepSummary,
    crlb_curve,
    run_experiment,
)
