"""Multi-cell massive MIMO spectral-efficiency simulator for spatially
correlated Rician fading with MR combining/precoding.

Closed-form effective SINRs for MMSE, element-wise MMSE, LS and mean-only
channel estimation, cross-validated by an independent Monte Carlo engine.
"""

from .asymptotics import (
    AsymptoticVerdict,
    asymptotic_sinr,
    assumption_diagnostics,
    g1,
    is_asymptotically_orthogonal,
    orthogonality_metric,
)
from .channel import (
    ChannelStats,
    DropChannelStats,
    build_channel_stats,
    large_scale_gain,
    local_scattering_covariance,
    los_probability,
    rician_split,
    steering_vector,
    strip_los,
)
from .config import (
    ConfigError,
    DegenerateGeometryError,
    ExperimentConfig,
    IllPosedModelError,
)
from .estimators import (
    EstimatorKind,
    EstimatorStats,
    PilotObservation,
    estimator_stats,
    ewmmse_estimate,
    ewmmse_stats,
    ls_estimate,
    ls_stats,
    mmse_estimate,
    mmse_stats,
    mo_estimate,
    mo_stats,
    psi_matrix,
)
from .geometry import (
    NetworkRealization,
    assign_pilots,
    drop_network,
    ul_power_control,
    wraparound_displacement,
    wraparound_distance,
)
from .monte_carlo import (
    McEstimate,
    mc_sinr,
    quad_moment_correlated,
    quad_moment_independent,
    sample_channel,
    synthesize_pilot_observation,
)
from .spectral_efficiency import (
    DropEvaluator,
    SeReport,
    SinrBreakdown,
    dl_sinr_closed_form,
    se_from_sinr,
    ul_sinr_closed_form,
)

__version__ = "0.1.0"

__all__ = [
    "AsymptoticVerdict",
    "ChannelStats",
    "ConfigError",
    "DegenerateGeometryError",
    "DropChannelStats",
    "DropEvaluator",
    "EstimatorKind",
    "EstimatorStats",
    "ExperimentConfig",
    "IllPosedModelError",
    "McEstimate",
    "NetworkRealization",
    "PilotObservation",
    "SeReport",
    "SinrBreakdown",
    "assign_pilots",
    "asymptotic_sinr",
    "assumption_diagnostics",
    "build_channel_stats",
    "dl_sinr_closed_form",
    "drop_network",
    "estimator_stats",
    "ewmmse_estimate",
    "ewmmse_stats",
    "g1",
    "is_asymptotically_orthogonal",
    "large_scale_gain",
    "local_scattering_covariance",
    "los_probability",
    "ls_estimate",
    "ls_stats",
    "mc_sinr",
    "mmse_estimate",
    "mmse_stats",
    "mo_estimate",
    "mo_stats",
    "orthogonality_metric",
    "psi_matrix",
    "quad_moment_correlated",
    "quad_moment_independent",
    "rician_split",
    "sample_channel",
    "se_from_sinr",
    "steering_vector",
    "strip_los",
    "synthesize_pilot_observation",
    "ul_power_control",
    "ul_sinr_closed_form",
    "wraparound_displacement",
    "wraparound_distance",
]
