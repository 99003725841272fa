//! Reconstruction-quality measures, the composite score and diagnostics.

pub mod metrics;
pub mod predict;
pub mod report;

pub use metrics::{
    find_peaks, hellinger, isi_distance, prominence, score, score_weights, spectral_distance,
    wasserstein_1d, Measures, SpectralDistance,
};
pub use predict::{
    generate_long, kl_usage, prediction_error, simulate_observations, KlOptions, PredictionOptions,
    StateEstimator,
};
pub use report::{evaluate, state_space_distance, EvalOptions, EvaluationReport};
