//! Metrics for count-conditioned generation.
//!
//! Three layers: raw metric kernels over prediction/target matrices
//! ([`metrics`]), distributional distance between feature sets
//! ([`frechet`]), and the orchestration that turns a generator plus an
//! independent judge into a serialized [`report::MetricsReport`].

pub mod frechet;
pub mod metrics;
pub mod report;

pub use frechet::{gaussian_frechet_distance, mini_fid, FeatureStats};
pub use metrics::{
    count_accuracy, count_histograms, count_mse, round_count, CountAccuracy, CountHistogram,
};
pub use report::{evaluate_generation, param_hash, GenerationEvalSpec, MetricsReport};
