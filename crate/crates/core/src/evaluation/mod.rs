//! Metrics, the motion feature extractor and the denoising-posterior oracle.

mod extractor;
mod metrics;
pub mod posterior;
mod report;
pub mod toy;

pub use extractor::{accuracy, argmax_rows, train_feature_extractor, ExtractorConfig, FeatureExtractor, FEATURE_DIM};
pub use metrics::{diversity, fid, multimodality, physical_metrics, PhysicalMetrics, DEFAULT_PAIRS};
pub use posterior::{GRID_POINTS, gaussian_posterior, gaussianity_score, gaussianity_sweep, grid_true_posterior, sweep_csv, GridPosterior, Prior, SweepRow};
pub use report::{evaluate, evaluate_params, generate, sha256_hex, EvalConfig, Generated, MetricsReport};
pub use toy::{evaluate_toy, train_toy, ToyConfig, ToyReport};
