//! Anomaly maps, evaluation metrics and the end-to-end scorer.

mod eval;
mod map;
mod metrics;
mod pipeline;
mod pro;

pub use eval::{evaluate, report, score_samples, EvalOptions, EvalReport, ScoredSample, Scorer};
pub use map::{anomaly_map, gaussian_blur, gaussian_taps, AnomalyMap, MapConfig};
pub use metrics::{auroc, average_precision};
pub use pipeline::Pipeline;
pub use pro::{
    components, integrate_pro, pro, pro_curve, threshold_grid, ProPoint, DEFAULT_FPR_LIMIT, DEFAULT_THRESHOLDS,
};
