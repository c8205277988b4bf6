//! Scaling-law fits and compressed-vs-base comparisons.

mod compare;
mod knee;
mod linear;

pub use compare::{
    compare_models, reduction_pct, ComparisonReport, InputComparison, MatchOn, RunPoint,
};
pub use knee::{detect_knee, grid_position, KneeConfidence, KneeFit};
pub use linear::{fit_linear, fit_linear_with, FitMethod, LinearFit};
