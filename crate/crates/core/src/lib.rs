//! Measure, integrate and model the cost of CPU-only LLM/VLM inference.
//!
//! The crate is organised along the measurement pipeline:
//!
//! * [`sampler`] collects CPU/RAM (and optional power-meter) traces next to a workload,
//! * [`windowing`] finds the idle baseline and per-prompt inference windows,
//! * [`metrics`] integrates usage above baseline into AUC, energy and throughput,
//! * [`clamp`] models resize-and-clamp preprocessing for vision inputs,
//! * [`analysis`] fits token-length and resolution scaling curves and compares runs,
//! * [`orchestrator`] drives prompt and resolution sweeps against a backend,
//! * [`report`] turns run artifacts into tables, JSON and SVG figures.

pub mod analysis;
pub mod clamp;
pub mod error;
pub mod metrics;
pub mod orchestrator;
pub mod report;
pub mod sampler;
pub mod stats;
pub mod synth;
pub mod trace;
pub mod windowing;

pub use analysis::{
    compare_models, detect_knee, fit_linear, ComparisonReport, KneeFit, LinearFit, MatchOn,
    RunPoint,
};
pub use clamp::{
    apply_clamp, effective_pixels, predict_compute, ClampComputeModel, ClampSpec, Resolution,
};
pub use error::{Error, Result};
pub use metrics::{
    auc_above_baseline, energy_for_window, prompt_energy, summarize_energy, throughput,
};
pub use orchestrator::{
    build_prompt_ladder, build_resolution_sweep, mock_backend, run_sweep, BackendMode, BackendSpec,
    MockParams, PromptLadder, ResolutionSweep, RunArtifacts, RunOptions, StepRecord, SweepPlan,
};
pub use report::{compare_runs, emit_summary, AccuracyCurve};
pub use sampler::{start_sampling, stop_sampling, SamplerConfig, SamplerHandle, Scope};
pub use trace::{
    AucMetrics, EnergyMetrics, EnergyTrace, IdleBaseline, InferenceWindow, PowerSample,
    PromptEnergy, ResourceSample, ResourceTrace,
};
pub use windowing::{
    detect_inference_windows, detect_step_windows, estimate_idle_baseline, DetectParams,
};
