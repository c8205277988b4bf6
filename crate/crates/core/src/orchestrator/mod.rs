//! Controlled input sweeps driven against an inference backend.

mod backend;
mod ladder;
mod resolution;
mod run;

pub use backend::{
    mock_backend, parse_usage, Backend, BackendMode, BackendSpec, Completion, InferenceRequest,
    MockParams,
};
pub use ladder::{build_prompt_ladder, filler_segments, whitespace_tokens, PromptLadder};
pub use resolution::{
    build_resolution_sweep, source_resolution, sweep_resolutions, write_synthetic_source,
    ResolutionSweep,
};
pub use run::{
    run_sweep, RunArtifacts, RunMetadata, RunOptions, StepRecord, SweepKind, SweepPlan,
    ARTIFACT_ROOT_ENV,
};
