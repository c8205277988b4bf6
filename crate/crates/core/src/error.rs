use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the profiling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("window [{start}, {end}] lies outside the trace range [{trace_start}, {trace_end}]")]
    WindowOutOfRange {
        start: f64,
        end: f64,
        trace_start: f64,
        trace_end: f64,
    },

    #[error("insufficient data for {what}: need at least {needed}, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("energy trace does not overlap window [{start}, {end}]")]
    NoOverlap { start: f64, end: f64 },

    #[error("zero-length window at t = {0}")]
    ZeroLengthWindow(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("model has not been fitted")]
    NotFitted,

    #[error("input key mismatch: {0}")]
    Mismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("platform counters unavailable: {0}")]
    PlatformCapability(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("backend failure: {message}{}", stderr_suffix(.stderr))]
    Backend { message: String, stderr: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

fn stderr_suffix(stderr: &str) -> String {
    let trimmed = stderr.trim();
    if trimmed.is_empty() {
        String::new()
    } else {
        format!("\n--- backend stderr ---\n{trimmed}")
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
