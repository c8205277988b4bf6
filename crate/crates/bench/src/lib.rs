//! Shared fixtures for the criterion benchmarks.

use edgeprof_core::synth::{random_pulse_spec, SmoothSignal};
use edgeprof_core::ResourceTrace;

/// A ten-pulse 5 Hz trace at 10:1 signal-to-noise.
pub fn pulse_trace(seed: u64) -> ResourceTrace {
    random_pulse_spec(seed, 10, 60.0, 6.0).generate()
}

/// A ten-minute smooth 5 Hz trace.
pub fn smooth_trace(seed: u64) -> ResourceTrace {
    SmoothSignal::random(seed, 0.3).sample(5.0, 600.0)
}

/// Flat-then-drop resolution curve with `n` grid points.
pub fn knee_points(n: usize, knee: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let x = 50_000.0 + i as f64 * 1_500_000.0 / n as f64;
            (
                x,
                if x >= knee {
                    1000.0
                } else {
                    1000.0 - 1e-3 * (knee - x)
                },
            )
        })
        .collect()
}
