//! Synthetic traces with known ground truth, for tests and benchmarks.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::trace::{ResourceSample, ResourceTrace};

/// A rectangular burst of CPU activity active on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub start: f64,
    pub end: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseTraceSpec {
    pub duration_s: f64,
    pub rate_hz: f64,
    pub baseline_cpu: f64,
    pub noise_sd: f64,
    pub ram_mb: f64,
    pub pulses: Vec<Pulse>,
    pub seed: u64,
}

impl PulseTraceSpec {
    /// Noise-free CPU value at `t`.
    pub fn level(&self, t: f64) -> f64 {
        self.baseline_cpu
            + self
                .pulses
                .iter()
                .filter(|p| p.start <= t && t < p.end)
                .map(|p| p.amplitude)
                .sum::<f64>()
    }

    pub fn active_time(&self) -> f64 {
        self.pulses.iter().map(|p| p.end - p.start).sum()
    }

    pub fn generate(&self) -> ResourceTrace {
        let mut rng = StdRng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise_sd.max(0.0)).expect("finite noise sd");
        let dt = 1.0 / self.rate_hz;
        let n = (self.duration_s * self.rate_hz).floor() as usize;
        let samples = (0..=n)
            .map(|k| {
                let t = k as f64 * dt;
                let cpu = (self.level(t) + noise.sample(&mut rng)).clamp(0.0, 100.0);
                let ram = self.ram_mb + 4.0 * (self.level(t) - self.baseline_cpu);
                ResourceSample::new(t, cpu, ram.max(0.0))
            })
            .collect();
        ResourceTrace::new(
            format!("synth-{}", self.seed),
            "synthetic",
            self.rate_hz,
            samples,
        )
        .expect("generator produces valid traces")
    }
}

/// Random pulse layout: `count` pulses of 3–12 s separated by 4–10 s of idle.
pub fn random_pulse_spec(seed: u64, count: usize, amplitude: f64, noise_sd: f64) -> PulseTraceSpec {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut t = rng.random_range(4.0..8.0);
    let mut pulses = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.random_range(3.0..12.0);
        pulses.push(Pulse {
            start: t,
            end: t + len,
            amplitude,
        });
        t += len + rng.random_range(4.0..10.0);
    }
    PulseTraceSpec {
        duration_s: t + 4.0,
        rate_hz: 5.0,
        baseline_cpu: rng.random_range(2.0..10.0),
        noise_sd,
        ram_mb: 2048.0,
        pulses,
        seed,
    }
}

/// Positive sum of slow sinusoids.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothSignal {
    pub offset: f64,
    /// `(amplitude, frequency_hz, phase)`.
    pub components: Vec<(f64, f64, f64)>,
}

impl SmoothSignal {
    /// Components up to `max_freq_hz`, offset so the signal stays in (0, 100).
    pub fn random(seed: u64, max_freq_hz: f64) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let k = rng.random_range(1..=4);
        let components: Vec<_> = (0..k)
            .map(|_| {
                (
                    rng.random_range(1.0..8.0),
                    rng.random_range(0.02..max_freq_hz),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let swing: f64 = components.iter().map(|c| c.0).sum();
        Self {
            offset: swing + rng.random_range(5.0..40.0),
            components,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.offset
            + self
                .components
                .iter()
                .map(|(a, f, p)| a * (std::f64::consts::TAU * f * t + p).sin())
                .sum::<f64>()
    }

    pub fn sample(&self, rate_hz: f64, duration_s: f64) -> ResourceTrace {
        let n = (duration_s * rate_hz).round() as usize;
        let samples = (0..=n)
            .map(|k| {
                let t = k as f64 / rate_hz;
                let v = self.eval(t).clamp(0.0, 100.0);
                ResourceSample::new(t, v, v * 10.0)
            })
            .collect();
        ResourceTrace::new("smooth", "synthetic", rate_hz, samples).expect("valid smooth trace")
    }
}
