//! Trapezoidal integration of resource and power signals over inference windows.

use crate::error::{Error, Result};
use crate::trace::{
    AucMetrics, EnergyMetrics, EnergyTrace, IdleBaseline, InferenceWindow, PromptEnergy,
    ResourceTrace,
};

const EDGE_EPS: f64 = 1e-9;

/// Trapezoid rule over `(t, y)` points in ascending `t`.
pub fn trapezoid<I>(points: I) -> f64
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut iter = points.into_iter();
    let Some((mut t0, mut y0)) = iter.next() else {
        return 0.0;
    };
    let mut area = 0.0;
    for (t1, y1) in iter {
        area += 0.5 * (y0 + y1) * (t1 - t0);
        t0 = t1;
        y0 = y1;
    }
    area
}

fn lerp(t0: f64, y0: f64, t1: f64, y1: f64, t: f64) -> f64 {
    if t1 == t0 {
        return y0;
    }
    y0 + (y1 - y0) * (t - t0) / (t1 - t0)
}

/// Integrate `values` (sampled at `times`) over `[start, end]`, interpolating
/// linearly when an edge falls between samples. Both edges must lie within
/// the sampled range.
fn integrate_between(times: &[f64], values: &[f64], start: f64, end: f64) -> f64 {
    let at = |t: f64| -> f64 {
        let idx = times.partition_point(|&x| x < t);
        if idx == 0 {
            values[0]
        } else if idx >= times.len() {
            values[times.len() - 1]
        } else if times[idx] == t {
            values[idx]
        } else {
            lerp(times[idx - 1], values[idx - 1], times[idx], values[idx], t)
        }
    };
    let first = times.partition_point(|&x| x <= start);
    let last = times.partition_point(|&x| x < end);
    let interior = (first..last).map(|i| (times[i], values[i]));
    trapezoid(
        std::iter::once((start, at(start)))
            .chain(interior)
            .chain(std::iter::once((end, at(end)))),
    )
}

/// CPU (%·s) and RAM (MB·s) area above the idle baseline over `window`.
///
/// Excursions below the baseline are clipped to zero sample-by-sample before
/// integration, so idle noise never cancels real work.
pub fn auc_above_baseline(
    trace: &ResourceTrace,
    window: &InferenceWindow,
    baseline: &IdleBaseline,
) -> Result<(f64, f64)> {
    let (t0, t1) = trace.span().ok_or(Error::InsufficientData {
        what: "AUC window",
        needed: 2,
        got: 0,
    })?;
    if window.start_t < t0 - EDGE_EPS
        || window.end_t > t1 + EDGE_EPS
        || window.start_t >= window.end_t
    {
        return Err(Error::WindowOutOfRange {
            start: window.start_t,
            end: window.end_t,
            trace_start: t0,
            trace_end: t1,
        });
    }
    let start = window.start_t.max(t0);
    let end = window.end_t.min(t1);
    let inside = trace
        .samples()
        .iter()
        .filter(|s| s.t >= start - EDGE_EPS && s.t <= end + EDGE_EPS)
        .count();
    if inside < 2 {
        return Err(Error::InsufficientData {
            what: "AUC window",
            needed: 2,
            got: inside,
        });
    }
    let times = trace.times();
    let cpu: Vec<f64> = trace
        .samples()
        .iter()
        .map(|s| (s.cpu_pct - baseline.cpu_pct).max(0.0))
        .collect();
    let ram: Vec<f64> = trace
        .samples()
        .iter()
        .map(|s| (s.ram_mb - baseline.ram_mb).max(0.0))
        .collect();
    Ok((
        integrate_between(&times, &cpu, start, end),
        integrate_between(&times, &ram, start, end),
    ))
}

/// Integrated watt-hours over the part of `window` covered by `energy`.
pub fn energy_for_window(energy: &EnergyTrace, window: &InferenceWindow) -> Result<f64> {
    Ok(prompt_energy(energy, window)?.wh_integrated)
}

/// Full per-prompt energy figures (integral, peak, mean, max-power bound).
pub fn prompt_energy(energy: &EnergyTrace, window: &InferenceWindow) -> Result<PromptEnergy> {
    let no_overlap = || Error::NoOverlap {
        start: window.start_t,
        end: window.end_t,
    };
    let (e0, e1) = energy.span().ok_or_else(no_overlap)?;
    let start = window.start_t.max(e0);
    let end = window.end_t.min(e1);
    if end <= start {
        return Err(no_overlap());
    }
    let times: Vec<f64> = energy.samples().iter().map(|s| s.t).collect();
    let watts: Vec<f64> = energy.samples().iter().map(|s| s.watts).collect();
    let joules = integrate_between(&times, &watts, start, end);

    let edge = |t: f64| {
        let idx = times.partition_point(|&x| x < t).clamp(1, times.len() - 1);
        lerp(times[idx - 1], watts[idx - 1], times[idx], watts[idx], t)
    };
    let max_power_w = energy
        .samples()
        .iter()
        .filter(|s| s.t > start && s.t < end)
        .map(|s| s.watts)
        .fold(edge(start).max(edge(end)), f64::max);
    let duration_s = window.duration();
    Ok(PromptEnergy {
        wh_integrated: joules / 3600.0,
        wh_max_bound: max_power_w * duration_s / 3600.0,
        max_power_w,
        mean_power_w: joules / (end - start),
        duration_s,
    })
}

/// Aggregate per-prompt energy into run-level figures.
///
/// The headline per-prompt value is run peak power times mean prompt
/// duration; the per-run value sums the same peak-power bound over every
/// prompt, so `wh_per_run = prompts * wh_per_prompt`.
pub fn summarize_energy(prompts: &[PromptEnergy]) -> Option<EnergyMetrics> {
    if prompts.is_empty() {
        return None;
    }
    let n = prompts.len() as f64;
    let max_power_w = prompts.iter().map(|p| p.max_power_w).fold(0.0, f64::max);
    let total_duration: f64 = prompts.iter().map(|p| p.duration_s).sum();
    let max_prompt_duration_s = prompts.iter().map(|p| p.duration_s).fold(0.0, f64::max);
    let integrated: f64 = prompts.iter().map(|p| p.wh_integrated).sum();
    let mean_prompt_duration_s = total_duration / n;
    Some(EnergyMetrics {
        wh_per_prompt: max_power_w * mean_prompt_duration_s / 3600.0,
        wh_per_run: prompts
            .iter()
            .map(|p| max_power_w * p.duration_s / 3600.0)
            .sum(),
        wh_per_prompt_integrated: integrated / n,
        wh_per_run_integrated: integrated,
        max_power_w,
        mean_prompt_duration_s,
        max_prompt_duration_s,
        prompts: prompts.len(),
    })
}

/// Output tokens per second of window time.
pub fn throughput(tokens_out: u64, window: &InferenceWindow) -> Result<f64> {
    let duration = window.duration();
    if !(duration > 0.0) {
        return Err(Error::ZeroLengthWindow(window.start_t));
    }
    Ok(tokens_out as f64 / duration)
}

/// AUC, duration and throughput for one window.
pub fn window_metrics(
    trace: &ResourceTrace,
    window: &InferenceWindow,
    baseline: &IdleBaseline,
    tokens_in: u64,
    tokens_out: u64,
) -> Result<AucMetrics> {
    let (cpu_auc, ram_auc) = auc_above_baseline(trace, window, baseline)?;
    Ok(AucMetrics {
        cpu_auc,
        ram_auc,
        duration_s: window.duration(),
        tokens_in,
        tokens_out,
        throughput_tps: throughput(tokens_out, window)?,
    })
}
