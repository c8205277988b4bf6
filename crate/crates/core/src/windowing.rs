//! Idle-baseline estimation and gradient-triggered inference window detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::trace::{IdleBaseline, InferenceWindow, ResourceTrace};

/// Median CPU/RAM over the first `pre_window_s` seconds of the trace.
pub fn estimate_idle_baseline(trace: &ResourceTrace, pre_window_s: f64) -> Result<IdleBaseline> {
    let t0 = trace.span().map(|(a, _)| a).unwrap_or(0.0);
    estimate_idle_baseline_between(trace, t0, t0 + pre_window_s)
}

/// Median CPU/RAM over samples with `start <= t <= end`.
pub fn estimate_idle_baseline_between(
    trace: &ResourceTrace,
    start: f64,
    end: f64,
) -> Result<IdleBaseline> {
    let picked: Vec<_> = trace
        .samples()
        .iter()
        .filter(|s| s.t >= start && s.t <= end)
        .collect();
    if picked.len() < 5 {
        return Err(Error::InsufficientData {
            what: "idle baseline",
            needed: 5,
            got: picked.len(),
        });
    }
    let cpu: Vec<f64> = picked.iter().map(|s| s.cpu_pct).collect();
    let ram: Vec<f64> = picked.iter().map(|s| s.ram_mb).collect();
    Ok(IdleBaseline {
        cpu_pct: stats::median(&cpu).unwrap_or_default(),
        ram_mb: stats::median(&ram).unwrap_or_default(),
        n_samples: picked.len(),
        dispersion: stats::std_dev(&cpu).unwrap_or_default(),
        ram_dispersion: stats::std_dev(&ram).unwrap_or_default(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    /// Moving-average span in samples (odd values centre cleanly).
    pub smooth_span: usize,
    /// Minimum smoothed CPU slope, in %/s, that opens a window.
    pub rise_threshold: f64,
    pub min_duration_s: f64,
    /// Quiet time required before an open window closes.
    pub min_gap_s: f64,
    /// Hysteresis band half-width in baseline standard deviations.
    pub band_sigmas: f64,
    /// Lower bound on the band, in CPU percentage points.
    pub band_floor_pct: f64,
    /// Trim a leading lower-intensity phase (e.g. model load) off each window.
    pub split_load: bool,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            smooth_span: 3,
            rise_threshold: 1.0,
            min_duration_s: 0.6,
            min_gap_s: 1.0,
            band_sigmas: 3.0,
            band_floor_pct: 0.5,
            split_load: false,
        }
    }
}

/// Ratio of the one-sided 95 % upper confidence bound on a standard deviation
/// to its sample estimate from `n` values, so that a band built on a short
/// idle stretch is not too narrow. Chi-square quantile by Wilson-Hilferty.
pub fn dispersion_upper_factor(n: usize) -> f64 {
    if n < 2 {
        return 1.0;
    }
    let k = (n - 1) as f64;
    let c = 2.0 / (9.0 * k);
    let chi2 = k * (1.0 - c - 1.645 * c.sqrt()).powi(3);
    // the approximation collapses for a handful of samples
    if chi2 <= 0.0 {
        return 3.0;
    }
    (k / chi2).sqrt().min(3.0)
}

/// Centred moving average; the span shrinks near the ends.
pub fn moving_average(values: &[f64], span: usize) -> Vec<f64> {
    let half = span.max(1) / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Central difference, one-sided at the ends.
pub fn gradient(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            (values[b] - values[a]) / (times[b] - times[a])
        })
        .collect()
}

/// Detect active inference intervals from the CPU channel.
///
/// A window opens at a sample that sits above the baseline band while the
/// smoothed CPU slope exceeds `rise_threshold`, and closes once CPU has
/// stayed inside the band for `min_gap_s`. Window edges are the last idle
/// sample before the activity and the first idle sample after it, so the
/// trapezoid over the window captures the whole activity area.
pub fn detect_inference_windows(
    trace: &ResourceTrace,
    baseline: &IdleBaseline,
    params: &DetectParams,
) -> Vec<InferenceWindow> {
    let n = trace.len();
    if n < 3 {
        return Vec::new();
    }
    let times = trace.times();
    let cpu = trace.cpu();
    let smooth = moving_average(&cpu, params.smooth_span);
    let slope = gradient(&times, &smooth);
    let sigma = baseline.dispersion * dispersion_upper_factor(baseline.n_samples);
    let band = (params.band_sigmas * sigma).max(params.band_floor_pct);
    let level = baseline.cpu_pct + band;
    let active = |i: usize| cpu[i] > level;
    // isolated noise spikes clear the band raw but not once smoothed
    let opens = |i: usize| active(i) && smooth[i] > level && slope[i] > params.rise_threshold;

    let mut windows = Vec::new();
    let mut floor_idx = 0;
    let mut i = 0;
    while i < n {
        if !opens(i) {
            i += 1;
            continue;
        }
        let mut onset = i;
        while onset > floor_idx && active(onset - 1) {
            onset -= 1;
        }
        let start_idx = onset.saturating_sub(1).max(floor_idx);

        let mut quiet_from: Option<usize> = None;
        let mut j = i + 1;
        while j < n {
            if active(j) {
                quiet_from = None;
            } else {
                let q = *quiet_from.get_or_insert(j);
                if times[j] - times[q] >= params.min_gap_s {
                    break;
                }
            }
            j += 1;
        }
        let end_idx = quiet_from.unwrap_or(n - 1);
        if end_idx > start_idx && times[end_idx] - times[start_idx] >= params.min_duration_s {
            let id = format!("w{}", windows.len());
            let mut window = InferenceWindow {
                start_t: times[start_idx],
                end_t: times[end_idx],
                prompt_id: id,
            };
            if params.split_load {
                if let Some((_, infer)) = split_load_phase(trace, &window) {
                    window = infer;
                }
            }
            windows.push(window);
        }
        floor_idx = end_idx + 1;
        i = j.max(end_idx) + 1;
    }
    windows
}

/// Split a window into a lower-intensity leading phase and the main phase.
///
/// Fits a two-level step to the CPU samples inside the window and accepts
/// the split only when the second level is at least 1.5x the first and both
/// phases hold two or more samples.
pub fn split_load_phase(
    trace: &ResourceTrace,
    window: &InferenceWindow,
) -> Option<(InferenceWindow, InferenceWindow)> {
    let inside: Vec<_> = trace
        .samples()
        .iter()
        .filter(|s| s.t > window.start_t && s.t < window.end_t)
        .collect();
    if inside.len() < 4 {
        return None;
    }
    let cpu: Vec<f64> = inside.iter().map(|s| s.cpu_pct).collect();
    let sse = |v: &[f64]| {
        let m = stats::mean(v).unwrap_or_default();
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    let (best, _) = (2..=cpu.len() - 2)
        .map(|m| (m, sse(&cpu[..m]) + sse(&cpu[m..])))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    let load_level = stats::mean(&cpu[..best])?;
    let infer_level = stats::mean(&cpu[best..])?;
    if infer_level < 1.5 * load_level {
        return None;
    }
    let cut = inside[best - 1].t;
    Some((
        InferenceWindow::new(window.start_t, cut, format!("{}-load", window.prompt_id)).ok()?,
        InferenceWindow::new(cut, window.end_t, window.prompt_id.clone()).ok()?,
    ))
}

/// Prompt boundaries known to the driver of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEvent {
    pub prompt_id: String,
    pub issued_t: f64,
    pub completed_t: f64,
}

/// Match detected windows to issued prompts.
///
/// A window belongs to a prompt when it contains the issue timestamp
/// (allowing `tolerance_s` of detection lag at the window start); failing
/// that, the window with the largest overlap of `[issued_t, completed_t]`
/// is used. Each window is assigned at most once.
pub fn assign_windows(
    windows: &[InferenceWindow],
    events: &[PromptEvent],
    tolerance_s: f64,
) -> Vec<Option<InferenceWindow>> {
    let mut used = vec![false; windows.len()];
    events
        .iter()
        .map(|ev| {
            let contained = windows.iter().enumerate().position(|(k, w)| {
                !used[k] && w.start_t - tolerance_s <= ev.issued_t && ev.issued_t <= w.end_t
            });
            let pick = contained.or_else(|| {
                windows
                    .iter()
                    .enumerate()
                    .filter(|(k, w)| !used[*k] && w.overlap(ev.issued_t, ev.completed_t) > 0.0)
                    .max_by(|a, b| {
                        a.1.overlap(ev.issued_t, ev.completed_t)
                            .total_cmp(&b.1.overlap(ev.issued_t, ev.completed_t))
                    })
                    .map(|(k, _)| k)
            })?;
            used[pick] = true;
            let mut w = windows[pick].clone();
            w.prompt_id = ev.prompt_id.clone();
            Some(w)
        })
        .collect()
}

/// Merge the detected windows that belong to a prompt issued at `issued_t`.
pub fn window_for_step(
    windows: &[InferenceWindow],
    after: f64,
    issued_t: f64,
    completed_t: f64,
    tolerance: f64,
    prompt_id: &str,
) -> Option<InferenceWindow> {
    let picked: Vec<&InferenceWindow> = windows
        .iter()
        .filter(|w| w.start_t >= after - 1e-9)
        .filter(|w| w.overlap(issued_t - tolerance, completed_t + tolerance) > 0.0)
        .collect();
    let start = picked.iter().map(|w| w.start_t).reduce(f64::min)?;
    let end = picked.iter().map(|w| w.end_t).reduce(f64::max)?;
    InferenceWindow::new(start, end, prompt_id).ok()
}

/// Claim the window of one prompt, looking only at samples after `after`
/// (the end of the previous prompt's window) and from `tolerance` before the
/// issue time, so a stray blip in the idle gap cannot bridge two prompts.
pub fn step_window(
    trace: &ResourceTrace,
    baseline: &IdleBaseline,
    params: &DetectParams,
    after: f64,
    event: &PromptEvent,
    tolerance: f64,
) -> Option<InferenceWindow> {
    let from = after.max(event.issued_t - tolerance);
    let windows = detect_inference_windows(&trace.since(from), baseline, params);
    window_for_step(
        &windows,
        after,
        event.issued_t,
        event.completed_t,
        tolerance,
        &event.prompt_id,
    )
}

/// [`step_window`] over a finished run. Each prompt only sees samples up to
/// `tolerance` before the next prompt was issued.
pub fn detect_step_windows(
    trace: &ResourceTrace,
    baseline: &IdleBaseline,
    params: &DetectParams,
    events: &[PromptEvent],
    tolerance: f64,
) -> Vec<Option<InferenceWindow>> {
    let mut after = f64::NEG_INFINITY;
    events
        .iter()
        .enumerate()
        .map(|(i, ev)| {
            let until = events
                .get(i + 1)
                .map_or(f64::INFINITY, |next| next.issued_t - tolerance);
            let w = step_window(&trace.until(until), baseline, params, after, ev, tolerance);
            after = w.as_ref().map_or(after.max(ev.completed_t), |w| w.end_t);
            w
        })
        .collect()
}
