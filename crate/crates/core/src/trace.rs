//! Trace data model and its line-oriented text format.
//!
//! A resource trace file is a single header line followed by one
//! `t cpu_pct ram_mb` record per line; an energy trace file carries
//! `t watts` records. Fields are whitespace separated, decimal-point
//! floats, in fixed order:
//!
//! ```text
//! # edgeprof resource-trace run_id=m2-gilda-01 nominal_rate_hz=5 device=MacBook Pro M2
//! 0.2 12.5 5321.7
//! 0.4 13.0 5322.1
//! ```
//!
//! `device` is always the last header field so that it may contain spaces.
//! Blank lines and other `#` lines are ignored, which makes a bare power
//! meter log (`t_seconds watts` per line, no header) a valid energy trace.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// One CPU/RAM reading. `cpu_pct` is a share of total machine capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceSample {
    pub t: f64,
    pub cpu_pct: f64,
    pub ram_mb: f64,
}

impl ResourceSample {
    pub fn new(t: f64, cpu_pct: f64, ram_mb: f64) -> Self {
        Self { t, cpu_pct, ram_mb }
    }
}

/// Timestamped CPU/RAM samples for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceTrace {
    pub run_id: String,
    pub device: String,
    pub nominal_rate_hz: f64,
    samples: Vec<ResourceSample>,
}

impl ResourceTrace {
    /// Validates ordering, value ranges and sampling jitter.
    pub fn new(
        run_id: impl Into<String>,
        device: impl Into<String>,
        nominal_rate_hz: f64,
        samples: Vec<ResourceSample>,
    ) -> Result<Self> {
        let run_id = run_id.into();
        validate_header(&run_id, nominal_rate_hz)?;
        for (i, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.t >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "sample {i}: invalid timestamp {}",
                    s.t
                )));
            }
            if !(0.0..=100.0).contains(&s.cpu_pct) {
                return Err(Error::InvalidInput(format!(
                    "sample {i}: cpu_pct {} outside [0, 100]",
                    s.cpu_pct
                )));
            }
            if !(s.ram_mb.is_finite() && s.ram_mb >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "sample {i}: invalid ram_mb {}",
                    s.ram_mb
                )));
            }
        }
        check_increasing(samples.iter().map(|s| s.t))?;
        check_jitter(samples.iter().map(|s| s.t), nominal_rate_hz)?;
        Ok(Self {
            run_id,
            device: device.into(),
            nominal_rate_hz,
            samples,
        })
    }

    pub fn samples(&self) -> &[ResourceSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(first t, last t)`, or `None` for an empty trace.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t, self.samples.last()?.t))
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.nominal_rate_hz
    }

    /// The samples at or after `t0`, under the same header.
    pub fn since(&self, t0: f64) -> Self {
        let from = self.samples.partition_point(|s| s.t < t0);
        self.with_samples(self.samples[from..].to_vec())
    }

    /// The samples at or before `t1`, under the same header.
    pub fn until(&self, t1: f64) -> Self {
        let to = self.samples.partition_point(|s| s.t <= t1);
        self.with_samples(self.samples[..to].to_vec())
    }

    fn with_samples(&self, samples: Vec<ResourceSample>) -> Self {
        Self {
            run_id: self.run_id.clone(),
            device: self.device.clone(),
            nominal_rate_hz: self.nominal_rate_hz,
            samples,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn cpu(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.cpu_pct).collect()
    }

    pub fn ram(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.ram_mb).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# edgeprof resource-trace run_id={} nominal_rate_hz={} device={}",
            self.run_id, self.nominal_rate_hz, self.device
        )?;
        for s in &self.samples {
            writeln!(w, "{} {} {}", s.t, s.cpu_pct, s.ram_mb)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R, origin: &Path) -> Result<Self> {
        let parsed = parse_records::<3, _>(reader, origin)?;
        let header = parsed.header.unwrap_or_default();
        let samples = parsed
            .records
            .into_iter()
            .map(|[t, cpu_pct, ram_mb]| ResourceSample { t, cpu_pct, ram_mb })
            .collect();
        Self::new(
            header.run_id.unwrap_or_else(|| "imported".into()),
            header.device.unwrap_or_default(),
            header.nominal_rate_hz.unwrap_or(5.0),
            samples,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_from(BufReader::new(File::open(path)?), path)
    }
}

/// Idle resting level of the device, subtracted before integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdleBaseline {
    pub cpu_pct: f64,
    pub ram_mb: f64,
    pub n_samples: usize,
    /// Standard deviation of CPU over the estimation window.
    pub dispersion: f64,
    pub ram_dispersion: f64,
}

impl IdleBaseline {
    /// A baseline with zero dispersion, mostly useful for synthetic data.
    pub fn fixed(cpu_pct: f64, ram_mb: f64) -> Self {
        Self {
            cpu_pct,
            ram_mb,
            n_samples: 0,
            dispersion: 0.0,
            ram_dispersion: 0.0,
        }
    }
}

/// Active inference interval of one prompt or resolution step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceWindow {
    pub start_t: f64,
    pub end_t: f64,
    pub prompt_id: String,
}

impl InferenceWindow {
    pub fn new(start_t: f64, end_t: f64, prompt_id: impl Into<String>) -> Result<Self> {
        if !(start_t.is_finite() && end_t.is_finite()) || start_t >= end_t {
            return Err(Error::InvalidInput(format!(
                "window start {start_t} must precede end {end_t}"
            )));
        }
        Ok(Self {
            start_t,
            end_t,
            prompt_id: prompt_id.into(),
        })
    }

    pub fn duration(&self) -> f64 {
        self.end_t - self.start_t
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start_t <= t && t <= self.end_t
    }

    pub fn overlap(&self, start: f64, end: f64) -> f64 {
        (self.end_t.min(end) - self.start_t.max(start)).max(0.0)
    }

    pub fn overlaps(&self, other: &InferenceWindow) -> bool {
        self.start_t < other.end_t && other.start_t < self.end_t
    }
}

impl fmt::Display for InferenceWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{:.3}, {:.3}]",
            self.prompt_id, self.start_t, self.end_t
        )
    }
}

/// Integrated per-prompt cost figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucMetrics {
    /// %·s above the idle baseline.
    pub cpu_auc: f64,
    /// MB·s above the idle baseline.
    pub ram_auc: f64,
    pub duration_s: f64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub throughput_tps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub t: f64,
    pub watts: f64,
}

/// Power-meter readings sharing the resource trace's run-start epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub run_id: String,
    pub device: String,
    pub nominal_rate_hz: f64,
    samples: Vec<PowerSample>,
}

impl EnergyTrace {
    pub fn new(
        run_id: impl Into<String>,
        device: impl Into<String>,
        nominal_rate_hz: f64,
        samples: Vec<PowerSample>,
    ) -> Result<Self> {
        let run_id = run_id.into();
        validate_header(&run_id, nominal_rate_hz)?;
        for (i, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.watts.is_finite() && s.watts >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "power sample {i}: invalid reading ({}, {})",
                    s.t, s.watts
                )));
            }
        }
        check_increasing(samples.iter().map(|s| s.t))?;
        Ok(Self {
            run_id,
            device: device.into(),
            nominal_rate_hz,
            samples,
        })
    }

    pub fn samples(&self) -> &[PowerSample] {
        &self.samples
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t, self.samples.last()?.t))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# edgeprof energy-trace run_id={} nominal_rate_hz={} device={}",
            self.run_id, self.nominal_rate_hz, self.device
        )?;
        for s in &self.samples {
            writeln!(w, "{} {}", s.t, s.watts)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R, origin: &Path) -> Result<Self> {
        let parsed = parse_records::<2, _>(reader, origin)?;
        let header = parsed.header.unwrap_or_default();
        let samples = parsed
            .records
            .into_iter()
            .map(|[t, watts]| PowerSample { t, watts })
            .collect();
        Self::new(
            header.run_id.unwrap_or_else(|| "meter".into()),
            header.device.unwrap_or_default(),
            header.nominal_rate_hz.unwrap_or(1.0),
            samples,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_from(BufReader::new(File::open(path)?), path)
    }
}

/// Energy for one prompt window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptEnergy {
    /// Trapezoidal integral of power over the window.
    pub wh_integrated: f64,
    /// Peak power in the window times window duration.
    pub wh_max_bound: f64,
    pub max_power_w: f64,
    pub mean_power_w: f64,
    pub duration_s: f64,
}

/// Run-level energy aggregate. Per-run figures are sums of per-prompt figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyMetrics {
    /// Run max power times mean prompt duration.
    pub wh_per_prompt: f64,
    /// Sum of per-prompt max-power bounds.
    pub wh_per_run: f64,
    pub wh_per_prompt_integrated: f64,
    pub wh_per_run_integrated: f64,
    pub max_power_w: f64,
    pub mean_prompt_duration_s: f64,
    pub max_prompt_duration_s: f64,
    pub prompts: usize,
}

#[derive(Default)]
struct Header {
    run_id: Option<String>,
    device: Option<String>,
    nominal_rate_hz: Option<f64>,
}

struct Parsed<const N: usize> {
    header: Option<Header>,
    records: Vec<[f64; N]>,
}

fn parse_records<const N: usize, R: BufRead>(reader: R, origin: &Path) -> Result<Parsed<N>> {
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        message,
    };
    let mut header = None;
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if header.is_none() && rest.trim_start().starts_with("edgeprof ") {
                header = Some(parse_header(rest).map_err(|m| err(lineno, m))?);
            }
            continue;
        }
        let mut out = [0.0; N];
        let mut fields = trimmed.split_whitespace();
        for slot in out.iter_mut() {
            let field = fields
                .next()
                .ok_or_else(|| err(lineno, format!("expected {N} fields")))?;
            *slot = field
                .parse()
                .map_err(|_| err(lineno, format!("invalid number {field:?}")))?;
        }
        if fields.next().is_some() {
            return Err(err(lineno, format!("expected {N} fields")));
        }
        records.push(out);
    }
    Ok(Parsed { header, records })
}

fn parse_header(rest: &str) -> std::result::Result<Header, String> {
    let mut header = Header::default();
    let body = match rest.find("device=") {
        Some(pos) => {
            header.device = Some(rest[pos + "device=".len()..].trim().to_string());
            &rest[..pos]
        }
        None => rest,
    };
    for token in body.split_whitespace() {
        if let Some(v) = token.strip_prefix("run_id=") {
            header.run_id = Some(v.to_string());
        } else if let Some(v) = token.strip_prefix("nominal_rate_hz=") {
            header.nominal_rate_hz = Some(v.parse().map_err(|_| format!("invalid rate {v:?}"))?);
        }
    }
    Ok(header)
}

fn validate_header(run_id: &str, rate: f64) -> Result<()> {
    if run_id.is_empty() || run_id.chars().any(char::is_whitespace) {
        return Err(Error::InvalidInput(format!(
            "run_id {run_id:?} must be non-empty and contain no whitespace"
        )));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidInput(format!(
            "nominal rate {rate} must be positive"
        )));
    }
    Ok(())
}

fn check_increasing(times: impl Iterator<Item = f64>) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for (i, t) in times.enumerate() {
        if t <= prev {
            return Err(Error::InvalidInput(format!(
                "timestamps must strictly increase (sample {i}: {t} after {prev})"
            )));
        }
        prev = t;
    }
    Ok(())
}

fn check_jitter(times: impl Iterator<Item = f64>, rate: f64) -> Result<()> {
    let times: Vec<f64> = times.collect();
    if times.len() < 3 {
        return Ok(());
    }
    let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let median_gap = stats::median(&gaps).unwrap_or_default();
    let nominal = 1.0 / rate;
    if (median_gap - nominal).abs() > 0.5 * nominal {
        return Err(Error::InvalidInput(format!(
            "median sample gap {median_gap:.4}s is not within 50% of the nominal {nominal:.4}s"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace() -> ResourceTrace {
        let samples = (0..5)
            .map(|i| ResourceSample::new(i as f64 * 0.2, 10.0 + i as f64, 1024.5))
            .collect();
        ResourceTrace::new("run-1", "MacBook Pro M2", 5.0, samples).unwrap()
    }

    #[test]
    fn text_format_round_trips() {
        let t = trace();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "# edgeprof resource-trace run_id=run-1 nominal_rate_hz=5 device=MacBook Pro M2\n"
        ));
        assert!(text.contains("\n0.2 11 1024.5\n"));
        let back = ResourceTrace::read_from(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn bare_meter_log_parses_as_energy_trace() {
        let log = "0 12.5\n1 13.25\n\n2 13.0\n";
        let e = EnergyTrace::read_from(log.as_bytes(), Path::new("meter.log")).unwrap();
        assert_eq!(e.samples().len(), 3);
        assert_eq!(
            e.samples()[1],
            PowerSample {
                t: 1.0,
                watts: 13.25
            }
        );
        assert_eq!(e.nominal_rate_hz, 1.0);
    }

    #[test]
    fn rejects_out_of_range_cpu() {
        let s = vec![ResourceSample::new(0.0, 101.0, 1.0)];
        assert!(ResourceTrace::new("r", "d", 5.0, s).is_err());
    }

    #[test]
    fn rejects_non_monotone_time() {
        let s = vec![
            ResourceSample::new(0.0, 1.0, 1.0),
            ResourceSample::new(0.0, 1.0, 1.0),
        ];
        assert!(ResourceTrace::new("r", "d", 5.0, s).is_err());
    }

    #[test]
    fn rejects_excess_jitter() {
        // 1 Hz samples declared as 5 Hz
        let s = (0..5)
            .map(|i| ResourceSample::new(i as f64, 1.0, 1.0))
            .collect();
        assert!(ResourceTrace::new("r", "d", 5.0, s).is_err());
    }

    #[test]
    fn parse_error_reports_line() {
        let bad =
            "# edgeprof resource-trace run_id=x nominal_rate_hz=5 device=d\n0 1 2\n0.2 oops 2\n";
        match ResourceTrace::read_from(bad.as_bytes(), Path::new("t.txt")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn window_requires_positive_length() {
        assert!(InferenceWindow::new(1.0, 1.0, "p").is_err());
        let w = InferenceWindow::new(1.0, 3.0, "p").unwrap();
        assert_eq!(w.overlap(2.0, 10.0), 1.0);
        assert!(w.contains(1.0) && w.contains(3.0) && !w.contains(3.1));
    }
}
