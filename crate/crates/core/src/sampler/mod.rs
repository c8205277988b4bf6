//! Background CPU/RAM sampling alongside a running workload.
//!
//! CPU utilisation is derived from OS cumulative counters: each sample is
//! the busy-time delta since the previous read divided by the total
//! capacity delta over all cores, so values are a share of the whole
//! machine in `[0, 100]`. Missed ticks are skipped rather than back-filled
//! and every sample carries its actual (jittered) timestamp.

mod procfs;

use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use procfs::ProcFs;
pub use procfs::PROC_ROOT_ENV;

use crate::error::{Error, Result};
use crate::trace::{EnergyTrace, ResourceSample, ResourceTrace};

pub const MIN_RATE_HZ: f64 = 1.0;
pub const MAX_RATE_HZ: f64 = 50.0;

/// What the CPU/RAM figures describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    #[default]
    System,
    /// A process and all of its descendants.
    ProcessTree { pid: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub rate_hz: f64,
    pub scope: Scope,
    /// Power-meter log written by an external producer (`t_seconds watts` lines).
    pub energy_source: Option<PathBuf>,
    pub run_id: String,
    pub device: String,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            rate_hz: 5.0,
            scope: Scope::System,
            energy_source: None,
            run_id: "run".into(),
            device: default_device_label(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_RATE_HZ..=MAX_RATE_HZ).contains(&self.rate_hz) {
            return Err(Error::InvalidInput(format!(
                "sampling rate {} Hz outside [{MIN_RATE_HZ}, {MAX_RATE_HZ}]",
                self.rate_hz
            )));
        }
        Ok(())
    }
}

/// CPU model name from procfs, falling back to the architecture.
pub fn default_device_label() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name") || l.starts_with("Model"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| std::env::consts::ARCH.to_string())
}

#[derive(Debug, Clone, Copy)]
struct Reading {
    busy: u64,
    total: u64,
    ram_mb: f64,
}

#[derive(Debug, Clone)]
enum Source {
    System(ProcFs),
    Process(ProcFs, u32),
}

impl Source {
    fn read(&self) -> Result<Reading> {
        match self {
            Source::System(fs) => {
                let cpu = fs.system_cpu()?;
                Ok(Reading {
                    busy: cpu.busy,
                    total: cpu.total,
                    ram_mb: fs.system_ram_mb()?,
                })
            }
            Source::Process(fs, pid) => {
                let cpu = fs.system_cpu()?;
                let (ticks, ram_mb) = fs.process_tree(*pid)?;
                Ok(Reading {
                    busy: ticks,
                    total: cpu.total,
                    ram_mb,
                })
            }
        }
    }
}

fn sample_between(prev: &Reading, cur: &Reading, t: f64) -> ResourceSample {
    let dt = cur.total.saturating_sub(prev.total);
    let db = cur.busy.saturating_sub(prev.busy);
    let cpu_pct = if dt == 0 {
        0.0
    } else {
        (100.0 * db as f64 / dt as f64).clamp(0.0, 100.0)
    };
    ResourceSample::new(t, cpu_pct, cur.ram_mb.max(0.0))
}

#[derive(Debug, Default)]
struct Shared {
    samples: Vec<ResourceSample>,
    missed_ticks: u64,
    error: Option<String>,
}

/// A running sampler. Create with [`start_sampling`], finish with [`stop_sampling`].
#[derive(Debug)]
pub struct SamplerHandle {
    config: SamplerConfig,
    cpu_count: usize,
    start: Instant,
    shared: Arc<Mutex<Shared>>,
    stop_tx: Option<mpsc::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

/// Begin background collection. The first sample lands one period after start.
pub fn start_sampling(config: SamplerConfig) -> Result<SamplerHandle> {
    config.validate()?;
    let fs = ProcFs::from_env();
    let source = match config.scope {
        Scope::System => Source::System(fs.clone()),
        Scope::ProcessTree { pid } => {
            // fail on unreadable counters before blaming the pid
            fs.system_cpu()?;
            if !fs.process_exists(pid) {
                return Err(Error::NotFound(format!("process {pid}")));
            }
            Source::Process(fs.clone(), pid)
        }
    };
    let cpu_count = fs.cpu_count()?;
    let first = source.read()?;
    let start = Instant::now();
    let shared = Arc::new(Mutex::new(Shared::default()));
    let (stop_tx, stop_rx) = mpsc::channel::<()>();
    let period = Duration::from_secs_f64(1.0 / config.rate_hz);

    let thread = {
        let shared = Arc::clone(&shared);
        std::thread::Builder::new()
            .name("edgeprof-sampler".into())
            .spawn(move || collect(source, first, start, period, stop_rx, shared))?
    };

    Ok(SamplerHandle {
        config,
        cpu_count,
        start,
        shared,
        stop_tx: Some(stop_tx),
        thread: Some(thread),
    })
}

fn collect(
    source: Source,
    mut prev: Reading,
    start: Instant,
    period: Duration,
    stop_rx: mpsc::Receiver<()>,
    shared: Arc<Mutex<Shared>>,
) {
    let mut tick: u32 = 1;
    loop {
        let target = start + period * tick;
        let now = Instant::now();
        let stop = if target > now {
            !matches!(
                stop_rx.recv_timeout(target - now),
                Err(RecvTimeoutError::Timeout)
            )
        } else {
            !matches!(stop_rx.try_recv(), Err(mpsc::TryRecvError::Empty))
        };
        let t = start.elapsed().as_secs_f64();
        if stop {
            // guarantee at least one sample even for an immediate stop
            let empty = shared.lock().map(|s| s.samples.is_empty()).unwrap_or(false);
            if empty {
                if let Ok(cur) = source.read() {
                    let sample = sample_between(&prev, &cur, t.max(f64::MIN_POSITIVE));
                    if let Ok(mut s) = shared.lock() {
                        s.samples.push(sample);
                    }
                }
            }
            return;
        }
        match source.read() {
            Ok(cur) => {
                let sample = sample_between(&prev, &cur, t);
                prev = cur;
                if let Ok(mut s) = shared.lock() {
                    s.samples.push(sample);
                }
            }
            Err(e) => {
                log::warn!("sampler stopped collecting: {e}");
                if let Ok(mut s) = shared.lock() {
                    s.error = Some(e.to_string());
                }
                // wait for the stop signal so the handle stays consistent
                let _ = stop_rx.recv();
                return;
            }
        }
        // skip ticks that have already passed
        let elapsed = start.elapsed().as_secs_f64();
        let next = (elapsed / period.as_secs_f64()).floor() as u32 + 1;
        if next > tick + 1 {
            if let Ok(mut s) = shared.lock() {
                s.missed_ticks += u64::from(next - tick - 1);
            }
        }
        tick = next.max(tick + 1);
    }
}

impl SamplerHandle {
    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Seconds since sampling started, on the same clock as sample timestamps.
    pub fn now_s(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub fn cpu_count(&self) -> usize {
        self.cpu_count
    }

    pub fn is_running(&self) -> bool {
        self.stop_tx.is_some()
    }

    pub fn missed_ticks(&self) -> u64 {
        self.shared.lock().map(|s| s.missed_ticks).unwrap_or(0)
    }

    /// Collection error, if the source became unreadable mid-run.
    pub fn error(&self) -> Option<String> {
        self.shared.lock().ok().and_then(|s| s.error.clone())
    }

    /// Copy of the samples collected so far.
    pub fn snapshot(&self) -> Result<ResourceTrace> {
        let samples = self
            .shared
            .lock()
            .map_err(|_| Error::State("sampler state poisoned".into()))?
            .samples
            .clone();
        ResourceTrace::new(
            self.config.run_id.clone(),
            self.config.device.clone(),
            self.config.rate_hz,
            samples,
        )
    }

    /// Current contents of the configured meter log, if any.
    pub fn energy_snapshot(&self) -> Result<Option<EnergyTrace>> {
        let Some(path) = &self.config.energy_source else {
            return Ok(None);
        };
        let mut trace = EnergyTrace::load(path)?;
        trace.run_id = self.config.run_id.clone();
        trace.device = self.config.device.clone();
        Ok(Some(trace))
    }

    /// Halt collection and return the complete traces. A second call is a state error.
    pub fn stop(&mut self) -> Result<(ResourceTrace, Option<EnergyTrace>)> {
        let tx = self
            .stop_tx
            .take()
            .ok_or_else(|| Error::State("sampler already stopped".into()))?;
        let _ = tx.send(());
        if let Some(thread) = self.thread.take() {
            thread
                .join()
                .map_err(|_| Error::State("sampler thread panicked".into()))?;
        }
        let trace = self.snapshot()?;
        let energy = self.energy_snapshot()?;
        Ok((trace, energy))
    }
}

impl Drop for SamplerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.stop_tx.take() {
            let _ = tx.send(());
            if let Some(thread) = self.thread.take() {
                let _ = thread.join();
            }
        }
    }
}

/// Free-function form of [`SamplerHandle::stop`].
pub fn stop_sampling(handle: &mut SamplerHandle) -> Result<(ResourceTrace, Option<EnergyTrace>)> {
    handle.stop()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_bounds() {
        let mut cfg = SamplerConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.rate_hz = 0.5;
        assert!(cfg.validate().is_err());
        cfg.rate_hz = 51.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cpu_pct_from_counter_deltas() {
        let a = Reading {
            busy: 100,
            total: 1000,
            ram_mb: 1.0,
        };
        let b = Reading {
            busy: 150,
            total: 1200,
            ram_mb: 2.0,
        };
        let s = sample_between(&a, &b, 0.2);
        assert_eq!(s.cpu_pct, 25.0);
        assert_eq!(s.ram_mb, 2.0);
        let idle = sample_between(&b, &b, 0.4);
        assert_eq!(idle.cpu_pct, 0.0);
    }

    #[test]
    fn scope_serializes_kebab_case() {
        let s = serde_json::to_string(&Scope::ProcessTree { pid: 7 }).unwrap();
        assert_eq!(s, r#"{"process-tree":{"pid":7}}"#);
        assert_eq!(
            serde_json::to_string(&Scope::System).unwrap(),
            r#""system""#
        );
    }
}
