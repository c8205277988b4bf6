use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::backend::{Backend, BackendMode, BackendSpec, InferenceRequest};
use super::ladder::{whitespace_tokens, PromptLadder};
use super::resolution::ResolutionSweep;
use crate::analysis::{MatchOn, RunPoint};
use crate::clamp::{apply_clamp, ClampSpec, Resolution};
use crate::error::{Error, Result};
use crate::metrics::{prompt_energy, summarize_energy, window_metrics};
use crate::report::AccuracyCurve;
use crate::sampler::{start_sampling, SamplerConfig, SamplerHandle, Scope};
use crate::trace::{
    AucMetrics, EnergyMetrics, EnergyTrace, IdleBaseline, InferenceWindow, PromptEnergy,
    ResourceTrace,
};
use crate::windowing::{estimate_idle_baseline, step_window, DetectParams, PromptEvent};

/// Overrides the default artifact root directory.
pub const ARTIFACT_ROOT_ENV: &str = "EDGEPROF_ARTIFACT_ROOT";

const RECORDS: &str = "records.jsonl";
const WINDOWS: &str = "windows.csv";
const TRACE: &str = "trace.txt";
const ENERGY: &str = "energy.txt";
const METADATA: &str = "metadata.json";
const CONFIG: &str = "config.json";
const ACCURACY: &str = "accuracy.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    PromptLadder,
    Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SweepPlan {
    PromptLadder(PromptLadder),
    Resolution(ResolutionSweep),
}

impl SweepPlan {
    pub fn len(&self) -> usize {
        match self {
            SweepPlan::PromptLadder(l) => l.len(),
            SweepPlan::Resolution(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> SweepKind {
        match self {
            SweepPlan::PromptLadder(_) => SweepKind::PromptLadder,
            SweepPlan::Resolution(_) => SweepKind::Resolution,
        }
    }

    pub fn prompt_id(&self, i: usize) -> String {
        match self {
            SweepPlan::PromptLadder(_) => PromptLadder::prompt_id(i),
            SweepPlan::Resolution(s) => ResolutionSweep::prompt_id(i, s.steps[i]),
        }
    }

    pub fn clamp(&self) -> Option<ClampSpec> {
        match self {
            SweepPlan::PromptLadder(_) => None,
            SweepPlan::Resolution(s) => Some(s.clamp),
        }
    }

    fn request(&self, i: usize, max_tokens: u32) -> InferenceRequest {
        match self {
            SweepPlan::PromptLadder(l) => InferenceRequest {
                step: i,
                prompt: l.prompts[i].clone(),
                image: None,
                resolution: None,
                max_tokens,
            },
            SweepPlan::Resolution(s) => InferenceRequest {
                step: i,
                prompt: s.prompt_template.clone(),
                image: s.frames.get(i).cloned(),
                resolution: Some(s.steps[i]),
                max_tokens,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    pub artifact_root: PathBuf,
    /// Idle time before the first prompt and after every prompt.
    pub settle_s: f64,
    pub max_tokens: u32,
    pub detect: DetectParams,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            artifact_root: std::env::var_os(ARTIFACT_ROOT_ENV)
                .map_or_else(|| PathBuf::from("artifacts"), PathBuf::from),
            settle_s: 3.0,
            max_tokens: 256,
            detect: DetectParams::default(),
        }
    }
}

/// Everything measured for one sweep step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub prompt_id: String,
    pub tokens_in: u64,
    /// False when `tokens_in` is a whitespace estimate.
    pub tokens_in_reported: bool,
    pub tokens_out: u64,
    pub resolution: Option<Resolution>,
    /// Resolution after the clamp in effect.
    pub effective_resolution: Option<Resolution>,
    pub issued_t: f64,
    pub completed_t: f64,
    pub window: Option<InferenceWindow>,
    pub metrics: Option<AucMetrics>,
    pub energy: Option<PromptEnergy>,
    /// Why the step has no metrics.
    pub flag: Option<String>,
    pub output_file: String,
}

impl StepRecord {
    pub fn key(&self, on: MatchOn) -> Option<u64> {
        match on {
            MatchOn::Tokens => Some(self.tokens_in),
            MatchOn::Pixels => self.resolution.map(|r| r.pixels()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub run_id: String,
    pub model: String,
    pub device: String,
    pub backend_mode: BackendMode,
    pub kind: SweepKind,
    pub clamp: Option<ClampSpec>,
    pub source_resolution: Option<Resolution>,
    pub resolution_spacing: Option<String>,
    pub sampler_rate_hz: f64,
    pub scope: Scope,
    pub cpu_count: usize,
    pub settle_s: f64,
    pub baseline: IdleBaseline,
    pub steps: usize,
    pub flagged_steps: Vec<usize>,
    pub backend_launches: u64,
    pub round_trips: u64,
    pub missed_ticks: u64,
    pub energy: Option<EnergyMetrics>,
    pub wall_time_s: f64,
    pub started_unix_s: u64,
    pub tool_version: String,
}

/// A finished (or reloaded) run directory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub metadata: RunMetadata,
    pub records: Vec<StepRecord>,
    pub trace: ResourceTrace,
    pub energy: Option<EnergyTrace>,
    pub accuracy: Option<AccuracyCurve>,
}

impl RunArtifacts {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join(METADATA);
        if !meta_path.exists() {
            return Err(Error::NotFound(format!(
                "{} (not a finished run)",
                meta_path.display()
            )));
        }
        let metadata: RunMetadata =
            serde_json::from_reader(BufReader::new(File::open(&meta_path)?))?;
        let mut records = Vec::new();
        let records_path = dir.join(RECORDS);
        for (i, line) in BufReader::new(File::open(&records_path)?)
            .lines()
            .enumerate()
        {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: records_path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        let energy_path = dir.join(ENERGY);
        let accuracy_path = dir.join(ACCURACY);
        Ok(Self {
            dir: dir.to_path_buf(),
            trace: ResourceTrace::load(dir.join(TRACE))?,
            energy: if energy_path.exists() {
                Some(EnergyTrace::load(&energy_path)?)
            } else {
                None
            },
            accuracy: if accuracy_path.exists() {
                Some(serde_json::from_reader(BufReader::new(File::open(
                    &accuracy_path,
                )?))?)
            } else {
                None
            },
            metadata,
            records,
        })
    }

    /// `model@device`, the row label used in reports.
    pub fn label(&self) -> String {
        format!("{}@{}", self.metadata.model, self.metadata.device)
    }

    pub fn output_text(&self, record: &StepRecord) -> Result<String> {
        Ok(std::fs::read_to_string(self.dir.join(&record.output_file))?)
    }

    pub fn save_accuracy(&mut self, curve: AccuracyCurve) -> Result<()> {
        let f = File::create(self.dir.join(ACCURACY))?;
        serde_json::to_writer_pretty(f, &curve)?;
        self.accuracy = Some(curve);
        Ok(())
    }

    /// Measured steps keyed by token count or nominal pixel count.
    ///
    /// Energy per input is the max-power bound, matching the tables.
    pub fn points(&self, on: MatchOn) -> Vec<RunPoint> {
        self.records
            .iter()
            .filter_map(|r| {
                let m = r.metrics?;
                Some(RunPoint {
                    key: r.key(on)?,
                    cpu_auc: m.cpu_auc,
                    ram_auc: m.ram_auc,
                    wh: r.energy.map(|e| e.wh_max_bound),
                    tps: m.throughput_tps,
                    accuracy: self.accuracy.as_ref().and_then(|a| a.score(r.step)),
                })
            })
            .collect()
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

#[derive(Serialize)]
struct ConfigSnapshot<'a> {
    backend: &'a BackendSpec,
    sampler: &'a SamplerConfig,
    options: &'a RunOptions,
    plan: &'a SweepPlan,
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    f.sync_data()?;
    Ok(())
}

/// Run every step of `plan` against `backend` while sampling.
///
/// Artifacts land in `<artifact_root>/<run_id>` and are written after each
/// step, so an interrupted run keeps all completed steps.
pub fn run_sweep(
    backend: &BackendSpec,
    plan: &SweepPlan,
    sampler: SamplerConfig,
    opts: &RunOptions,
) -> Result<RunArtifacts> {
    if plan.is_empty() {
        return Err(Error::InvalidInput("sweep has no steps".into()));
    }
    if !(opts.settle_s >= 0.0) {
        return Err(Error::InvalidInput(
            "settle time must be nonnegative".into(),
        ));
    }
    backend.validate()?;
    sampler.validate()?;
    let dir = opts.artifact_root.join(&sampler.run_id);
    if dir.join(RECORDS).exists() {
        return Err(Error::State(format!(
            "{} already holds a run",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir.join("outputs"))?;
    serde_json::to_writer_pretty(
        File::create(dir.join(CONFIG))?,
        &ConfigSnapshot {
            backend,
            sampler: &sampler,
            options: opts,
            plan,
        },
    )?;
    append_line(&dir.join(WINDOWS), "step,prompt_id,start_t,end_t")?;

    let started_unix_s = unix_now();
    let wall = Instant::now();
    let mut engine = backend.open(&dir)?;
    let mut handle = start_sampling(sampler.clone())?;
    let result = drive(&mut *engine, &mut handle, plan, opts, &dir);
    let shutdown = engine.shutdown();
    let (trace, energy) = handle.stop()?;
    trace.save(dir.join(TRACE))?;
    if let Some(e) = &energy {
        e.save(dir.join(ENERGY))?;
    }
    let (baseline, records) = result?;
    shutdown?;

    let prompt_energies: Vec<PromptEnergy> = records.iter().filter_map(|r| r.energy).collect();
    let (source_resolution, resolution_spacing) = match plan {
        SweepPlan::Resolution(s) => (Some(s.source), Some(s.spacing.clone())),
        SweepPlan::PromptLadder(_) => (None, None),
    };
    let metadata = RunMetadata {
        run_id: sampler.run_id.clone(),
        model: backend.model_label(),
        device: sampler.device.clone(),
        backend_mode: backend.mode,
        kind: plan.kind(),
        clamp: plan.clamp(),
        source_resolution,
        resolution_spacing,
        sampler_rate_hz: sampler.rate_hz,
        scope: sampler.scope,
        cpu_count: handle.cpu_count(),
        settle_s: opts.settle_s,
        baseline,
        steps: records.len(),
        flagged_steps: records
            .iter()
            .filter(|r| r.flag.is_some())
            .map(|r| r.step)
            .collect(),
        backend_launches: engine.launches(),
        round_trips: engine.round_trips(),
        missed_ticks: handle.missed_ticks(),
        energy: summarize_energy(&prompt_energies),
        wall_time_s: wall.elapsed().as_secs_f64(),
        started_unix_s,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    serde_json::to_writer_pretty(File::create(dir.join(METADATA))?, &metadata)?;
    Ok(RunArtifacts {
        dir,
        metadata,
        records,
        trace,
        energy,
        accuracy: None,
    })
}

fn drive(
    engine: &mut dyn Backend,
    handle: &mut SamplerHandle,
    plan: &SweepPlan,
    opts: &RunOptions,
    dir: &Path,
) -> Result<(IdleBaseline, Vec<StepRecord>)> {
    let rate = handle.config().rate_hz;
    let period = 1.0 / rate;
    // enough idle samples for a baseline even with a tiny settle time
    let idle = opts.settle_s.max(6.5 * period);
    std::thread::sleep(Duration::from_secs_f64(idle));
    let baseline = estimate_idle_baseline(&handle.snapshot()?, idle)?;
    log::info!(
        "idle baseline {:.2}% cpu, {:.1} MB over {} samples",
        baseline.cpu_pct,
        baseline.ram_mb,
        baseline.n_samples
    );

    let tolerance = 2.0 * period;
    let settle = opts.settle_s.max(opts.detect.min_gap_s + 2.0 * period);
    let mut boundary: f64 = 0.0;
    let mut records = Vec::with_capacity(plan.len());
    for i in 0..plan.len() {
        let prompt_id = plan.prompt_id(i);
        let request = plan.request(i, opts.max_tokens);
        let issued_t = handle.now_s();
        let completion = engine.infer(&request)?;
        let completed_t = handle.now_s();
        std::thread::sleep(Duration::from_secs_f64(settle));

        let trace = handle.snapshot()?;
        let event = PromptEvent {
            prompt_id: prompt_id.clone(),
            issued_t,
            completed_t,
        };
        let window = step_window(&trace, &baseline, &opts.detect, boundary, &event, tolerance);
        let tokens_in = completion
            .tokens_in
            .unwrap_or_else(|| whitespace_tokens(&request.prompt));
        let tokens_out = completion
            .tokens_out
            .unwrap_or_else(|| whitespace_tokens(&completion.text));

        let mut flag = None;
        let mut metrics = None;
        let mut energy = None;
        match &window {
            None => flag = Some("no inference window detected".to_string()),
            Some(w) => {
                boundary = w.end_t;
                match window_metrics(&trace, w, &baseline, tokens_in, tokens_out) {
                    Ok(m) => metrics = Some(m),
                    Err(e) => flag = Some(format!("metrics unavailable: {e}")),
                }
                if let Some(et) = handle.energy_snapshot()? {
                    match prompt_energy(&et, w) {
                        Ok(pe) => energy = Some(pe),
                        Err(e) => log::warn!("{prompt_id}: no energy figure: {e}"),
                    }
                }
            }
        }
        if window.is_none() {
            boundary = boundary.max(completed_t);
        }
        if let Some(f) = &flag {
            log::warn!("{prompt_id}: {f}");
        }

        let output_file = format!("outputs/step_{:03}.txt", i + 1);
        std::fs::write(dir.join(&output_file), &completion.text)?;
        let record = StepRecord {
            step: i,
            prompt_id: prompt_id.clone(),
            tokens_in,
            tokens_in_reported: completion.tokens_in.is_some(),
            tokens_out,
            resolution: request.resolution,
            effective_resolution: request
                .resolution
                .zip(plan.clamp())
                .map(|(r, c)| apply_clamp(r, c)),
            issued_t,
            completed_t,
            window: window.clone(),
            metrics,
            energy,
            flag,
            output_file,
        };
        append_line(&dir.join(RECORDS), &serde_json::to_string(&record)?)?;
        if let Some(w) = &window {
            append_line(
                &dir.join(WINDOWS),
                &format!("{i},{prompt_id},{},{}", w.start_t, w.end_t),
            )?;
        }
        trace.save(dir.join(TRACE))?;
        log::info!(
            "{prompt_id}: tokens_in={tokens_in} window={}",
            window
                .as_ref()
                .map_or("-".into(), |w| format!("{:.2}s", w.duration()))
        );
        records.push(record);
    }
    Ok((baseline, records))
}
