use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, ensure, Context, Result};
use edgeprof_core::analysis::{detect_knee, fit_linear_with, MatchOn};
use edgeprof_core::clamp::DEFAULT_CLAMP;
use edgeprof_core::metrics::window_metrics;
use edgeprof_core::orchestrator::{
    build_prompt_ladder, build_resolution_sweep, filler_segments, run_sweep, source_resolution,
    write_synthetic_source, BackendMode, PromptLadder, RunArtifacts, RunOptions, SweepKind,
    SweepPlan,
};
use edgeprof_core::report::{self, run_fits, score_pairs, AccuracyCurve, ScorerClient};
use edgeprof_core::windowing::{
    detect_inference_windows, detect_step_windows, estimate_idle_baseline, PromptEvent,
};
use edgeprof_core::{ClampSpec, Resolution, ResourceTrace, SamplerConfig};
use serde::Serialize;

use crate::config::{parse_scope, Config, Kind};
use crate::{
    AnalyzeArgs, CompareArgs, FitArgs, KneeArgs, LadderArgs, ReportArgs, ScoreArgs, SweepArgs,
};

const DEFAULT_TEMPLATE: &str = include_str!("../templates/vlm_reasoning_prompt.txt");
const DEFAULT_SOURCE: Resolution = Resolution {
    width: 2048,
    height: 1440,
};

fn read_segments(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(PromptLadder::segments_from_text(&text))
}

pub fn ladder(a: LadderArgs) -> Result<()> {
    let segments = match &a.segments {
        Some(p) => read_segments(p)?,
        None => filler_segments(a.steps, a.words),
    };
    let ladder = build_prompt_ladder(&segments)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&ladder)?);
    } else {
        for (i, n) in ladder.token_counts.iter().enumerate() {
            println!(
                "{}\t{n} tokens (whitespace estimate)",
                PromptLadder::prompt_id(i)
            );
        }
    }
    Ok(())
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn match_on(kind: SweepKind) -> MatchOn {
    match kind {
        SweepKind::PromptLadder => MatchOn::Tokens,
        SweepKind::Resolution => MatchOn::Pixels,
    }
}

pub fn sweep(a: SweepArgs, cfg: Config) -> Result<()> {
    let mut backend = cfg.backend.clone();
    if let Some(b) = a.backend {
        backend.mode = b.into();
    }
    if a.model.is_some() {
        backend.model = a.model;
    }
    if let Some(c) = &a.command {
        backend.command = c.split_whitespace().map(str::to_string).collect();
    }
    let mock = &mut backend.mock;
    mock.load_ms = a.load_ms.unwrap_or(mock.load_ms);
    mock.per_token_ms = a.per_token_ms.unwrap_or(mock.per_token_ms);
    mock.per_pixel_ns = a.per_pixel_ns.unwrap_or(mock.per_pixel_ns);
    mock.output_tokens = a.output_tokens.unwrap_or(mock.output_tokens);

    let kind = a.kind.or(cfg.sweep.kind).unwrap_or(Kind::Ladder);
    let steps = a.steps.or(cfg.sweep.steps).unwrap_or(match kind {
        Kind::Ladder => 19,
        Kind::Resolution => 20,
    });
    let artifact_root = a
        .artifact_root
        .or(cfg.artifact_root.clone())
        .unwrap_or_else(|| PathBuf::from("artifacts"));
    let run_id = a.run_id.clone().unwrap_or_else(|| {
        let k = match kind {
            Kind::Ladder => "ladder",
            Kind::Resolution => "resolution",
        };
        format!("{k}-{}-{}", backend.mode, unix_now())
    });
    let run_dir = artifact_root.join(&run_id);
    let clamp = match a.clamp.as_deref() {
        Some(c) => c.parse::<ClampSpec>()?,
        None => cfg
            .sweep
            .clamp
            .unwrap_or(if backend.mode == BackendMode::Mock {
                backend.mock.clamp
            } else {
                DEFAULT_CLAMP
            }),
    };
    if backend.mode == BackendMode::Mock {
        backend.mock.clamp = clamp;
    }

    let plan = match kind {
        Kind::Ladder => {
            let mut segments = match a.segments.as_ref().or(cfg.sweep.segments_file.as_ref()) {
                Some(p) => read_segments(p)?,
                None => {
                    filler_segments(steps, a.words.or(cfg.sweep.words_per_segment).unwrap_or(40))
                }
            };
            if a.steps.is_some() || cfg.sweep.steps.is_some() {
                ensure!(
                    segments.len() >= steps,
                    "only {} segments for {steps} steps",
                    segments.len()
                );
                segments.truncate(steps);
            }
            SweepPlan::PromptLadder(build_prompt_ladder(&segments)?)
        }
        Kind::Resolution => {
            let image = match a.image.clone().or(cfg.sweep.image.clone()) {
                Some(p) => p,
                None => {
                    let size = match a.source.as_deref() {
                        Some(s) => s.parse()?,
                        None => cfg.sweep.source.unwrap_or(DEFAULT_SOURCE),
                    };
                    let path = run_dir.join("source.png");
                    write_synthetic_source(&path, size)?;
                    path
                }
            };
            let template = match a
                .prompt_template
                .as_ref()
                .or(cfg.sweep.prompt_template_file.as_ref())
            {
                Some(p) => std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?,
                None => DEFAULT_TEMPLATE.to_string(),
            };
            let w = source_resolution(&image)?.width;
            let min_width = a
                .min_width
                .or(cfg.sweep.min_width)
                .unwrap_or((w / 10).max(1));
            SweepPlan::Resolution(build_resolution_sweep(
                &image,
                steps,
                min_width,
                &run_dir,
                template.trim(),
                clamp,
            )?)
        }
    };

    let mut sampler = SamplerConfig {
        run_id,
        ..SamplerConfig::default()
    };
    sampler.rate_hz = a.rate_hz.or(cfg.sampler.rate_hz).unwrap_or(sampler.rate_hz);
    if let Some(s) = a.scope.as_deref().or(cfg.sampler.scope.as_deref()) {
        sampler.scope = parse_scope(s)?;
    }
    sampler.energy_source = a.energy_source.or(cfg.sampler.energy_source.clone());
    if let Some(d) = a.device.or(cfg.sampler.device.clone()) {
        sampler.device = d;
    }
    let mut opts = RunOptions {
        artifact_root,
        detect: cfg.detect,
        ..RunOptions::default()
    };
    opts.settle_s = a.settle_s.or(cfg.sweep.settle_s).unwrap_or(opts.settle_s);
    opts.max_tokens = a
        .max_tokens
        .or(cfg.sweep.max_tokens)
        .unwrap_or(opts.max_tokens);
    opts.detect.split_load |= a.split_load;

    let run = run_sweep(&backend, &plan, sampler, &opts)?;
    println!("run directory: {}", run.dir.display());
    println!(
        "{} records, {} flagged, {} backend launch(es)",
        run.records.len(),
        run.metadata.flagged_steps.len(),
        run.metadata.backend_launches
    );
    print_fits(&run);
    Ok(())
}

fn print_fits(run: &RunArtifacts) {
    let fits = run_fits(run);
    if let Some(f) = &fits.cpu_auc_vs_tokens {
        println!(
            "CPU AUC = {:.6e} * tokens + {:.6e}  (r2 = {:.4}, n = {})",
            f.a, f.b, f.r2, f.n
        );
    }
    if let Some(f) = &fits.ram_auc_vs_tokens {
        println!(
            "RAM AUC = {:.6e} * tokens + {:.6e}  (r2 = {:.4}, n = {})",
            f.a, f.b, f.r2, f.n
        );
    }
    if let Some(k) = &fits.cpu_knee {
        println!(
            "knee at {} px (grid index {}), flat level {:.4}, flat cv {}, confidence {:?}",
            k.knee_pixels,
            k.knee_grid_index,
            k.c_flat,
            k.flat_cv
                .map_or("n/a".into(), |c| format!("{:.2}%", c * 100.0)),
            k.confidence
        );
    }
    for n in &fits.notes {
        println!("note: {n}");
    }
}

#[derive(Serialize)]
struct AnalyzedWindow {
    prompt_id: String,
    start_t: f64,
    end_t: f64,
    duration_s: f64,
    cpu_auc: f64,
    ram_auc: f64,
    tokens_in: u64,
    pixels: Option<u64>,
}

pub fn analyze(a: AnalyzeArgs, cfg: Config) -> Result<()> {
    let mut params = cfg.detect;
    params.split_load |= a.split_load;
    let mut rows = Vec::new();
    if a.path.is_dir() {
        let run = RunArtifacts::load(&a.path)?;
        let rate = run.trace.nominal_rate_hz;
        let pre = a
            .pre_window_s
            .unwrap_or(run.metadata.settle_s)
            .max(6.5 / rate);
        let baseline = estimate_idle_baseline(&run.trace, pre)?;
        let events: Vec<PromptEvent> = run
            .records
            .iter()
            .map(|r| PromptEvent {
                prompt_id: r.prompt_id.clone(),
                issued_t: r.issued_t,
                completed_t: r.completed_t,
            })
            .collect();
        for (rec, w) in run.records.iter().zip(detect_step_windows(
            &run.trace,
            &baseline,
            &params,
            &events,
            2.0 / rate,
        )) {
            let Some(w) = w else {
                eprintln!("{}: no window", rec.prompt_id);
                continue;
            };
            let m = window_metrics(&run.trace, &w, &baseline, rec.tokens_in, rec.tokens_out)?;
            rows.push(AnalyzedWindow {
                prompt_id: w.prompt_id.clone(),
                start_t: w.start_t,
                end_t: w.end_t,
                duration_s: m.duration_s,
                cpu_auc: m.cpu_auc,
                ram_auc: m.ram_auc,
                tokens_in: rec.tokens_in,
                pixels: rec.resolution.map(|r| r.pixels()),
            });
        }
        if !a.json {
            print_rows(&rows);
            print_fits(&run);
        }
    } else {
        let trace = ResourceTrace::load(&a.path)?;
        let pre = a.pre_window_s.unwrap_or(3.0);
        let baseline = estimate_idle_baseline(&trace, pre)?;
        for w in detect_inference_windows(&trace, &baseline, &params) {
            let m = window_metrics(&trace, &w, &baseline, 0, 0)?;
            rows.push(AnalyzedWindow {
                prompt_id: w.prompt_id.clone(),
                start_t: w.start_t,
                end_t: w.end_t,
                duration_s: m.duration_s,
                cpu_auc: m.cpu_auc,
                ram_auc: m.ram_auc,
                tokens_in: 0,
                pixels: None,
            });
        }
        if !a.json {
            println!(
                "baseline {:.3}% cpu (sd {:.3}), {:.1} MB over {} samples",
                baseline.cpu_pct, baseline.dispersion, baseline.ram_mb, baseline.n_samples
            );
            print_rows(&rows);
        }
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    }
    Ok(())
}

fn print_rows(rows: &[AnalyzedWindow]) {
    println!("prompt\tstart_s\tend_s\tdur_s\tcpu_auc\tram_auc");
    for r in rows {
        println!(
            "{}\t{:.2}\t{:.2}\t{:.2}\t{:.3}\t{:.3}",
            r.prompt_id, r.start_t, r.end_t, r.duration_s, r.cpu_auc, r.ram_auc
        );
    }
}

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 || rec.get(0).is_some_and(|f| f.starts_with('#')) {
            continue;
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(x), Ok(y)) => points.push((x, y)),
            // header row
            _ if i == 0 => continue,
            _ => bail!("{}:{}: expected two numbers", path.display(), i + 1),
        }
    }
    Ok(points)
}

pub fn fit(a: FitArgs) -> Result<()> {
    let f = fit_linear_with(&read_points(&a.input)?, a.method.into())?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&f)?);
    } else {
        println!("a = {}", f.a);
        println!("b = {}", f.b);
        println!("r2 = {}", f.r2);
        println!("n = {}", f.n);
    }
    Ok(())
}

pub fn knee(a: KneeArgs) -> Result<()> {
    let clamp = a
        .clamp
        .as_deref()
        .map(str::parse::<ClampSpec>)
        .transpose()?;
    let k = detect_knee(&read_points(&a.input)?, clamp)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&k)?);
        return Ok(());
    }
    println!("knee_pixels = {}", k.knee_pixels);
    println!("knee_grid_index = {}", k.knee_grid_index);
    println!("c_flat = {}", k.c_flat);
    if let Some(cv) = k.flat_cv {
        println!("flat_cv = {cv}");
    }
    println!("confidence = {:?}", k.confidence);
    if let Some(r) = &k.low_confidence_reason {
        println!("low_confidence_reason = {r}");
    }
    if let (Some(h), Some(d)) = (k.hint_pixels, k.hint_discrepancy_steps) {
        println!("hint_pixels = {h}");
        println!("hint_discrepancy_steps = {d}");
    }
    Ok(())
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let base = RunArtifacts::load(&a.base)?;
    let comp = RunArtifacts::load(&a.comp)?;
    let on =
        a.on.map_or_else(|| match_on(base.metadata.kind), Into::into);
    let c = report::compare_runs(&base, &comp, on)?;
    let pct = |v: Option<f64>| v.map_or("n/a".into(), |v| format!("{v:.1}%"));
    println!(
        "{} vs {} on {} shared inputs",
        c.comp_label,
        c.base_label,
        c.per_input.len()
    );
    println!("CPU AUC reduction {}", pct(c.mean_cpu_reduction_pct));
    println!("RAM AUC reduction {}", pct(c.mean_ram_reduction_pct));
    println!("energy reduction {}", pct(c.mean_wh_reduction_pct));
    println!(
        "speedup {} (faster on {}/{})",
        c.speedup.map_or("n/a".into(), |s| format!("{s:.2}x")),
        c.wins,
        c.per_input.len()
    );
    if let Some(d) = c.accuracy_delta_pp {
        println!("accuracy delta {d:+.1} pp");
    }
    if let Some(out) = a.out {
        std::fs::write(&out, serde_json::to_string_pretty(&c)? + "\n")?;
    }
    Ok(())
}

pub fn report(a: ReportArgs, cfg: Config) -> Result<()> {
    let mut dirs = a.runs.clone();
    if let Some(b) = &a.baseline {
        dirs.retain(|d| d != b);
        dirs.insert(0, b.clone());
    }
    let runs = dirs
        .iter()
        .map(|d| RunArtifacts::load(d).with_context(|| format!("loading run {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut comparisons = Vec::new();
    if a.baseline.is_some() {
        let base = &runs[0];
        let on =
            a.on.map_or_else(|| match_on(base.metadata.kind), Into::into);
        for run in &runs[1..] {
            match report::compare_runs(base, run, on) {
                Ok(c) => comparisons.push(c),
                Err(e) => log::warn!("skipping comparison with {}: {e}", run.dir.display()),
            }
        }
    }
    let out = a.out.unwrap_or_else(|| {
        a.artifact_root
            .or(cfg.artifact_root)
            .unwrap_or_else(|| PathBuf::from("artifacts"))
            .join("report")
    });
    let summary = report::emit_summary(&runs, &comparisons, &out)?;
    print!("{}", std::fs::read_to_string(out.join("energy_table.md"))?);
    println!();
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
    if a.provenance {
        println!();
        for line in &summary.provenance {
            println!("{line}");
        }
    }
    Ok(())
}

fn read_references(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(serde_json::from_str(&text)?);
    }
    Ok(text
        .split("\n---\n")
        .map(|s| s.trim().to_string())
        .collect())
}

fn pairs_for(run: &RunArtifacts, refs: &[String]) -> Result<Vec<(String, String)>> {
    ensure!(
        refs.len() >= run.records.len(),
        "{} references for {} steps",
        refs.len(),
        run.records.len()
    );
    run.records
        .iter()
        .map(|r| Ok((run.output_text(r)?, refs[r.step].clone())))
        .collect()
}

pub fn score(a: ScoreArgs, cfg: Config) -> Result<()> {
    let refs = read_references(&a.references)?;
    let client = a
        .scorer
        .map(|s| s.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .or(cfg.scorer)
        .map(ScorerClient::new);
    let mut run = RunArtifacts::load(&a.run)?;
    let (scores_a, name) = score_pairs(client.as_ref(), &pairs_for(&run, &refs)?);
    let report_curve = |label: &str, c: &AccuracyCurve| {
        println!(
            "{label}: mean {} over {} inputs, removed {:?} (scorer {})",
            c.mean
                .map_or("n/a".into(), |m| format!("{:.1}%", m * 100.0)),
            c.scores.len() - c.removed.len(),
            c.removed,
            c.scorer
        );
    };
    match a.against {
        Some(other) => {
            let mut run_b = RunArtifacts::load(&other)?;
            let (scores_b, name_b) = score_pairs(client.as_ref(), &pairs_for(&run_b, &refs)?);
            ensure!(
                name == name_b,
                "scorer changed between runs ({name} vs {name_b})"
            );
            let (ca, cb) = AccuracyCurve::paired(&scores_a, &scores_b, name)?;
            report_curve(&run.label(), &ca);
            report_curve(&run_b.label(), &cb);
            run.save_accuracy(ca)?;
            run_b.save_accuracy(cb)?;
        }
        None => {
            let c = AccuracyCurve::new(&scores_a, name);
            report_curve(&run.label(), &c);
            run.save_accuracy(c)?;
        }
    }
    Ok(())
}
