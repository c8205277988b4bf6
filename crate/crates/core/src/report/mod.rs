//! Tables, fit summaries and figures from finished runs.

pub mod scoring;
mod svg;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use scoring::{
    is_degenerate, lexical_score, lexical_similarity, score_pairs, symmetric_outlier_removal,
    AccuracyCurve, ScoredPair, ScorerClient, LEXICAL_SCORER,
};
pub use svg::{Plot, Series};

use crate::analysis::{
    compare_models, detect_knee, fit_linear, ComparisonReport, KneeFit, LinearFit, MatchOn,
};
use crate::error::{Error, Result};
use crate::orchestrator::{RunArtifacts, SweepKind};
use crate::stats;

/// Compare two runs on shared inputs, labelling the report with the run labels.
pub fn compare_runs(
    base: &RunArtifacts,
    comp: &RunArtifacts,
    on: MatchOn,
) -> Result<ComparisonReport> {
    let mut report = compare_models(&base.points(on), &comp.points(on), on)?;
    report.base_label = base.label();
    report.comp_label = comp.label();
    Ok(report)
}

/// One row per run (model x device).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub model: String,
    pub device: String,
    pub run_id: String,
    pub backend_mode: String,
    pub measured_steps: usize,
    pub flagged_steps: usize,
    pub max_power_w: Option<f64>,
    pub mean_prompt_duration_s: Option<f64>,
    pub max_prompt_duration_s: Option<f64>,
    pub wh_per_prompt: Option<f64>,
    pub wh_per_run: Option<f64>,
    pub wh_per_prompt_integrated: Option<f64>,
    pub wh_per_run_integrated: Option<f64>,
    pub mean_cpu_auc: Option<f64>,
    pub mean_ram_auc: Option<f64>,
    pub mean_tps: Option<f64>,
    pub accuracy_mean: Option<f64>,
    pub cpu_reduction_pct: Option<f64>,
    pub ram_reduction_pct: Option<f64>,
    pub wh_reduction_pct: Option<f64>,
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFits {
    pub label: String,
    pub run_id: String,
    pub cpu_auc_vs_tokens: Option<LinearFit>,
    pub ram_auc_vs_tokens: Option<LinearFit>,
    pub duration_vs_tokens: Option<LinearFit>,
    pub cpu_knee: Option<KneeFit>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<TableRow>,
    pub fits: Vec<RunFits>,
    /// `cell <- source` lines tracing every table value to run records.
    pub provenance: Vec<String>,
    pub files: Vec<PathBuf>,
}

fn steps_list(steps: &[usize]) -> String {
    let v: Vec<String> = steps.iter().map(usize::to_string).collect();
    format!("[{}]", v.join(","))
}

fn row_for(
    run: &RunArtifacts,
    comparisons: &[ComparisonReport],
    prov: &mut Vec<String>,
) -> TableRow {
    let label = run.label();
    let measured: Vec<_> = run.records.iter().filter(|r| r.metrics.is_some()).collect();
    let steps: Vec<usize> = measured.iter().map(|r| r.step).collect();
    let metrics: Vec<_> = measured.iter().filter_map(|r| r.metrics).collect();
    let durations: Vec<f64> = metrics.iter().map(|m| m.duration_s).collect();
    let energy = run.metadata.energy;
    let energy_steps: Vec<usize> = run
        .records
        .iter()
        .filter(|r| r.energy.is_some())
        .map(|r| r.step)
        .collect();
    let comparison = comparisons.iter().find(|c| c.comp_label == label);
    let src = run.dir.display();

    let mean_of = |f: fn(&crate::trace::AucMetrics) -> f64| {
        stats::mean(&metrics.iter().map(f).collect::<Vec<_>>())
    };
    let row = TableRow {
        label: label.clone(),
        model: run.metadata.model.clone(),
        device: run.metadata.device.clone(),
        run_id: run.metadata.run_id.clone(),
        backend_mode: run.metadata.backend_mode.to_string(),
        measured_steps: measured.len(),
        flagged_steps: run.metadata.flagged_steps.len(),
        max_power_w: energy.map(|e| e.max_power_w),
        mean_prompt_duration_s: energy
            .map(|e| e.mean_prompt_duration_s)
            .or_else(|| stats::mean(&durations)),
        max_prompt_duration_s: energy
            .map(|e| e.max_prompt_duration_s)
            .or_else(|| durations.iter().copied().reduce(f64::max)),
        wh_per_prompt: energy.map(|e| e.wh_per_prompt),
        wh_per_run: energy.map(|e| e.wh_per_run),
        wh_per_prompt_integrated: energy.map(|e| e.wh_per_prompt_integrated),
        wh_per_run_integrated: energy.map(|e| e.wh_per_run_integrated),
        mean_cpu_auc: mean_of(|m| m.cpu_auc),
        mean_ram_auc: mean_of(|m| m.ram_auc),
        mean_tps: mean_of(|m| m.throughput_tps),
        accuracy_mean: run.accuracy.as_ref().and_then(|a| a.mean),
        cpu_reduction_pct: comparison.and_then(|c| c.mean_cpu_reduction_pct),
        ram_reduction_pct: comparison.and_then(|c| c.mean_ram_reduction_pct),
        wh_reduction_pct: comparison.and_then(|c| c.mean_wh_reduction_pct),
        speedup: comparison.and_then(|c| c.speedup),
    };

    let mut p = |cell: &str, value: Option<f64>, source: String| {
        let v = value.map_or("n/a".to_string(), |v| v.to_string());
        prov.push(format!("{label} | {cell} = {v} <- {source}"));
    };
    let es = steps_list(&energy_steps);
    p(
        "max_power_w",
        row.max_power_w,
        format!("{src}/energy.txt, max watts inside windows of steps {es}"),
    );
    p(
        "mean_prompt_duration_s",
        row.mean_prompt_duration_s,
        format!(
            "{src}/records.jsonl, mean window duration of steps {}",
            if energy.is_some() {
                es.clone()
            } else {
                steps_list(&steps)
            }
        ),
    );
    p(
        "max_prompt_duration_s",
        row.max_prompt_duration_s,
        format!("{src}/records.jsonl, longest window of the same steps"),
    );
    p(
        "wh_per_prompt",
        row.wh_per_prompt,
        "max_power_w * mean_prompt_duration_s / 3600".into(),
    );
    p(
        "wh_per_run",
        row.wh_per_run,
        format!("sum over steps {es} of max_power_w * window duration / 3600"),
    );
    p(
        "wh_per_prompt_integrated",
        row.wh_per_prompt_integrated,
        format!("{src}/records.jsonl, mean energy.wh_integrated of steps {es}"),
    );
    p(
        "wh_per_run_integrated",
        row.wh_per_run_integrated,
        format!("{src}/records.jsonl, sum of energy.wh_integrated of steps {es}"),
    );
    let ms = steps_list(&steps);
    p(
        "mean_cpu_auc",
        row.mean_cpu_auc,
        format!("{src}/records.jsonl, mean metrics.cpu_auc of steps {ms}"),
    );
    p(
        "mean_ram_auc",
        row.mean_ram_auc,
        format!("{src}/records.jsonl, mean metrics.ram_auc of steps {ms}"),
    );
    p(
        "mean_tps",
        row.mean_tps,
        format!("{src}/records.jsonl, mean metrics.throughput_tps of steps {ms}"),
    );
    p(
        "accuracy_mean",
        row.accuracy_mean,
        format!("{src}/accuracy.json, mean score excluding removed indices"),
    );
    if let Some(c) = comparison {
        let keys: Vec<String> = c.per_input.iter().map(|i| i.key.to_string()).collect();
        let source = format!(
            "comparison {} vs {} on {:?} keys [{}]",
            c.base_label,
            c.comp_label,
            c.matched_on,
            keys.join(",")
        );
        p("cpu_reduction_pct", row.cpu_reduction_pct, source.clone());
        p("ram_reduction_pct", row.ram_reduction_pct, source.clone());
        p("wh_reduction_pct", row.wh_reduction_pct, source.clone());
        p("speedup", row.speedup, source);
    }
    row
}

/// Token-scaling fits for ladder runs, the knee for resolution runs.
pub fn run_fits(run: &RunArtifacts) -> RunFits {
    let mut notes = Vec::new();
    let measured: Vec<_> = run
        .records
        .iter()
        .filter_map(|r| Some((r, r.metrics?)))
        .collect();
    let mut fit = |name: &str, pts: Vec<(f64, f64)>| match fit_linear(&pts) {
        Ok(f) => Some(f),
        Err(e) => {
            notes.push(format!("{name}: {e}"));
            None
        }
    };
    let (mut cpu_t, mut ram_t, mut dur_t, mut knee) = (None, None, None, None);
    match run.metadata.kind {
        SweepKind::PromptLadder => {
            let tok = |f: fn(&crate::trace::AucMetrics) -> f64| {
                measured
                    .iter()
                    .map(|(r, m)| (r.tokens_in as f64, f(m)))
                    .collect::<Vec<_>>()
            };
            cpu_t = fit("cpu_auc_vs_tokens", tok(|m| m.cpu_auc));
            ram_t = fit("ram_auc_vs_tokens", tok(|m| m.ram_auc));
            dur_t = fit("duration_vs_tokens", tok(|m| m.duration_s));
        }
        SweepKind::Resolution => {
            let pts: Vec<(f64, f64)> = measured
                .iter()
                .filter_map(|(r, m)| Some((r.resolution?.pixels() as f64, m.cpu_auc)))
                .collect();
            match detect_knee(&pts, run.metadata.clamp) {
                Ok(k) => knee = Some(k),
                Err(e) => notes.push(format!("cpu_knee: {e}")),
            }
        }
    }
    RunFits {
        label: run.label(),
        run_id: run.metadata.run_id.clone(),
        cpu_auc_vs_tokens: cpu_t,
        ram_auc_vs_tokens: ram_t,
        duration_vs_tokens: dur_t,
        cpu_knee: knee,
        notes,
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn md(v: Option<f64>, digits: usize) -> String {
    v.map_or("n/a".to_string(), |v| format!("{v:.digits$}"))
}

const TABLE_HEADER: &str = "label,model,device,run_id,backend_mode,measured_steps,flagged_steps,\
max_power_w,mean_prompt_duration_s,max_prompt_duration_s,wh_per_prompt,wh_per_run,\
wh_per_prompt_integrated,wh_per_run_integrated,mean_cpu_auc,mean_ram_auc,mean_tps,accuracy_mean,\
cpu_reduction_pct,ram_reduction_pct,wh_reduction_pct,speedup";

fn table_csv(rows: &[TableRow]) -> String {
    let mut s = format!("{TABLE_HEADER}\n");
    for r in rows {
        let fields = [
            csv_field(&r.label),
            csv_field(&r.model),
            csv_field(&r.device),
            csv_field(&r.run_id),
            r.backend_mode.clone(),
            r.measured_steps.to_string(),
            r.flagged_steps.to_string(),
            opt(r.max_power_w),
            opt(r.mean_prompt_duration_s),
            opt(r.max_prompt_duration_s),
            opt(r.wh_per_prompt),
            opt(r.wh_per_run),
            opt(r.wh_per_prompt_integrated),
            opt(r.wh_per_run_integrated),
            opt(r.mean_cpu_auc),
            opt(r.mean_ram_auc),
            opt(r.mean_tps),
            opt(r.accuracy_mean),
            opt(r.cpu_reduction_pct),
            opt(r.ram_reduction_pct),
            opt(r.wh_reduction_pct),
            opt(r.speedup),
        ];
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

fn table_md(rows: &[TableRow]) -> String {
    let mut s = String::from(
        "| Model | Device | Power (W, max) | Duration (s, mean) [1] | Max Wh / prompt [2] | Max Wh / run [3] |\n\
         |---|---|---:|---:|---:|---:|\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            r.model.replace('|', "\\|"),
            r.device.replace('|', "\\|"),
            md(r.max_power_w, 1),
            md(r.mean_prompt_duration_s, 2),
            md(r.wh_per_prompt, 3),
            md(r.wh_per_run, 2),
        );
    }
    if rows.iter().any(|r| r.cpu_reduction_pct.is_some()) {
        s.push_str("\n| Model | Device | CPU AUC reduction (%) | RAM AUC reduction (%) | Wh reduction (%) | Speedup |\n|---|---|---:|---:|---:|---:|\n");
        for r in rows.iter().filter(|r| r.cpu_reduction_pct.is_some()) {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                r.model,
                r.device,
                md(r.cpu_reduction_pct, 1),
                md(r.ram_reduction_pct, 1),
                md(r.wh_reduction_pct, 1),
                md(r.speedup, 2),
            );
        }
    }
    s.push_str(
        "\n[1] Mean window duration over measured prompts. The maximum is in energy_table.csv.\n\
         [2] Run peak power times mean prompt duration. The trapezoidal integral is in energy_table.csv.\n\
         [3] Sum over prompts of run peak power times prompt duration.\n",
    );
    s
}

fn figure_csv(plot: &Plot) -> String {
    let mut s = String::from("run,x,y\n");
    for series in &plot.series {
        for (x, y) in &series.points {
            let _ = writeln!(s, "{},{x},{y}", csv_field(&series.label));
        }
    }
    s
}

fn figures(runs: &[RunArtifacts]) -> Vec<(&'static str, Plot)> {
    let series_for = |kind: SweepKind,
                      f: &dyn Fn(
        &RunArtifacts,
        &crate::orchestrator::StepRecord,
    ) -> Option<(f64, f64)>| {
        runs.iter()
            .filter(|r| r.metadata.kind == kind)
            .map(|run| Series {
                label: run.label(),
                points: run.records.iter().filter_map(|rec| f(run, rec)).collect(),
            })
            .collect::<Vec<_>>()
    };
    let pixels = |rec: &crate::orchestrator::StepRecord| rec.resolution.map(|r| r.pixels() as f64);
    vec![
        (
            "auc_vs_tokens",
            Plot {
                title: "CPU AUC vs prompt tokens".into(),
                x_label: "input tokens".into(),
                y_label: "CPU AUC above idle (%·s)".into(),
                series: series_for(SweepKind::PromptLadder, &|_, rec| {
                    Some((rec.tokens_in as f64, rec.metrics?.cpu_auc))
                }),
            },
        ),
        (
            "auc_vs_pixels",
            Plot {
                title: "CPU AUC vs image pixels".into(),
                x_label: "input pixels".into(),
                y_label: "CPU AUC above idle (%·s)".into(),
                series: series_for(SweepKind::Resolution, &|_, rec| {
                    Some((pixels(rec)?, rec.metrics?.cpu_auc))
                }),
            },
        ),
        (
            "tps_vs_pixels",
            Plot {
                title: "Throughput vs image pixels".into(),
                x_label: "input pixels".into(),
                y_label: "output tokens / s".into(),
                series: series_for(SweepKind::Resolution, &|_, rec| {
                    Some((pixels(rec)?, rec.metrics?.throughput_tps))
                }),
            },
        ),
        (
            "accuracy_vs_pixels",
            Plot {
                title: "Accuracy vs image pixels".into(),
                x_label: "input pixels".into(),
                y_label: "semantic similarity (%)".into(),
                series: series_for(SweepKind::Resolution, &|run, rec| {
                    Some((
                        pixels(rec)?,
                        run.accuracy.as_ref()?.score(rec.step)? * 100.0,
                    ))
                })
                .into_iter()
                .filter(|s| !s.points.is_empty())
                .collect(),
            },
        ),
    ]
}

/// Write every report file into `out_dir`.
///
/// Output depends only on the artifacts and the order of `runs`, never on
/// the clock, so regenerating a report is byte-for-byte stable.
pub fn emit_summary(
    runs: &[RunArtifacts],
    comparisons: &[ComparisonReport],
    out_dir: &Path,
) -> Result<Summary> {
    if runs.is_empty() {
        return Err(Error::InvalidInput("report needs at least one run".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut write = |name: &str, body: &str| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, body)?;
        files.push(path);
        Ok(())
    };

    let mut provenance = Vec::new();
    let rows: Vec<TableRow> = runs
        .iter()
        .map(|r| row_for(r, comparisons, &mut provenance))
        .collect();
    let fits: Vec<RunFits> = runs.iter().map(run_fits).collect();

    write("energy_table.csv", &table_csv(&rows))?;
    write("energy_table.md", &table_md(&rows))?;
    write("fits.json", &(serde_json::to_string_pretty(&fits)? + "\n"))?;
    write(
        "comparisons.json",
        &(serde_json::to_string_pretty(comparisons)? + "\n"),
    )?;
    let mut cmp = String::from("base,comp,matched_on,key,cpu_reduction_pct,ram_reduction_pct,wh_reduction_pct,speedup,comp_faster\n");
    for c in comparisons {
        for i in &c.per_input {
            let _ = writeln!(
                cmp,
                "{},{},{:?},{},{},{},{},{},{}",
                csv_field(&c.base_label),
                csv_field(&c.comp_label),
                c.matched_on,
                i.key,
                opt(i.cpu_reduction_pct),
                opt(i.ram_reduction_pct),
                opt(i.wh_reduction_pct),
                opt(i.speedup),
                i.comp_faster
            );
        }
    }
    write("comparisons.csv", &cmp)?;
    for (name, plot) in figures(runs) {
        write(&format!("{name}.csv"), &figure_csv(&plot))?;
        write(&format!("{name}.svg"), &plot.render())?;
    }
    write("provenance.txt", &(provenance.join("\n") + "\n"))?;
    Ok(Summary {
        rows,
        fits,
        provenance,
        files,
    })
}
