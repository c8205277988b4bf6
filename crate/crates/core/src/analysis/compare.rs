use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Which input attribute pairs steps across two runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchOn {
    #[default]
    Tokens,
    Pixels,
}

/// Per-input cost figures of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub key: u64,
    pub cpu_auc: f64,
    pub ram_auc: f64,
    pub wh: Option<f64>,
    pub tps: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputComparison {
    pub key: u64,
    pub cpu_reduction_pct: Option<f64>,
    pub ram_reduction_pct: Option<f64>,
    pub wh_reduction_pct: Option<f64>,
    /// comp tokens/s over base tokens/s.
    pub speedup: Option<f64>,
    pub comp_faster: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub base_label: String,
    pub comp_label: String,
    pub matched_on: MatchOn,
    pub per_input: Vec<InputComparison>,
    pub mean_cpu_reduction_pct: Option<f64>,
    pub mean_ram_reduction_pct: Option<f64>,
    pub mean_wh_reduction_pct: Option<f64>,
    pub speedup: Option<f64>,
    /// Mean accuracy difference (comp - base) in percentage points.
    pub accuracy_delta_pp: Option<f64>,
    /// Inputs where the compressed model had strictly higher throughput.
    pub wins: usize,
    pub unmatched_base: usize,
    pub unmatched_comp: usize,
}

/// `(base - comp) / base * 100`, undefined for a nonpositive base.
pub fn reduction_pct(base: f64, comp: f64) -> Option<f64> {
    (base > 0.0).then(|| (base - comp) / base * 100.0)
}

fn index(points: &[RunPoint]) -> BTreeMap<u64, RunPoint> {
    let mut map = BTreeMap::new();
    for p in points {
        // first occurrence wins for repeated keys
        map.entry(p.key).or_insert(*p);
    }
    map
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    stats::mean(&v)
}

/// Compare a compressed run against its base at matched inputs.
pub fn compare_models(
    base: &[RunPoint],
    comp: &[RunPoint],
    matched_on: MatchOn,
) -> Result<ComparisonReport> {
    compare_labelled("base", "comp", base, comp, matched_on)
}

pub(crate) fn compare_labelled(
    base_label: &str,
    comp_label: &str,
    base: &[RunPoint],
    comp: &[RunPoint],
    matched_on: MatchOn,
) -> Result<ComparisonReport> {
    let b = index(base);
    let c = index(comp);
    let keys: Vec<u64> = b.keys().filter(|k| c.contains_key(k)).copied().collect();
    if keys.is_empty() {
        return Err(Error::Mismatch(format!(
            "runs share no {matched_on:?} keys ({} base, {} comp)",
            b.len(),
            c.len()
        )));
    }
    let per_input: Vec<InputComparison> = keys
        .iter()
        .map(|k| {
            let (pb, pc) = (&b[k], &c[k]);
            InputComparison {
                key: *k,
                cpu_reduction_pct: reduction_pct(pb.cpu_auc, pc.cpu_auc),
                ram_reduction_pct: reduction_pct(pb.ram_auc, pc.ram_auc),
                wh_reduction_pct: pb.wh.zip(pc.wh).and_then(|(x, y)| reduction_pct(x, y)),
                speedup: (pb.tps > 0.0).then(|| pc.tps / pb.tps),
                comp_faster: pc.tps > pb.tps,
            }
        })
        .collect();
    let acc_deltas: Vec<f64> = keys
        .iter()
        .filter_map(|k| Some((c[k].accuracy? - b[k].accuracy?) * 100.0))
        .collect();
    Ok(ComparisonReport {
        base_label: base_label.to_string(),
        comp_label: comp_label.to_string(),
        matched_on,
        mean_cpu_reduction_pct: mean_of(per_input.iter().map(|p| p.cpu_reduction_pct)),
        mean_ram_reduction_pct: mean_of(per_input.iter().map(|p| p.ram_reduction_pct)),
        mean_wh_reduction_pct: mean_of(per_input.iter().map(|p| p.wh_reduction_pct)),
        speedup: mean_of(per_input.iter().map(|p| p.speedup)),
        accuracy_delta_pp: stats::mean(&acc_deltas),
        wins: per_input.iter().filter(|p| p.comp_faster).count(),
        unmatched_base: b.len() - keys.len(),
        unmatched_comp: c.len() - keys.len(),
        per_input,
    })
}
