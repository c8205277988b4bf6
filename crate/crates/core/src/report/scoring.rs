//! Answer-quality scoring: an external embedding scorer spoken to over JSON
//! lines, with a lexical-overlap fallback that needs nothing installed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub const LEXICAL_SCORER: &str = "lexical-cosine";

/// Below this many whitespace tokens an answer counts as trivial.
pub const MIN_TOKENS: usize = 5;
/// Above this share of the most repeated token an answer counts as degenerate.
pub const MAX_REPEAT_SHARE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub score: f64,
    pub degenerate: bool,
}

pub fn is_degenerate(text: &str) -> bool {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    if tokens.len() < MIN_TOKENS {
        return true;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &tokens {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    top as f64 / tokens.len() as f64 > MAX_REPEAT_SHARE
}

fn term_counts(text: &str) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for w in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        *m.entry(w.to_lowercase()).or_insert(0.0) += 1.0;
    }
    m
}

/// Cosine similarity of term-count vectors. Counts are nonnegative so the
/// result already lies in [0, 1].
pub fn lexical_similarity(a: &str, b: &str) -> f64 {
    let (ta, tb) = (term_counts(a), term_counts(b));
    let dot: f64 = ta
        .iter()
        .filter_map(|(k, x)| tb.get(k).map(|y| x * y))
        .sum();
    let na = ta.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = tb.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

pub fn lexical_score(candidate: &str, reference: &str) -> ScoredPair {
    if candidate.trim().is_empty() {
        return ScoredPair {
            score: 0.0,
            degenerate: true,
        };
    }
    ScoredPair {
        score: lexical_similarity(candidate, reference),
        degenerate: is_degenerate(candidate),
    }
}

/// Drop every index flagged in either list from both lists.
pub fn symmetric_outlier_removal(
    a: &[ScoredPair],
    b: &[ScoredPair],
) -> Result<(Vec<ScoredPair>, Vec<ScoredPair>, BTreeSet<usize>)> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "score lists differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let removed: BTreeSet<usize> = (0..a.len())
        .filter(|&i| a[i].degenerate || b[i].degenerate)
        .collect();
    let keep = |v: &[ScoredPair]| {
        v.iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, p)| *p)
            .collect::<Vec<_>>()
    };
    Ok((keep(a), keep(b), removed))
}

/// Per-input accuracy for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub scores: Vec<f64>,
    pub degenerate: Vec<bool>,
    /// Indices excluded from `mean`.
    pub removed: BTreeSet<usize>,
    pub mean: Option<f64>,
    pub scorer: String,
}

impl AccuracyCurve {
    /// Curve for a single run; only its own degenerate answers are removed.
    pub fn new(pairs: &[ScoredPair], scorer: impl Into<String>) -> Self {
        let removed = pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.degenerate)
            .map(|(i, _)| i)
            .collect();
        Self::with_removed(pairs, removed, scorer.into())
    }

    /// Curves for two runs answering the same inputs, with symmetric removal.
    pub fn paired(
        a: &[ScoredPair],
        b: &[ScoredPair],
        scorer: impl Into<String>,
    ) -> Result<(Self, Self)> {
        let (_, _, removed) = symmetric_outlier_removal(a, b)?;
        let scorer = scorer.into();
        Ok((
            Self::with_removed(a, removed.clone(), scorer.clone()),
            Self::with_removed(b, removed, scorer),
        ))
    }

    fn with_removed(pairs: &[ScoredPair], removed: BTreeSet<usize>, scorer: String) -> Self {
        let kept: Vec<f64> = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, p)| p.score)
            .collect();
        Self {
            scores: pairs.iter().map(|p| p.score).collect(),
            degenerate: pairs.iter().map(|p| p.degenerate).collect(),
            mean: stats::mean(&kept),
            removed,
            scorer,
        }
    }

    /// Score of input `i`, `None` if it was removed.
    pub fn score(&self, i: usize) -> Option<f64> {
        if self.removed.contains(&i) {
            None
        } else {
            self.scores.get(i).copied()
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    id: usize,
    candidate: &'a str,
    reference: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    id: usize,
    score: f64,
    #[serde(default)]
    degenerate: bool,
    #[serde(default)]
    variant: Option<String>,
}

/// A scorer process: one JSON request per stdin line, one reply per stdout line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerClient {
    pub command: Vec<String>,
}

impl ScorerClient {
    pub fn new(command: Vec<String>) -> Self {
        Self { command }
    }

    /// Score all pairs in one batch. Returns the scores and the scorer's
    /// variant name.
    pub fn score_batch(&self, pairs: &[(String, String)]) -> Result<(Vec<ScoredPair>, String)> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| Error::InvalidInput("empty scorer command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Backend {
                message: format!("cannot launch scorer {program}: {e}"),
                stderr: String::new(),
            })?;
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let mut lines = Vec::with_capacity(pairs.len());
        for (id, (candidate, reference)) in pairs.iter().enumerate() {
            lines.push(serde_json::to_string(&ScoreRequest {
                id,
                candidate,
                reference,
            })?);
        }
        // write on a side thread so a chatty scorer cannot deadlock us
        let writer = std::thread::spawn(move || -> std::io::Result<()> {
            for l in lines {
                writeln!(stdin, "{l}")?;
            }
            stdin.flush()
        });
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut replies: BTreeMap<usize, ScoreResponse> = BTreeMap::new();
        for line in BufReader::new(stdout).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: ScoreResponse = serde_json::from_str(&line)?;
            replies.insert(r.id, r);
        }
        let write_result = writer.join();
        let output = child.wait_with_output()?;
        if !output.status.success() {
            return Err(Error::Backend {
                message: format!("scorer exited with {}", output.status),
                stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
            });
        }
        if !matches!(write_result, Ok(Ok(()))) {
            return Err(Error::Backend {
                message: "scorer stopped reading requests".into(),
                stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
            });
        }
        let mut variant = None;
        let mut out = Vec::with_capacity(pairs.len());
        for (id, (candidate, _)) in pairs.iter().enumerate() {
            let r = replies.remove(&id).ok_or_else(|| Error::Backend {
                message: format!("scorer sent no reply for request {id}"),
                stderr: String::new(),
            })?;
            if !(0.0..=1.0).contains(&r.score) {
                return Err(Error::Backend {
                    message: format!("scorer returned {} outside [0, 1]", r.score),
                    stderr: String::new(),
                });
            }
            variant = variant.or(r.variant);
            out.push(ScoredPair {
                score: r.score,
                degenerate: r.degenerate || is_degenerate(candidate),
            });
        }
        Ok((out, variant.unwrap_or_else(|| "external".into())))
    }
}

/// Score with the external scorer when available, else the lexical fallback.
/// The returned name says which one produced the numbers.
pub fn score_pairs(
    scorer: Option<&ScorerClient>,
    pairs: &[(String, String)],
) -> (Vec<ScoredPair>, String) {
    if let Some(client) = scorer {
        match client.score_batch(pairs) {
            Ok(scored) => return scored,
            Err(e) => log::warn!("scorer unavailable, using lexical fallback: {e}"),
        }
    }
    (
        pairs.iter().map(|(c, r)| lexical_score(c, r)).collect(),
        LEXICAL_SCORER.to_string(),
    )
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ok(score: f64) -> ScoredPair {
        ScoredPair {
            score,
            degenerate: false,
        }
    }

    fn bad() -> ScoredPair {
        ScoredPair {
            score: 0.0,
            degenerate: true,
        }
    }

    #[test]
    fn identical_texts_score_one() {
        let t = "The red bus waits at the second junction behind two cyclists.";
        assert!((lexical_similarity(t, t) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn paraphrase_beats_unrelated() {
        let reference = "Three cars are waiting at the red traffic light near the crossing.";
        let para = "Near the crossing, three cars wait at a red traffic light.";
        let other = "Bake the bread for forty minutes until the crust is golden.";
        assert!(lexical_similarity(para, reference) > lexical_similarity(other, reference));
    }

    #[test]
    fn empty_candidate_is_degenerate_zero() {
        assert_eq!(lexical_score("", "anything at all here"), bad());
    }

    #[test]
    fn degenerate_rules() {
        assert!(is_degenerate("too short"));
        assert!(is_degenerate("yes yes yes yes no maybe"));
        assert!(!is_degenerate("a perfectly ordinary answer with words"));
    }

    #[test]
    fn removal_examples() {
        let a = vec![ok(0.9); 6];
        let (fa, fb, r) = symmetric_outlier_removal(&a, &a).unwrap();
        assert_eq!((fa.len(), fb.len(), r.len()), (6, 6, 0));

        let mut a3 = a.clone();
        a3[3] = bad();
        let (fa, fb, r) = symmetric_outlier_removal(&a3, &a).unwrap();
        assert_eq!(r, BTreeSet::from([3]));
        assert_eq!((fa.len(), fb.len()), (5, 5));

        let mut a1 = a.clone();
        a1[1] = bad();
        let mut b4 = a.clone();
        b4[4] = bad();
        let (_, _, r) = symmetric_outlier_removal(&a1, &b4).unwrap();
        assert_eq!(r, BTreeSet::from([1, 4]));

        assert!(symmetric_outlier_removal(&a, &a[..5]).is_err());
    }

    #[test]
    fn paired_curves_share_removals() {
        let a = vec![ok(0.8), bad(), ok(0.6)];
        let b = vec![ok(0.7), ok(0.7), ok(0.1)];
        let (ca, cb) = AccuracyCurve::paired(&a, &b, "x").unwrap();
        assert_eq!(ca.mean, Some(0.7));
        assert!((cb.mean.unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(cb.score(1), None);
    }

    #[test]
    fn missing_scorer_falls_back() {
        let client = ScorerClient::new(vec!["/nonexistent/scorer".into()]);
        let pairs = vec![(
            "one two three four five".to_string(),
            "one two three".to_string(),
        )];
        let (scores, name) = score_pairs(Some(&client), &pairs);
        assert_eq!(name, LEXICAL_SCORER);
        assert_eq!(scores.len(), 1);
    }

    proptest! {
        #[test]
        fn lexical_is_symmetric_and_bounded(a in "[a-e ]{0,40}", b in "[a-e ]{0,40}") {
            let ab = lexical_similarity(&a, &b);
            prop_assert!((ab - lexical_similarity(&b, &a)).abs() < 1e-6);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn removal_is_symmetric(flags in prop::collection::vec((any::<bool>(), any::<bool>()), 0..30)) {
            let a: Vec<_> = flags.iter().map(|f| if f.0 { bad() } else { ok(0.5) }).collect();
            let b: Vec<_> = flags.iter().map(|f| if f.1 { bad() } else { ok(0.5) }).collect();
            let (fa, fb, removed) = symmetric_outlier_removal(&a, &b).unwrap();
            prop_assert_eq!(fa.len(), fb.len());
            let union: BTreeSet<usize> = flags.iter().enumerate().filter(|(_, f)| f.0 || f.1).map(|(i, _)| i).collect();
            prop_assert_eq!(removed, union);
        }
    }
}
