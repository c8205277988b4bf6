use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative prompts: prompt `i` is segments `0..=i` joined by blank lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLadder {
    pub segments: Vec<String>,
    pub prompts: Vec<String>,
    /// Whitespace estimates until a backend reports real counts.
    pub token_counts: Vec<u64>,
}

const SEPARATOR: &str = "\n\n";

pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

pub fn build_prompt_ladder<S: AsRef<str>>(segments: &[S]) -> Result<PromptLadder> {
    if segments.is_empty() {
        return Err(Error::InvalidInput(
            "prompt ladder needs at least one segment".into(),
        ));
    }
    if let Some(i) = segments.iter().position(|s| s.as_ref().trim().is_empty()) {
        return Err(Error::InvalidInput(format!("segment {i} is empty")));
    }
    let segments: Vec<String> = segments
        .iter()
        .map(|s| s.as_ref().trim().to_string())
        .collect();
    let mut prompts = Vec::with_capacity(segments.len());
    let mut acc = String::new();
    for seg in &segments {
        if !acc.is_empty() {
            acc.push_str(SEPARATOR);
        }
        acc.push_str(seg);
        prompts.push(acc.clone());
    }
    let token_counts = prompts.iter().map(|p| whitespace_tokens(p)).collect();
    Ok(PromptLadder {
        segments,
        prompts,
        token_counts,
    })
}

impl PromptLadder {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn prompt_id(i: usize) -> String {
        format!("P{}", i + 1)
    }

    /// Replace the estimate for step `i` with a backend-reported count.
    pub fn record_backend_count(&mut self, i: usize, tokens: u64) {
        if let Some(slot) = self.token_counts.get_mut(i) {
            *slot = tokens;
        }
    }

    /// Split a text file into segments on blank lines.
    pub fn segments_from_text(text: &str) -> Vec<String> {
        text.split("\n\n")
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }
}

const FILLER: &[&str] = &[
    "traffic",
    "signal",
    "queue",
    "vehicle",
    "lane",
    "merge",
    "pedestrian",
    "crossing",
    "cyclist",
    "junction",
    "priority",
    "speed",
    "distance",
    "warning",
    "parking",
    "bus",
    "stop",
    "route",
    "camera",
    "weather",
    "visibility",
    "detour",
    "schedule",
    "delay",
];

/// Deterministic filler text: `count` segments of `words_per_segment` words.
pub fn filler_segments(count: usize, words_per_segment: usize) -> Vec<String> {
    (0..count)
        .map(|s| {
            (0..words_per_segment)
                .map(|w| FILLER[(s * 7 + w * 5 + w / FILLER.len()) % FILLER.len()])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nineteen_cumulative_prompts() {
        let segs = filler_segments(19, 12);
        let ladder = build_prompt_ladder(&segs).unwrap();
        assert_eq!(ladder.len(), 19);
        for i in 1..19 {
            assert!(ladder.prompts[i].starts_with(&ladder.prompts[i - 1]));
            for seg in &segs[..=i] {
                assert!(ladder.prompts[i].contains(seg.as_str()));
            }
        }
    }

    #[test]
    fn single_segment() {
        let ladder = build_prompt_ladder(&["only this"]).unwrap();
        assert_eq!(ladder.prompts, vec!["only this".to_string()]);
        assert_eq!(PromptLadder::prompt_id(0), "P1");
    }

    #[test]
    fn ten_word_segments_count_by_ten() {
        let ladder = build_prompt_ladder(&filler_segments(5, 10)).unwrap();
        assert_eq!(ladder.token_counts, vec![10, 20, 30, 40, 50]);
    }

    #[test]
    fn empty_inputs_rejected() {
        let none: [&str; 0] = [];
        assert!(build_prompt_ladder(&none).is_err());
        assert!(build_prompt_ladder(&["a", "  "]).is_err());
    }

    #[test]
    fn segments_split_on_blank_lines() {
        let segs =
            PromptLadder::segments_from_text("first part\nstill first\n\nsecond\n\n\nthird\n");
        assert_eq!(segs, vec!["first part\nstill first", "second", "third"]);
    }

    #[test]
    fn construction_is_deterministic() {
        let a = build_prompt_ladder(&filler_segments(8, 30)).unwrap();
        let b = build_prompt_ladder(&filler_segments(8, 30)).unwrap();
        assert_eq!(a, b);
    }
}
