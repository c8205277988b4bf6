//! Structured run configuration. Every field can be overridden by a flag.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use edgeprof_core::windowing::DetectParams;
use edgeprof_core::{BackendSpec, ClampSpec, Resolution, Scope};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub artifact_root: Option<PathBuf>,
    pub sampler: SamplerSection,
    pub backend: BackendSpec,
    pub sweep: SweepSection,
    pub detect: DetectParams,
    /// Scorer command line, program first.
    pub scorer: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub rate_hz: Option<f64>,
    pub scope: Option<String>,
    pub energy_source: Option<PathBuf>,
    pub device: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Ladder,
    Resolution,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub kind: Option<Kind>,
    pub steps: Option<usize>,
    pub segments_file: Option<PathBuf>,
    pub words_per_segment: Option<usize>,
    pub image: Option<PathBuf>,
    pub source: Option<Resolution>,
    pub min_width: Option<u32>,
    pub clamp: Option<ClampSpec>,
    pub prompt_template_file: Option<PathBuf>,
    pub settle_s: Option<f64>,
    pub max_tokens: Option<u32>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// `system`, `self` or `pid:<n>`.
pub fn parse_scope(s: &str) -> Result<Scope> {
    match s {
        "system" => Ok(Scope::System),
        "self" => Ok(Scope::ProcessTree {
            pid: std::process::id(),
        }),
        _ => match s.strip_prefix("pid:").map(str::parse) {
            Some(Ok(pid)) => Ok(Scope::ProcessTree { pid }),
            _ => bail!("scope must be system, self or pid:<n>, got {s:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_parses() {
        let cfg: Config = toml::from_str(
            r#"
            artifact_root = "out"
            scorer = ["python3", "scorer.py"]
            [sampler]
            rate_hz = 10
            scope = "system"
            [backend]
            mode = "stateless-cli"
            model = "models/m.gguf"
            command = ["llama-cli", "-m", "{model}", "-f", "{prompt_file}"]
            [backend.mock]
            per_token_ms = 3.0
            clamp = "854x594"
            [sweep]
            kind = "resolution"
            steps = 20
            source = "2048x1440"
            clamp = "1024x720"
            [detect]
            min_gap_s = 1.5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.sampler.rate_hz, Some(10.0));
        assert_eq!(cfg.backend.command.len(), 5);
        assert_eq!(cfg.backend.mock.clamp, ClampSpec::new(854, 594).unwrap());
        assert_eq!(cfg.sweep.kind, Some(Kind::Resolution));
        assert_eq!(cfg.detect.min_gap_s, 1.5);
        assert_eq!(cfg.detect.smooth_span, DetectParams::default().smooth_span);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<Config>("[sweep]\nstepz = 3\n").is_err());
    }

    #[test]
    fn scopes() {
        assert_eq!(parse_scope("system").unwrap(), Scope::System);
        assert_eq!(
            parse_scope("pid:42").unwrap(),
            Scope::ProcessTree { pid: 42 }
        );
        assert!(parse_scope("pid:x").is_err());
    }
}
