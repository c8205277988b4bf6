use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ladder::{filler_segments, whitespace_tokens};
use crate::clamp::{apply_clamp, ClampSpec, Resolution, DEFAULT_CLAMP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendMode {
    /// One resident process serving prompts over JSON lines.
    PersistentSession,
    /// One process launch (and model load) per prompt.
    StatelessCli,
    #[default]
    Mock,
}

impl std::fmt::Display for BackendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendMode::PersistentSession => "persistent-session",
            BackendMode::StatelessCli => "stateless-cli",
            BackendMode::Mock => "mock",
        })
    }
}

/// Programmed cost of the in-process stand-in backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockParams {
    pub load_ms: f64,
    pub per_token_ms: f64,
    pub per_pixel_ns: f64,
    pub clamp: ClampSpec,
    pub output_tokens: u64,
}

impl Default for MockParams {
    fn default() -> Self {
        Self {
            load_ms: 200.0,
            per_token_ms: 2.0,
            per_pixel_ns: 0.0,
            clamp: DEFAULT_CLAMP,
            output_tokens: 32,
        }
    }
}

impl MockParams {
    /// Busy CPU seconds for one request.
    pub fn busy_seconds(&self, tokens_in: u64, resolution: Option<Resolution>) -> f64 {
        let pixels = resolution.map_or(0, |r| apply_clamp(r, self.clamp).pixels());
        (self.load_ms + self.per_token_ms * tokens_in as f64) * 1e-3
            + self.per_pixel_ns * pixels as f64 * 1e-9
    }
}

/// How to reach an inference engine.
///
/// `command` is a program followed by its arguments. The placeholders
/// `{model}`, `{prompt_file}`, `{image}` and `{max_tokens}` are substituted
/// per launch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSpec {
    pub mode: BackendMode,
    pub model: Option<PathBuf>,
    pub command: Vec<String>,
    pub mock: MockParams,
}

pub fn mock_backend(params: MockParams) -> BackendSpec {
    BackendSpec {
        mode: BackendMode::Mock,
        model: None,
        command: Vec::new(),
        mock: params,
    }
}

impl BackendSpec {
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            BackendMode::Mock => {
                let p = &self.mock;
                if [p.load_ms, p.per_token_ms, p.per_pixel_ns]
                    .iter()
                    .any(|v| !(v.is_finite() && *v >= 0.0))
                {
                    return Err(Error::InvalidInput("mock costs must be nonnegative".into()));
                }
            }
            _ if self.command.is_empty() => {
                return Err(Error::InvalidInput(format!(
                    "{} backend needs a command",
                    self.mode
                )));
            }
            _ => {}
        }
        Ok(())
    }

    /// Human-readable model label for metadata.
    pub fn model_label(&self) -> String {
        match (&self.model, self.mode) {
            (Some(p), _) => p.file_name().map_or_else(
                || p.display().to_string(),
                |n| n.to_string_lossy().into_owned(),
            ),
            (None, BackendMode::Mock) => "mock".into(),
            (None, _) => self.command.first().cloned().unwrap_or_default(),
        }
    }

    /// Prepare the backend. Persistent sessions launch (and load) here.
    pub fn open(&self, work_dir: &Path) -> Result<Box<dyn Backend>> {
        self.validate()?;
        std::fs::create_dir_all(work_dir)?;
        Ok(match self.mode {
            BackendMode::Mock => Box::new(MockBackend {
                params: self.mock,
                rounds: 0,
            }),
            BackendMode::StatelessCli => Box::new(StatelessBackend {
                spec: self.clone(),
                work_dir: work_dir.to_path_buf(),
                launches: 0,
            }),
            BackendMode::PersistentSession => Box::new(PersistentBackend::launch(self, work_dir)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub step: usize,
    pub prompt: String,
    pub image: Option<PathBuf>,
    pub resolution: Option<Resolution>,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Backend-reported usage, when the backend prints it.
    pub tokens_in: Option<u64>,
    pub tokens_out: Option<u64>,
}

pub trait Backend: Send {
    fn mode(&self) -> BackendMode;
    fn infer(&mut self, request: &InferenceRequest) -> Result<Completion>;
    /// Engine processes started so far.
    fn launches(&self) -> u64;
    /// Prompt round-trips completed so far.
    fn round_trips(&self) -> u64;
    fn shutdown(&mut self) -> Result<()>;
}

struct MockBackend {
    params: MockParams,
    rounds: u64,
}

fn thread_cpu_seconds() -> f64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: valid clock id and a live out-pointer.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

/// Spin until this thread has consumed `seconds` of CPU time.
fn burn_cpu(seconds: f64) {
    if seconds <= 0.0 {
        return;
    }
    let start = thread_cpu_seconds();
    let mut x: u64 = 0x9E37_79B9_7F4A_7C15;
    while thread_cpu_seconds() - start < seconds {
        for _ in 0..2000 {
            x = x
                .wrapping_mul(6_364_136_223_846_793_005)
                .wrapping_add(1_442_695_040_888_963_407);
        }
        std::hint::black_box(x);
    }
}

impl Backend for MockBackend {
    fn mode(&self) -> BackendMode {
        BackendMode::Mock
    }

    fn infer(&mut self, request: &InferenceRequest) -> Result<Completion> {
        let tokens_in = whitespace_tokens(&request.prompt);
        let resolution = match (request.resolution, &request.image) {
            (Some(r), _) => Some(r),
            (None, Some(path)) => {
                let (w, h) = image::image_dimensions(path)?;
                Some(Resolution::new(w, h)?)
            }
            (None, None) => None,
        };
        burn_cpu(self.params.busy_seconds(tokens_in, resolution));
        self.rounds += 1;
        let out = self
            .params
            .output_tokens
            .min(u64::from(request.max_tokens.max(1)));
        let text = filler_segments(1, out as usize).pop().unwrap_or_default();
        Ok(Completion {
            text,
            tokens_in: Some(tokens_in),
            tokens_out: Some(out),
        })
    }

    fn launches(&self) -> u64 {
        1
    }

    fn round_trips(&self) -> u64 {
        self.rounds
    }

    fn shutdown(&mut self) -> Result<()> {
        Ok(())
    }
}

fn substitute(arg: &str, model: &str, prompt_file: &str, image: &str, max_tokens: u32) -> String {
    arg.replace("{model}", model)
        .replace("{prompt_file}", prompt_file)
        .replace("{image}", image)
        .replace("{max_tokens}", &max_tokens.to_string())
}

fn path_str(p: Option<&Path>) -> String {
    p.map(|p| p.display().to_string()).unwrap_or_default()
}

fn usage_patterns() -> &'static [Regex; 3] {
    static RE: OnceLock<[Regex; 3]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            Regex::new(r"usage:\s*tokens_in=(\d+)\s+tokens_out=(\d+)").unwrap(),
            Regex::new(r"prompt eval time\s*=.*?/\s*(\d+)\s+tokens").unwrap(),
            Regex::new(r"(?:^|[^t]\s)eval time\s*=.*?/\s*(\d+)\s+(?:runs|tokens)").unwrap(),
        ]
    })
}

/// Token usage from backend output.
///
/// Understands a `usage: tokens_in=N tokens_out=M` line and llama.cpp
/// timing lines (`prompt eval time = ... / N tokens`, `eval time = ... / M runs`).
pub fn parse_usage(text: &str) -> (Option<u64>, Option<u64>) {
    let [usage, prompt_eval, eval] = usage_patterns();
    if let Some(c) = usage.captures_iter(text).last() {
        return (c[1].parse().ok(), c[2].parse().ok());
    }
    let mut tin = None;
    let mut tout = None;
    for line in text.lines() {
        if let Some(c) = prompt_eval.captures(line) {
            tin = c[1].parse().ok();
        } else if let Some(c) = eval.captures(line) {
            tout = c[1].parse().ok();
        }
    }
    (tin, tout)
}

fn strip_usage(stdout: &str) -> String {
    let [usage, ..] = usage_patterns();
    stdout
        .lines()
        .filter(|l| !usage.is_match(l))
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}

struct StatelessBackend {
    spec: BackendSpec,
    work_dir: PathBuf,
    launches: u64,
}

impl Backend for StatelessBackend {
    fn mode(&self) -> BackendMode {
        BackendMode::StatelessCli
    }

    fn infer(&mut self, request: &InferenceRequest) -> Result<Completion> {
        let prompt_dir = self.work_dir.join("prompts");
        std::fs::create_dir_all(&prompt_dir)?;
        let prompt_file = prompt_dir.join(format!("step_{:03}.txt", request.step + 1));
        std::fs::write(&prompt_file, &request.prompt)?;
        let model = path_str(self.spec.model.as_deref());
        let image = path_str(request.image.as_deref());
        let prompt_file = prompt_file.display().to_string();
        let args: Vec<String> = self
            .spec
            .command
            .iter()
            .map(|a| substitute(a, &model, &prompt_file, &image, request.max_tokens))
            .collect();
        self.launches += 1;
        let output = Command::new(&args[0])
            .args(&args[1..])
            .stdin(Stdio::null())
            .output()
            .map_err(|e| Error::Backend {
                message: format!("cannot launch {}: {e}", args[0]),
                stderr: String::new(),
            })?;
        let stdout = String::from_utf8_lossy(&output.stdout);
        let stderr = String::from_utf8_lossy(&output.stderr);
        if !output.status.success() {
            return Err(Error::Backend {
                message: format!("{} exited with {}", args[0], output.status),
                stderr: stderr.into_owned(),
            });
        }
        let (mut tin, mut tout) = parse_usage(&stdout);
        if tin.is_none() && tout.is_none() {
            (tin, tout) = parse_usage(&stderr);
        }
        Ok(Completion {
            text: strip_usage(&stdout),
            tokens_in: tin,
            tokens_out: tout,
        })
    }

    fn launches(&self) -> u64 {
        self.launches
    }

    fn round_trips(&self) -> u64 {
        self.launches
    }

    fn shutdown(&mut self) -> Result<()> {
        Ok(())
    }
}

#[derive(Serialize)]
struct SessionRequest<'a> {
    step: usize,
    prompt: &'a str,
    image: Option<&'a Path>,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct SessionResponse {
    #[serde(default)]
    text: String,
    tokens_in: Option<u64>,
    tokens_out: Option<u64>,
    error: Option<String>,
}

struct PersistentBackend {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    stderr_log: PathBuf,
    rounds: u64,
}

impl PersistentBackend {
    fn launch(spec: &BackendSpec, work_dir: &Path) -> Result<Self> {
        let model = path_str(spec.model.as_deref());
        let args: Vec<String> = spec
            .command
            .iter()
            .map(|a| substitute(a, &model, "", "", 0))
            .collect();
        let stderr_log = work_dir.join("backend_stderr.log");
        let mut child = Command::new(&args[0])
            .args(&args[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(File::create(&stderr_log)?)
            .spawn()
            .map_err(|e| Error::Backend {
                message: format!("cannot launch {}: {e}", args[0]),
                stderr: String::new(),
            })?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(Self {
            child,
            stdin,
            stdout,
            stderr_log,
            rounds: 0,
        })
    }

    fn failure(&self, message: String) -> Error {
        Error::Backend {
            message,
            stderr: std::fs::read_to_string(&self.stderr_log).unwrap_or_default(),
        }
    }
}

impl Backend for PersistentBackend {
    fn mode(&self) -> BackendMode {
        BackendMode::PersistentSession
    }

    fn infer(&mut self, request: &InferenceRequest) -> Result<Completion> {
        let line = serde_json::to_string(&SessionRequest {
            step: request.step,
            prompt: &request.prompt,
            image: request.image.as_deref(),
            max_tokens: request.max_tokens,
        })?;
        let Some(stdin) = self.stdin.as_mut() else {
            return Err(Error::State("session already shut down".into()));
        };
        if let Err(e) = writeln!(stdin, "{line}").and_then(|_| stdin.flush()) {
            return Err(self.failure(format!("session closed its input: {e}")));
        }
        let mut reply = String::new();
        if self.stdout.read_line(&mut reply)? == 0 {
            return Err(self.failure("session exited before replying".into()));
        }
        let resp: SessionResponse = serde_json::from_str(reply.trim())
            .map_err(|e| self.failure(format!("malformed session reply: {e}")))?;
        if let Some(err) = resp.error {
            return Err(self.failure(err));
        }
        self.rounds += 1;
        Ok(Completion {
            text: resp.text,
            tokens_in: resp.tokens_in,
            tokens_out: resp.tokens_out,
        })
    }

    fn launches(&self) -> u64 {
        1
    }

    fn round_trips(&self) -> u64 {
        self.rounds
    }

    fn shutdown(&mut self) -> Result<()> {
        // closing stdin asks the session to exit
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_secs(5);
        while Instant::now() < deadline {
            if self.child.try_wait()?.is_some() {
                return Ok(());
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        log::warn!("backend session did not exit, killing it");
        self.child.kill()?;
        self.child.wait()?;
        Ok(())
    }
}

impl Drop for PersistentBackend {
    fn drop(&mut self) {
        if self.stdin.is_some() {
            let _ = self.shutdown();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_line() {
        let out = "An answer.\nusage: tokens_in=42 tokens_out=7\n";
        assert_eq!(parse_usage(out), (Some(42), Some(7)));
        assert_eq!(strip_usage(out), "An answer.");
    }

    #[test]
    fn llama_timing_lines() {
        let err = "llama_perf_context_print: prompt eval time =     812.44 ms /    57 tokens (   14.25 ms per token)\n\
                   llama_perf_context_print:        eval time =    2201.10 ms /    31 runs   (   71.00 ms per token)\n";
        assert_eq!(parse_usage(err), (Some(57), Some(31)));
    }

    #[test]
    fn no_usage() {
        assert_eq!(parse_usage("just text"), (None, None));
    }

    #[test]
    fn placeholders() {
        let s = substitute(
            "-m={model} -f {prompt_file} --image {image} -n {max_tokens}",
            "m.gguf",
            "p.txt",
            "i.png",
            64,
        );
        assert_eq!(s, "-m=m.gguf -f p.txt --image i.png -n 64");
    }

    #[test]
    fn mock_busy_time_follows_clamp() {
        let p = MockParams {
            load_ms: 0.0,
            per_token_ms: 0.0,
            per_pixel_ns: 100.0,
            clamp: ClampSpec::new(1024, 720).unwrap(),
            output_tokens: 4,
        };
        let a = p.busy_seconds(0, Some(Resolution::new(2048, 1440).unwrap()));
        let b = p.busy_seconds(0, Some(Resolution::new(4096, 2880).unwrap()));
        assert_eq!(a, b);
        assert!((a - 737_280.0 * 100e-9).abs() < 1e-12);
    }

    #[test]
    fn mock_burns_thread_cpu() {
        let spec = mock_backend(MockParams {
            load_ms: 50.0,
            per_token_ms: 0.0,
            per_pixel_ns: 0.0,
            ..MockParams::default()
        });
        let dir = tempfile::tempdir().unwrap();
        let mut b = spec.open(dir.path()).unwrap();
        let before = thread_cpu_seconds();
        let c = b
            .infer(&InferenceRequest {
                step: 0,
                prompt: "a b c".into(),
                image: None,
                resolution: None,
                max_tokens: 8,
            })
            .unwrap();
        assert!(thread_cpu_seconds() - before >= 0.05);
        assert_eq!(c.tokens_in, Some(3));
        assert_eq!(c.tokens_out, Some(8));
        assert_eq!(b.round_trips(), 1);
    }

    #[test]
    fn non_mock_needs_command() {
        let spec = BackendSpec {
            mode: BackendMode::StatelessCli,
            ..BackendSpec::default()
        };
        assert!(matches!(spec.validate(), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn missing_program_is_backend_error() {
        let spec = BackendSpec {
            mode: BackendMode::PersistentSession,
            command: vec!["/nonexistent/engine-binary".into()],
            ..BackendSpec::default()
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(spec.open(dir.path()), Err(Error::Backend { .. })));
    }
}
