use std::path::Path;
use std::process::{Command, Output};

fn edgeprof(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgeprof"))
        .args(args)
        .env_remove("EDGEPROF_CONFIG")
        .env_remove("EDGEPROF_ARTIFACT_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn no_arguments_prints_usage() {
    let o = edgeprof(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(edgeprof(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn fit_recovers_a_line() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("pts.csv");
    let body: String = (1..=19)
        .map(|i| format!("{},{}\n", i * 100, 0.059 * (i * 100) as f64 + 120.0))
        .collect();
    std::fs::write(&csv, format!("tokens,cpu_auc\n{body}")).unwrap();
    let o = edgeprof(&["fit", "--input", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!((value(&text, "a") - 0.059).abs() < 1e-9);
    assert!((value(&text, "b") - 120.0).abs() < 1e-6);
    assert_eq!(value(&text, "n"), 19.0);
}

#[test]
fn knee_reports_the_clamp_hint() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("pts.csv");
    let body: String = (0..20)
        .map(|i| {
            let w = 256 + i * 94;
            let px = w as u64 * (w as u64 * 720 / 1024);
            format!("{px},{}\n", 50.0 + 1e-4 * px.min(737_280) as f64)
        })
        .collect();
    std::fs::write(&csv, body).unwrap();
    let o = edgeprof(&[
        "knee",
        "--input",
        csv.to_str().unwrap(),
        "--clamp",
        "1024x720",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(value(&text, "hint_pixels"), 737_280.0);
    assert!(value(&text, "hint_discrepancy_steps") <= 1.0);
}

#[test]
fn ladder_lists_growing_prompts() {
    let o = edgeprof(&["ladder", "--steps", "4", "--words", "10"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().last().unwrap().starts_with("P4\t"));
}

#[test]
fn missing_config_fails_cleanly() {
    let o = edgeprof(&["--config", "/nonexistent/edgeprof.toml", "ladder"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn mock_sweep_then_analyze_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_str().unwrap();
    let o = edgeprof(&[
        "sweep",
        "--backend",
        "mock",
        "--steps",
        "4",
        "--words",
        "50",
        "--load-ms",
        "600",
        "--per-token-ms",
        "4",
        "--settle-s",
        "1.5",
        "--scope",
        "self",
        "--artifact-root",
        root,
        "--run-id",
        "cli",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("4 records, 0 flagged, 1 backend launch"));
    let run = tmp.path().join("cli");
    assert_eq!(lines(&run.join("records.jsonl")), 4);

    let o = edgeprof(&["analyze", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with('P')).count(), 4);

    let out = tmp.path().join("report");
    let o = edgeprof(&[
        "report",
        run.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--provenance",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&out.join("energy_table.csv")), 2);
    assert!(out.join("auc_vs_tokens.svg").exists());
    assert!(stdout(&o).contains("<-"));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let o = edgeprof(&["--config", path.to_str().unwrap(), "ladder", "--steps", "2"]);
        assert!(
            o.status.success(),
            "{}: {}",
            path.display(),
            String::from_utf8_lossy(&o.stderr)
        );
    }
}
