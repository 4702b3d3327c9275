//! CLI surface: exit codes, schedule output, and the benchmark report.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hiergen"))
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bin().args(["schedule-dump", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage") || stderr.contains("usage"), "no usage text: {stderr}");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let out = bin()
        .args([
            "generate",
            "--text",
            "red circle",
            "--coglm",
            "/nonexistent/a.ckpt",
            "--direct-sr",
            "/nonexistent/b.ckpt",
            "--iter-sr",
            "/nonexistent/c.ckpt",
            "--codebook",
            "/nonexistent/cb.bin",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("codebook"), "error should name what failed: {stderr}");
}

#[test]
fn schedule_dump_produces_the_compressed_plan() {
    let out = bin().args(["schedule-dump", "--hw", "60", "60", "--sigma", "6"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["iterations"], 6);
    assert_eq!(json["sigma"], 6);
    let cells = json["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 60);
    let kept: usize = cells
        .iter()
        .flat_map(|row| row.as_array().unwrap())
        .filter(|v| v.as_i64() == Some(-1))
        .count();
    assert_eq!(kept, 900);
}

#[test]
fn schedule_dump_diagonal_has_eleven_groups() {
    let out = bin()
        .args(["schedule-dump", "--hw", "12", "12", "--sigma", "6", "--plan", "diagonal"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["iterations"], 11);
}

#[test]
fn bench_attn_emits_the_report_schema() {
    let out = bin()
        .args(["bench-attn", "--grid", "12", "--window", "5", "--dim", "8", "--reps", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("grid,window,variant,mean_ms,p95_ms,peak_bytes,workers"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("12,5,windowed,"));
    assert!(rows[1].starts_with("12,5,dense,"));
}

#[test]
fn check_grad_passes_on_a_fresh_model() {
    let out = bin().args(["check-grad", "--coords", "40"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max rel err"), "missing report: {stdout}");
}
