use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn amtgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amtgen"))
        .args(args)
        .env_remove("AMTGEN_BACKEND")
        .env_remove("AMTGEN_REMOTE_URL")
        .output()
        .unwrap()
}

fn error_kind(out: &Output) -> String {
    // Log lines may precede it; the error object is the last stderr line.
    let text = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    v["error"].as_str().unwrap().to_string()
}

fn core_fixture(name: &str) -> String {
    root().join("crates/core/tests/fixtures").join(name).display().to_string()
}

#[test]
fn select_before_generate_is_missing_upstream() {
    let dir = tempfile::tempdir().unwrap();
    let out = amtgen(&["--stage-dir", dir.path().to_str().unwrap(), "select"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_kind(&out), "MissingUpstream");
}

#[test]
fn bad_config_is_config_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    let out = amtgen(&["--config", cfg.to_str().unwrap(), "config"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "ConfigInvalid");
    let out = amtgen(&["--backends", "gpu", "config"]);
    assert_eq!(error_kind(&out), "ConfigInvalid");
}

#[test]
fn unreachable_remote_is_backend_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("remote.toml");
    std::fs::write(&cfg, "[remote]\nmax_retries = 0\ntimeout_secs = 1\n").unwrap();
    let d = dir.path().to_str().unwrap();
    let out = amtgen(&[
        "--config",
        cfg.to_str().unwrap(),
        "--backends",
        "remote:http://127.0.0.1:9",
        "--stage-dir",
        d,
        "curate",
        "--records",
        &core_fixture("seeds_raw.jsonl"),
    ]);
    assert_eq!(error_kind(&out), "BackendUnavailable", "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn generate_is_deterministic() {
    let run = |dir: &Path| {
        let d = dir.to_str().unwrap();
        let cfg = core_fixture("run.toml");
        let out = amtgen(&["--config", &cfg, "--stage-dir", d, "--seed", "5", "curate", "--records", &core_fixture("seeds_raw.jsonl")]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let out = amtgen(&["--config", &cfg, "--stage-dir", d, "--seed", "5", "--parallelism", "3", "generate"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["status"], "ran");
        std::fs::read(dir.join("instances.jsonl")).unwrap()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let x = run(a.path());
    assert!(!x.is_empty());
    assert_eq!(x, run(b.path()));
}

/// Expands the count fixture into prediction rows: in each (model, tier)
/// cell the first `hits` families are answered hateful.
pub fn moderator_predictions(counts: &str) -> String {
    let tiers = ["hard", "soft_base", "soft_gv", "soft_hv"];
    let mut out = String::new();
    for line in counts.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let total: usize = f[2].parse().unwrap();
        for (k, tier) in tiers.iter().enumerate() {
            let hits: usize = f[3 + k].parse().unwrap();
            for i in 0..total {
                let label = if i < hits { "hateful" } else { "safe" };
                let row = serde_json::json!({
                    "family_id": format!("f{i:04}"),
                    "tier": tier,
                    "model_id": f[0],
                    "raw_response": format!("{{\"prediction\": \"{label}\"}}"),
                });
                out.push_str(&row.to_string());
                out.push('\n');
            }
        }
    }
    out
}

fn csv_rows(text: &str) -> HashMap<String, HashMap<String, String>> {
    let mut lines = text.lines().map(|l| {
        // Model names in the fixture contain no commas.
        l.split(',').map(str::to_string).collect::<Vec<_>>()
    });
    let header = lines.next().unwrap();
    lines
        .map(|cells| (cells[0].clone(), header.iter().cloned().zip(cells).collect()))
        .collect()
}

#[test]
fn report_reproduces_moderator_fixture_means() {
    let dir = tempfile::tempdir().unwrap();
    let counts = std::fs::read_to_string(root().join("fixtures/moderator_counts.csv")).unwrap();
    let preds = dir.path().join("moderator_predictions.jsonl");
    std::fs::write(&preds, moderator_predictions(&counts)).unwrap();
    let cfg = root().join("fixtures/moderators.toml");
    let out = amtgen(&[
        "--config",
        cfg.to_str().unwrap(),
        "--stage-dir",
        dir.path().to_str().unwrap(),
        "report",
        "--predictions",
        preds.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let got = csv_rows(&std::fs::read_to_string(dir.path().join("report_tiers.csv")).unwrap());
    let want = csv_rows(&std::fs::read_to_string(root().join("fixtures/moderator_expected.csv")).unwrap());
    assert_eq!(got.len(), want.len());
    for (row, cols) in &want {
        for (col, v) in cols {
            if col == "row" {
                continue;
            }
            let g: f64 = got[row][col].parse().unwrap();
            let w: f64 = v.parse().unwrap();
            assert!((g - w).abs() <= 0.005 + 1e-9, "{row}/{col}: {g} vs {w}");
        }
    }
}
