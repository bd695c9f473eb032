//! Runs the configured suites and writes artifacts plus `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::suites::{Artifact, CheckOutcome, Runner};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Passed,
    Failed,
    Error,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Passed => 0,
            RunStatus::Failed => 2,
            RunStatus::Error => 1,
        }
    }
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct CheckEntry {
    name: &'static str,
    passed: bool,
    summary: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    config_sha256: &'a str,
    scenario: &'static str,
    seeds: &'a [u64],
    etas: &'a [f64],
    t_anchors: &'a [f64],
    versions: Versions,
    checks: Vec<CheckEntry>,
    files: Vec<FileEntry>,
}

#[derive(Serialize)]
struct Versions {
    #[serde(rename = "nrds-cli")]
    cli: &'static str,
    #[serde(rename = "nrds-core")]
    core: &'static str,
}

fn write_artifact(root: &Path, art: &Artifact, files: &mut Vec<FileEntry>) -> std::io::Result<()> {
    let path: PathBuf = root.join(&art.path);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&path, &art.bytes)?;
    files.push(FileEntry { path: art.path.clone(), sha256: hex::encode(Sha256::digest(&art.bytes)), bytes: art.bytes.len() });
    Ok(())
}

/// Runs every configured suite in dependency order, printing one line per
/// suite to stdout, and writes the manifest even when a suite errors out.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::io::Result<RunStatus> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut files = Vec::new();
    let mut checks = Vec::new();
    let mut error = None;
    let mut all_passed = true;
    match Runner::new(cfg) {
        Err(e) => error = Some(e.to_string()),
        Ok(mut runner) => {
            for &check in &cfg.checks {
                match runner.run(check) {
                    Ok(CheckOutcome { check, passed, summary, artifacts }) => {
                        println!("[{}] {}", if passed { "PASS" } else { "FAIL" }, check.name());
                        for line in &summary {
                            println!("    {line}");
                        }
                        for art in &artifacts {
                            write_artifact(&cfg.out_dir, art, &mut files)?;
                        }
                        all_passed &= passed;
                        checks.push(CheckEntry { name: check.name(), passed, summary });
                    }
                    Err(e) => {
                        println!("[ERROR] {}: {e}", check.name());
                        error = Some(format!("{}: {e}", check.name()));
                        break;
                    }
                }
            }
        }
    }
    let status = match (&error, all_passed) {
        (Some(_), _) => RunStatus::Error,
        (None, true) => RunStatus::Passed,
        (None, false) => RunStatus::Failed,
    };
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        status: if status == RunStatus::Passed { "PASSED" } else { "FAILED" },
        error,
        config_sha256: &cfg.hash,
        scenario: cfg.scenario.name(),
        seeds: &cfg.seeds,
        etas: &cfg.etas,
        t_anchors: &cfg.t_anchors,
        versions: Versions { cli: env!("CARGO_PKG_VERSION"), core: nrds_core::VERSION },
        checks,
        files,
    };
    let js = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
    fs::write(cfg.out_dir.join("manifest.json"), js)?;
    Ok(status)
}
