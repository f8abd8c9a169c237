#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use sha2::{Digest, Sha256};
use shapefda::io::Table;

/// Exit code, stdout and stderr of one `shapefda` invocation.
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn shapefda<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_shapefda")).args(args).output().expect("binary runs");
    Outcome {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Runs `shapefda` and panics with its stderr unless it exits 0.
pub fn ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Outcome {
    let o = shapefda(args);
    assert_eq!(o.code, 0, "stderr: {}", o.stderr);
    o
}

pub fn arg(p: &Path) -> String {
    p.display().to_string()
}

/// Simulates one replicate into `dir` and returns the file path.
pub fn simulate_one(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["simulate".to_string(), "--out".into(), arg(dir), "--set".into(), "n_reps=1".into()];
    for e in extra {
        args.push("--set".into());
        args.push(e.to_string());
    }
    ok(&args);
    dir.join("replicate_001.csv")
}

/// The 41-specimen, 48-landmark, four-label stand-in for a field dataset.
pub fn stand_in(dir: &Path) -> PathBuf {
    simulate_one(dir, &["group_sizes=10,10,11,10", "n_landmarks=48", "seed=7"])
}

pub fn read_table(path: &Path) -> Table {
    Table::read(fs::File::open(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

/// SHA-256 of every file below `root`, keyed by relative path.
pub fn digests(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let hash = Sha256::digest(fs::read(&path).unwrap());
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, hash.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    out
}

pub fn column_f64(t: &Table, name: &str) -> Vec<f64> {
    let j = t.column(name).unwrap_or_else(|| panic!("no column {name}"));
    t.rows.iter().map(|r| r[j].parse().unwrap()).collect()
}
