#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn vimo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vimo"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("VIMO_DATA_ROOT")
        .output()
        .expect("vimo binary runs")
}

/// Runs `vimo` and panics with its stderr on failure.
pub fn vimo_ok(args: &[&str]) {
    let out = vimo(args);
    assert!(
        out.status.success(),
        "vimo {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// The JSON error object `vimo` prints on failure.
pub fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON in {text}"));
    serde_json::from_str(line).unwrap()
}

pub fn write_config(dir: &Path, name: &str, doc: Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    p
}

/// sha256 of every file under `root`, keyed by relative path.
pub fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.is_file() {
            let rel = dir.strip_prefix(root).unwrap_or(&dir).to_string_lossy().into_owned();
            out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&dir).unwrap())));
            continue;
        }
        for e in std::fs::read_dir(&dir).unwrap() {
            stack.push(e.unwrap().path());
        }
    }
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
