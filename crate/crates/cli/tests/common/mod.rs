//! Helpers shared by the CLI suites.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ocp-adaptive"))
}

pub fn run(args: &[&str], out_root: &Path) -> Output {
    bin().args(args).env("OCP_ADAPTIVE_OUT", out_root).output().expect("spawn ocp-adaptive")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// CSV text with every `wall_seconds` column removed; timings are the only
/// run output allowed to differ between identical runs.
pub fn without_timings(text: &str) -> String {
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let keep: Vec<bool> = header.split(',').map(|c| c != "wall_seconds").collect();
    let filter = |line: &str| {
        line.split(',')
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(c, _)| c)
            .collect::<Vec<_>>()
            .join(",")
    };
    std::iter::once(header).chain(lines).map(filter).collect::<Vec<_>>().join("\n")
}

/// Every CSV below `dir`, relative path first, sorted.
pub fn csv_files(dir: &Path) -> Vec<(PathBuf, String)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, String)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else if path.extension().is_some_and(|e| e == "csv") {
                out.push((path.strip_prefix(base).unwrap().to_path_buf(), fs::read_to_string(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Binary checkpoints below `dir`, relative path first, sorted.
pub fn checkpoints(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let stage = entry.unwrap().path();
        if !stage.is_dir() {
            continue;
        }
        for f in fs::read_dir(&stage).unwrap() {
            let path = f.unwrap().path();
            if path.extension().is_some_and(|e| e == "ckpt") {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Tiny staged oracle1d config.
pub fn tiny_config(method: &str, output: &str, seeds: &str, stages: usize) -> String {
    format!(
        r#"problem = "oracle1d"
method = "{method}"
seeds = {seeds}
output = "{output}"

[adaptive]
stages = {stages}
n_r = 64

[dal]
c0 = 1.0
n0 = 4
n_ep = 3
batch_size = 64

[network]
hidden = [8, 8]

[flow]
blocks = 2
layers = 1
hidden = 8
depth = 1

[flow_training]
steps = 5
batch = 64
learning_rate = 1e-3

[eval]
xi = [[]]
resolution = [101]
"#
    )
}
