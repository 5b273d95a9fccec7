#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cascade_screen_cli::RunConfig;
use sha2::{Digest, Sha256};

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_cascade-screen"))
}

/// The bundled demo config at `configs/demo.json`.
pub fn demo_config() -> RunConfig {
    serde_json::from_str(include_str!("../../../../configs/demo.json")).expect("demo config parses")
}

/// A 40-patient corpus with a much smaller classifier, for exercising the CLI.
pub fn quick_config() -> RunConfig {
    let mut cfg = demo_config();
    cfg.corpus.n_patients = 40;
    cfg.train.patch_size = 32;
    cfg.train.max_epochs = 8;
    cfg.train.hidden_units = 256;
    cfg
}

pub fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    path
}

pub fn run(args: &[&str], run_dir: &Path) -> Output {
    Command::new(bin()).args(args).arg("--run-dir").arg(run_dir).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// sha256 of every file under `root`, keyed by relative path.
pub fn tree_digest(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&p).unwrap())));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
