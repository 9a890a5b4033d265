#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emoseg_cli::RunConfig;

/// 32×32 scenes and an 8-channel model; fast enough for per-test training.
pub fn tiny_config() -> RunConfig {
    let text = "\
model.channels=8
scene.height=32
scene.width=32
scene.object_min=6
scene.object_max=14
steps=6
batch_size=2
log_every=1
test_fraction=0.4
";
    RunConfig::from_text(text).unwrap()
}

pub fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("config.txt");
    std::fs::write(&path, cfg.to_text()).unwrap();
    path
}

/// Every regular file under `root`, keyed by relative path.
pub fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn emoseg(args: &[&str]) -> Output {
    emoseg_env(args, &[])
}

pub fn emoseg_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_emoseg"));
    cmd.args(args).env_remove("EMOSEG_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}
