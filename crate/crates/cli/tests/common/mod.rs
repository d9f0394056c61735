//! Helpers shared by the command-line integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn segse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segse")).args(args).output().expect("spawn segse")
}

/// Runs `segse`, panicking with its stderr unless it exits 0; returns stdout.
pub fn ok(args: &[&str]) -> String {
    let out = segse(args);
    assert!(
        out.status.success(),
        "segse {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code of a run that is expected to fail.
pub fn code(args: &[&str]) -> i32 {
    let out = segse(args);
    out.status.code().expect("exited normally")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A configuration small enough to train in a second or two.
pub fn tiny_config(dir: &Path, name: &str, kind: &str) -> PathBuf {
    let path = dir.join(format!("{name}.cfg"));
    fs::write(
        &path,
        format!(
            "[network]\nkind = {kind}\nbase_width = 3\n\
             [train]\niterations = 6\nbatch_size = 2\nlr = 1e-3\n\
             [data]\nheight = 16\nwidth = 16\nouter_radius = 5, 7\nmiddle_radius = 3, 4\ninner_radius = 1, 2\n\
             train_count = 6\neval_count = 3\n"
        ),
    )
    .unwrap();
    path
}

/// Generates train and eval sets from `config` under `dir`.
pub fn tiny_data(dir: &Path, config: &Path) -> (PathBuf, PathBuf) {
    let (train, eval) = (dir.join("train"), dir.join("eval"));
    ok(&["gen", "--config", s(config), "--out-dir", s(&train), "--count", "6"]);
    ok(&["gen", "--config", s(config), "--out-dir", s(&eval), "--count", "3", "--start", "6"]);
    (train, eval)
}

/// Trains `config` on `train` into `dir/name`.
pub fn tiny_run(dir: &Path, config: &Path, train: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["train", "--config", s(config), "--data-dir", s(train), "--out-dir", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}
