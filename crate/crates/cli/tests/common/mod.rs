//! Shared helpers for driving the binary in tests.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use xbar_prune::io::{save_tensor, TensorFile};
use xbar_prune::synth::{two_class_task, write_task_files};

#[allow(dead_code)]
pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_xbar-prune")
}

pub fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

#[allow(dead_code)]
pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The 12x4-crossbar worked example: one 4->4 conv layer, 2x3 inputs.
#[allow(dead_code)]
pub fn write_worked_example(dir: &Path) -> PathBuf {
    let weights =
        TensorFile::f64(vec![2, 2, 4, 4], (0..64).map(|i| i as f64 * 0.01).collect()).unwrap();
    save_tensor(&weights, dir.join("conv1.npy")).unwrap();
    let spec = r#"{
        "crossbar": { "rows": 12, "cols": 4 },
        "input": { "h": 2, "w": 3 },
        "layers": [
            { "name": "conv1", "kind": "conv", "P": 4, "Q": 4,
              "kernel": [2, 2], "stride": 1, "padding": 0,
              "K_in": 2, "K_out": 2, "weights": "conv1.npy",
              "non_compute_overhead": 0, "activation": "none" }
        ]
    }"#;
    let path = dir.join("net.json");
    std::fs::write(&path, spec).unwrap();
    path
}

/// A runnable four-layer demo bundle with calibration and eval tensors.
pub fn write_demo(dir: &Path) -> PathBuf {
    let task = two_class_task(42, 16, 96);
    write_task_files(&task, dir).unwrap();
    dir.join("net.json")
}
