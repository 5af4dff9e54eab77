//! Generate a small demo bundle (network JSON, weights, calibration and
//! evaluation tensors) that every subcommand can run against:
//!
//! ```text
//! cargo run -p xbar-prune-cli --example make_demo -- demo
//! xbar-prune map demo/net.json --out demo/layout.json
//! ```

use std::path::PathBuf;

use xbar_prune::synth::{two_class_task_with_noise, write_task_files};

fn main() {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "demo".into());
    // enough input noise that pruning and device variation show up
    let task = two_class_task_with_noise(42, 32, 256, 4.0);
    write_task_files(&task, &dir).expect("demo bundle written");
    println!("wrote demo bundle to {}", dir.display());
}
