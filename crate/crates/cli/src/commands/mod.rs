pub mod map;
pub mod noise;
pub mod prune_layer;
pub mod prune_net;

use std::path::Path;

use clap::ValueEnum;
use xbar_prune::error::{Error, Result};
use xbar_prune::io::Grain;
use xbar_prune::pruner::PruneOptions;

#[derive(Clone, Copy, ValueEnum)]
pub enum GrainArg {
    Column,
    Crossbar,
}

impl From<GrainArg> for Grain {
    fn from(g: GrainArg) -> Grain {
        match g {
            GrainArg::Column => Grain::Column,
            GrainArg::Crossbar => Grain::Crossbar,
        }
    }
}

/// Solver settings shared by the pruning subcommands.
#[derive(clap::Args)]
pub struct SolverArgs {
    /// Base RNG seed, expanded per (layer, group, stream)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed gradient step size (default: exact line search)
    #[arg(long)]
    pub eta: Option<f64>,
    /// Solver iterations per output group
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    /// Relaxation factor of the probabilistic projection
    #[arg(long, default_value_t = 1)]
    pub r0: usize,
    /// Spatial points sampled per FM for the solver design
    #[arg(long = "lgd-points", default_value_t = 10)]
    pub lgd_points: usize,
    /// Spatial points sampled per FM for the weight repair
    #[arg(long = "regression-points", default_value_t = 2)]
    pub regression_points: usize,
}

impl SolverArgs {
    pub fn options(&self, grain: GrainArg, ratio: f64, reorder: bool) -> PruneOptions {
        PruneOptions {
            grain: grain.into(),
            ratio,
            r_override: None,
            reorder,
            eta: self.eta,
            iters: self.iters,
            r0: self.r0,
            lgd_points: self.lgd_points,
            regression_points: self.regression_points,
            seed: self.seed,
        }
    }
}

pub fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    write_text(path, &(text + "\n"))
}
