//! `xbar-prune noise`: accuracy under quantization and weight variation.

use std::path::PathBuf;

use xbar_prune::device::{noise_sweep, Levels};
use xbar_prune::error::{Error, Result};
use xbar_prune::forward::LayerParams;
use xbar_prune::io::{load_network, load_weights};
use xbar_prune::policy::DatasetEvaluator;

use crate::commands::{ensure_out_dir, write_text};
use crate::manifest::ManifestBuilder;
use crate::tensors::{load_activations, load_labels};

#[derive(clap::Args)]
pub struct NoiseArgs {
    /// Network description JSON
    pub net: PathBuf,
    /// Evaluation inputs npy
    #[arg(long = "eval-inputs")]
    pub eval_inputs: PathBuf,
    /// Evaluation labels npy (1-d class indices)
    #[arg(long = "eval-labels")]
    pub eval_labels: PathBuf,
    /// Comma-separated variation sigmas, e.g. 0,0.05,0.1
    #[arg(long, default_value = "0,0.05,0.1,0.2")]
    pub sigmas: String,
    /// Comma-separated quantization level counts, e.g. 16,32,inf
    #[arg(long, default_value = "inf")]
    pub levels: String,
    /// Perturbation draws per grid cell
    #[arg(long, default_value_t = 8)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "out-dir", default_value = "noise-out")]
    pub out_dir: PathBuf,
}

fn parse_sigmas(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Eval(format!("bad sigma `{s}`")))
        })
        .collect()
}

fn parse_levels(text: &str) -> Result<Vec<Levels>> {
    text.split(',').map(|s| s.parse::<Levels>()).collect()
}

pub fn run(args: NoiseArgs) -> Result<()> {
    let spec = load_network(&args.net)?;
    let weights = load_weights(&spec)?;
    let evaluator = DatasetEvaluator {
        inputs: load_activations(&args.eval_inputs)?,
        labels: load_labels(&args.eval_labels)?,
    };
    let sigmas = parse_sigmas(&args.sigmas)?;
    let levels = parse_levels(&args.levels)?;
    let params: Vec<LayerParams> = weights
        .iter()
        .map(|w| LayerParams::dense(w.clone()))
        .collect();

    let result = noise_sweep(
        &spec,
        &params,
        &evaluator,
        &sigmas,
        &levels,
        args.trials,
        args.seed,
    )?;

    ensure_out_dir(&args.out_dir)?;
    let grid_path = args.out_dir.join("noise_grid.csv");
    write_text(&grid_path, &result.to_csv())?;

    let mut manifest = ManifestBuilder::new("noise", args.seed);
    manifest.config(&args.net);
    manifest.config(&args.eval_inputs);
    manifest.config(&args.eval_labels);
    manifest.output(&grid_path);
    manifest.write(&args.out_dir.join("manifest.json"))?;

    print!("{}", result.to_csv());
    Ok(())
}
