//! `xbar-prune prune-layer`: single-layer pruning with weight repair.

use std::path::PathBuf;

use serde::Serialize;
use xbar_prune::error::{Error, Result};
use xbar_prune::forward::{activations_at, LayerParams};
use xbar_prune::io::{array_to_tensor, load_network, load_weights, save_masks, save_tensor};
use xbar_prune::mapper::{dense_baseline, pruned_layout};
use xbar_prune::pruner::prune_layer;

use crate::commands::{ensure_out_dir, write_json, GrainArg, SolverArgs};
use crate::manifest::ManifestBuilder;
use crate::tensors::load_activations;

#[derive(clap::Args)]
pub struct PruneLayerArgs {
    /// Network description JSON
    pub net: PathBuf,
    /// Name of the layer to prune
    #[arg(long)]
    pub layer: String,
    /// Fraction of input FM groups to remove (0 to 1)
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, value_enum, default_value = "column")]
    pub grain: GrainArg,
    /// Reorder input FMs by importance before grouping
    #[arg(long)]
    pub reorder: bool,
    /// Calibration activations, [N, H, W, P] npy at the network input
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long = "out-dir", default_value = "prune-layer-out")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Serialize)]
struct LossReport {
    layer: String,
    ratio: f64,
    r_per_group: usize,
    loss_before: f64,
    loss_after: f64,
    ridge_fallback: bool,
    dense_compute_crossbars: usize,
    pruned_compute_crossbars: usize,
}

pub fn run(args: PruneLayerArgs) -> Result<()> {
    let spec = load_network(&args.net)?;
    let weights = load_weights(&spec)?;
    let idx = spec
        .layers
        .iter()
        .position(|l| l.name == args.layer)
        .ok_or_else(|| Error::validation(&args.layer, "name", "no such layer in the network"))?;
    let layer = &spec.layers[idx];
    let geom = spec.geometry()?;

    let inputs = load_activations(&args.calib)?;
    let params: Vec<LayerParams> = weights
        .iter()
        .map(|w| LayerParams::dense(w.clone()))
        .collect();
    let layer_inputs = activations_at(&spec, &params, inputs.view(), idx)?;

    let opts = args.solver.options(args.grain, args.ratio, args.reorder);
    let result = prune_layer(layer, weights[idx].view(), layer_inputs.view(), &opts)?;

    let dense = dense_baseline(
        layer,
        &geom[idx],
        opts.grain,
        spec.crossbar_rows,
        spec.crossbar_cols,
    )?;
    let pruned = pruned_layout(
        layer,
        &geom[idx],
        opts.grain,
        &result.masks,
        spec.crossbar_rows,
        spec.crossbar_cols,
    )?;

    ensure_out_dir(&args.out_dir)?;
    let masks_path = args.out_dir.join("masks.json");
    let weights_path = args.out_dir.join("weights.npy");
    let loss_path = args.out_dir.join("loss.json");
    save_masks(&result.to_mask_file(layer), &masks_path)?;
    save_tensor(&array_to_tensor(&result.repaired_weights), &weights_path)?;
    write_json(
        &loss_path,
        &LossReport {
            layer: layer.name.clone(),
            ratio: args.ratio,
            r_per_group: result.r_per_group,
            loss_before: result.loss_before,
            loss_after: result.loss_after,
            ridge_fallback: result.ridge_fallback,
            dense_compute_crossbars: dense.compute_count,
            pruned_compute_crossbars: pruned.compute_count,
        },
    )?;

    let mut manifest = ManifestBuilder::new("prune-layer", args.solver.seed);
    manifest.config(&args.net);
    manifest.config(&args.calib);
    manifest.output(&masks_path);
    manifest.output(&weights_path);
    manifest.output(&loss_path);
    manifest.write(&args.out_dir.join("manifest.json"))?;

    println!(
        "pruned `{}` at ratio {}: r={}, loss {:.6} -> {:.6}, compute {} -> {}",
        layer.name,
        args.ratio,
        result.r_per_group,
        result.loss_before,
        result.loss_after,
        dense.compute_count,
        pruned.compute_count
    );
    Ok(())
}
