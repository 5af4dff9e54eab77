//! `xbar-prune prune-net`: sensitivity sweeps, the three stop
//! conditions, and sequential whole-network pruning.

use std::path::PathBuf;

use clap::ValueEnum;
use serde::Serialize;
use xbar_prune::error::{Error, Result};
use xbar_prune::forward::LayerParams;
use xbar_prune::io::{array_to_tensor, load_network, load_weights, save_masks, save_tensor};
use xbar_prune::policy::{
    finalize_ratio, initial_ratio, prune_network, sweep_layer, sweeps_to_csv, CapMode,
    DatasetEvaluator, LayerDecision, LayerSweep, PolicyThresholds,
};

use crate::commands::{ensure_out_dir, write_json, write_text, GrainArg, SolverArgs};
use crate::manifest::ManifestBuilder;
use crate::tensors::{load_activations, load_labels};

#[derive(Clone, Copy, ValueEnum)]
pub enum CapModeArg {
    StopAfter,
    Clamp,
}

impl From<CapModeArg> for CapMode {
    fn from(c: CapModeArg) -> CapMode {
        match c {
            CapModeArg::StopAfter => CapMode::StopAfter,
            CapModeArg::Clamp => CapMode::Clamp,
        }
    }
}

#[derive(clap::Args)]
pub struct PruneNetArgs {
    /// Network description JSON
    pub net: PathBuf,
    /// Calibration activations npy, [N, H, W, P] at the network input
    #[arg(long)]
    pub calib: PathBuf,
    /// Held-out evaluation inputs npy
    #[arg(long = "eval-inputs")]
    pub eval_inputs: PathBuf,
    /// Held-out evaluation labels npy (1-d class indices)
    #[arg(long = "eval-labels")]
    pub eval_labels: PathBuf,
    /// Initial accuracy-drop target, percent
    #[arg(long = "Td-init", default_value_t = 1.0)]
    pub td_init: f64,
    /// Maximum accuracy drop, percent
    #[arg(long = "Td", default_value_t = 4.0)]
    pub td: f64,
    /// Maximum pruning ratio, percent
    #[arg(long = "Tp", default_value_t = 60.0)]
    pub tp: f64,
    /// Minimum remaining compute crossbars per layer
    #[arg(long = "Tc", default_value_t = 0)]
    pub tc: usize,
    #[arg(long = "cap-mode", value_enum, default_value = "stop-after")]
    pub cap_mode: CapModeArg,
    /// Sweep grid as START:END:STEP in percent
    #[arg(long, default_value = "20:70:5")]
    pub ratios: String,
    #[arg(long, value_enum, default_value = "column")]
    pub grain: GrainArg,
    /// Reorder input FMs by importance before grouping
    #[arg(long)]
    pub reorder: bool,
    /// Emit the sensitivity table and decisions without pruning
    #[arg(long = "sweep-only")]
    pub sweep_only: bool,
    #[arg(long = "out-dir", default_value = "prune-net-out")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Serialize)]
struct DecisionsFile {
    thresholds: PolicyThresholds,
    baseline_accuracy: f64,
    final_accuracy: Option<f64>,
    decisions: Vec<DecisionEntry>,
}

#[derive(Serialize)]
struct DecisionEntry {
    layer: String,
    start_ratio: f64,
    ratio: f64,
    reason: xbar_prune::policy::StopReason,
}

fn parse_ratio_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Eval(format!(
            "ratio grid `{text}` must be START:END:STEP in percent"
        )));
    }
    let nums: Vec<u32> = parts
        .iter()
        .map(|p| {
            p.parse::<u32>()
                .map_err(|_| Error::Eval(format!("bad ratio grid component `{p}`")))
        })
        .collect::<Result<_>>()?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if step == 0 || start == 0 || end > 100 || start > end {
        return Err(Error::Eval(format!("ratio grid `{text}` out of range")));
    }
    Ok((start..=end)
        .step_by(step as usize)
        .map(|p| p as f64 / 100.0)
        .collect())
}

pub fn run(args: PruneNetArgs) -> Result<()> {
    let spec = load_network(&args.net)?;
    let weights = load_weights(&spec)?;
    let calib = load_activations(&args.calib)?;
    let evaluator = DatasetEvaluator {
        inputs: load_activations(&args.eval_inputs)?,
        labels: load_labels(&args.eval_labels)?,
    };
    let thresholds = PolicyThresholds {
        t_d_initial: args.td_init / 100.0,
        t_d: args.td / 100.0,
        t_p: args.tp / 100.0,
        t_c: args.tc,
        cap_mode: args.cap_mode.into(),
    };
    thresholds.validate()?;
    let ratios = parse_ratio_grid(&args.ratios)?;
    let opts = args.solver.options(args.grain, 0.0, args.reorder);

    let dense: Vec<LayerParams> = weights
        .iter()
        .map(|w| LayerParams::dense(w.clone()))
        .collect();
    let first_conv = spec.first_conv();
    let last_fc = spec.last_fc();
    let prunable: Vec<usize> = (0..spec.layers.len())
        .filter(|&i| Some(i) != first_conv && Some(i) != last_fc)
        .collect();
    if prunable.is_empty() {
        return Err(Error::Eval(
            "network has no prunable layers (first conv and last fc are excluded)".into(),
        ));
    }

    // per-layer sensitivity sweeps
    let mut sweeps: Vec<LayerSweep> = Vec::with_capacity(prunable.len());
    for &idx in &prunable {
        let sweep = sweep_layer(&spec, &dense, idx, &ratios, calib.view(), &evaluator, &opts)?;
        println!(
            "swept `{}`: baseline {:.4}, {} rows",
            sweep.layer,
            sweep.baseline_accuracy,
            sweep.rows.len()
        );
        sweeps.push(sweep);
    }
    let baseline_accuracy = sweeps[0].baseline_accuracy;

    // initial ratios and the three stop conditions
    let mut decisions = Vec::with_capacity(sweeps.len());
    let mut entries = Vec::with_capacity(sweeps.len());
    for sweep in &sweeps {
        let start = initial_ratio(&sweep.rows, thresholds.t_d_initial);
        let (ratio, reason) = finalize_ratio(&sweep.rows, start, &thresholds)?;
        println!(
            "decided `{}`: start {:.2} -> ratio {:.2} ({reason:?})",
            sweep.layer, start, ratio
        );
        decisions.push(LayerDecision {
            layer: sweep.layer.clone(),
            ratio,
            reason,
        });
        entries.push(DecisionEntry {
            layer: sweep.layer.clone(),
            start_ratio: start,
            ratio,
            reason,
        });
    }

    ensure_out_dir(&args.out_dir)?;
    let sensitivity_path = args.out_dir.join("sensitivity.csv");
    write_text(&sensitivity_path, &sweeps_to_csv(&sweeps))?;

    let mut manifest = ManifestBuilder::new("prune-net", args.solver.seed);
    manifest.config(&args.net);
    manifest.config(&args.calib);
    manifest.config(&args.eval_inputs);
    manifest.config(&args.eval_labels);
    manifest.output(&sensitivity_path);

    let decisions_path = args.out_dir.join("decisions.json");
    if args.sweep_only {
        write_json(
            &decisions_path,
            &DecisionsFile {
                thresholds,
                baseline_accuracy,
                final_accuracy: None,
                decisions: entries,
            },
        )?;
        manifest.output(&decisions_path);
        manifest.write(&args.out_dir.join("manifest.json"))?;
        println!("sweep-only run: wrote sensitivity table and decisions");
        return Ok(());
    }

    // sequential whole-network pruning
    let outcome = prune_network(
        &spec,
        &dense,
        &decisions,
        calib.view(),
        &opts,
        Some(&evaluator),
    )?;
    write_json(
        &decisions_path,
        &DecisionsFile {
            thresholds,
            baseline_accuracy,
            final_accuracy: outcome.final_accuracy,
            decisions: entries,
        },
    )?;
    manifest.output(&decisions_path);

    for (idx, result) in outcome.pruned.iter().enumerate() {
        let Some(result) = result else { continue };
        let layer = &spec.layers[idx];
        let masks_path = args.out_dir.join(format!("masks.{}.json", layer.name));
        let weights_path = args.out_dir.join(format!("weights.{}.npy", layer.name));
        save_masks(&result.to_mask_file(layer), &masks_path)?;
        save_tensor(&array_to_tensor(&result.repaired_weights), &weights_path)?;
        manifest.output(&masks_path);
        manifest.output(&weights_path);
    }

    let overhead_csv = args.out_dir.join("overhead.csv");
    let overhead_json = args.out_dir.join("overhead.json");
    write_text(&overhead_csv, &outcome.report.to_csv())?;
    write_json(&overhead_json, &outcome.report)?;
    manifest.output(&overhead_csv);
    manifest.output(&overhead_json);
    manifest.write(&args.out_dir.join("manifest.json"))?;

    println!(
        "pruned network: compute {} -> {}, accuracy {:.4} -> {:.4}",
        outcome.report.dense_compute,
        outcome.report.pruned_compute,
        baseline_accuracy,
        outcome.final_accuracy.unwrap_or(f64::NAN)
    );
    Ok(())
}
