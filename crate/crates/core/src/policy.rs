//! Network-level pruning policy: per-layer sensitivity sweeps, the
//! initial-ratio pick, the three stop conditions, and sequential
//! whole-network pruning.
//!
//! The first conv layer and the last fc layer are never pruned; they do
//! the initial feature extraction and the final classification, and
//! their crossbar cost is negligible.

use ndarray::{Array4, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{self, LayerParams};
use crate::io::NetworkSpec;
use crate::mapper::{
    count_overhead, dense_baseline, pruned_layout, CrossbarLayout, OverheadReport,
};
use crate::pruner::{calibrate, prune_calibrated, LayerPruneResult, PruneOptions};

/// Accuracy oracle used by the sweeps; pluggable so desk-scale tasks can
/// stand in for full datasets. `Sync` so trials can run in parallel.
pub trait Evaluator: Sync {
    fn accuracy(&self, spec: &NetworkSpec, params: &[LayerParams]) -> Result<f64>;
}

/// Evaluator over a fixed labeled tensor set.
pub struct DatasetEvaluator {
    pub inputs: Array4<f64>,
    pub labels: Vec<usize>,
}

impl Evaluator for DatasetEvaluator {
    fn accuracy(&self, spec: &NetworkSpec, params: &[LayerParams]) -> Result<f64> {
        forward::evaluate(spec, params, self.inputs.view(), &self.labels)
    }
}

/// One sensitivity measurement: prune a single layer at `ratio`, leave
/// every other layer dense.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub ratio: f64,
    /// Accuracy drop versus the dense baseline, as a fraction.
    pub accuracy_drop: f64,
    /// Remaining compute crossbars of this layer at this ratio.
    pub compute_crossbars: usize,
}

/// Sweep results of one layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSweep {
    pub layer: String,
    pub baseline_accuracy: f64,
    pub rows: Vec<SensitivityRow>,
}

/// The default ratio grid: 20% to 70% in 5% steps.
pub fn default_ratio_grid() -> Vec<f64> {
    (20..=70).step_by(5).map(|p| p as f64 / 100.0).collect()
}

/// How the pruning-ratio cap `T_p` stops the walk: `StopAfter` keeps the
/// first swept ratio exceeding the cap (matching the reported behavior
/// this models), `Clamp` keeps the last ratio at or below it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapMode {
    StopAfter,
    Clamp,
}

/// The policy thresholds; drops and ratios are fractions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyThresholds {
    pub t_d_initial: f64,
    pub t_d: f64,
    pub t_p: f64,
    pub t_c: usize,
    pub cap_mode: CapMode,
}

impl PolicyThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.t_d_initial <= 0.0 || self.t_d <= 0.0 || self.t_p <= 0.0 {
            return Err(Error::Eval("thresholds must be positive".into()));
        }
        if self.t_d < self.t_d_initial {
            return Err(Error::Eval(format!(
                "T_d = {} must be at least T_d_initial = {}",
                self.t_d, self.t_d_initial
            )));
        }
        Ok(())
    }
}

/// Why the single-layer walk stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    AccuracyDrop,
    RatioCap,
    CrossbarFloor,
    SweepEnd,
}

/// Final per-layer choice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDecision {
    pub layer: String,
    pub ratio: f64,
    pub reason: StopReason,
}

/// Prune one layer at each ratio (all other layers dense) and measure
/// the accuracy drop and remaining crossbars. A baseline row at ratio 0
/// with drop 0 leads the result.
pub fn sweep_layer(
    spec: &NetworkSpec,
    dense: &[LayerParams],
    layer_idx: usize,
    ratios: &[f64],
    calib_inputs: ArrayView4<f64>,
    evaluator: &dyn Evaluator,
    opts: &PruneOptions,
) -> Result<LayerSweep> {
    let layer = &spec.layers[layer_idx];
    let geom = spec.geometry()?;
    let baseline = evaluator.accuracy(spec, dense)?;

    let layer_inputs = forward::activations_at(spec, dense, calib_inputs, layer_idx)?;
    let calib = calibrate(layer, dense[layer_idx].weights.view(), layer_inputs.view())?;

    let dense_count = dense_baseline(
        layer,
        &geom[layer_idx],
        opts.grain,
        spec.crossbar_rows,
        spec.crossbar_cols,
    )?
    .compute_count;
    let mut rows = vec![SensitivityRow {
        ratio: 0.0,
        accuracy_drop: 0.0,
        compute_crossbars: dense_count,
    }];

    for &ratio in ratios {
        let run = PruneOptions {
            ratio,
            ..opts.clone()
        };
        let result = prune_calibrated(layer, dense[layer_idx].weights.view(), &calib, &run)?;
        let mut params = dense.to_vec();
        params[layer_idx] = LayerParams {
            weights: result.repaired_weights.clone(),
            masks: Some(result.mask_set()),
        };
        let accuracy = evaluator.accuracy(spec, &params)?;
        let layout = pruned_layout(
            layer,
            &geom[layer_idx],
            opts.grain,
            &result.masks,
            spec.crossbar_rows,
            spec.crossbar_cols,
        )?;
        rows.push(SensitivityRow {
            ratio,
            accuracy_drop: baseline - accuracy,
            compute_crossbars: layout.compute_count,
        });
    }

    Ok(LayerSweep {
        layer: layer.name.clone(),
        baseline_accuracy: baseline,
        rows,
    })
}

/// Initial ratio: the swept ratio whose drop is closest to
/// `t_d_initial` from above; the sweep maximum when no drop exceeds it.
pub fn initial_ratio(rows: &[SensitivityRow], t_d_initial: f64) -> f64 {
    let mut best: Option<&SensitivityRow> = None;
    for row in rows {
        if row.accuracy_drop > t_d_initial
            && best.is_none_or(|b| row.accuracy_drop < b.accuracy_drop)
        {
            best = Some(row);
        }
    }
    match best {
        Some(row) => row.ratio,
        None => rows.iter().map(|r| r.ratio).fold(0.0, f64::max),
    }
}

/// Walk the sweep upward from `start_ratio` and stop at the first
/// violated condition: accuracy drop above `T_d` (keep the previous
/// ratio), remaining crossbars below `T_c` (keep the previous ratio), or
/// ratio above `T_p` (kept ratio depends on [`CapMode`]). Reaching the
/// end of the sweep keeps the maximum ratio.
///
/// When several conditions fire at the same row, the reverting checks
/// win over the ratio cap: a row that busts the accuracy or crossbar
/// budget must roll back to the last good ratio, whereas the cap merely
/// stops further pruning at the ratio it fires on.
pub fn finalize_ratio(
    rows: &[SensitivityRow],
    start_ratio: f64,
    thresholds: &PolicyThresholds,
) -> Result<(f64, StopReason)> {
    thresholds.validate()?;
    let mut sorted: Vec<&SensitivityRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.ratio.partial_cmp(&b.ratio).expect("finite ratios"));
    let eps = 1e-9;
    let start = sorted
        .iter()
        .position(|r| (r.ratio - start_ratio).abs() < eps)
        .ok_or_else(|| {
            Error::Eval(format!(
                "start ratio {start_ratio} is not covered by the sweep"
            ))
        })?;

    let mut prev_ratio = if start > 0 {
        sorted[start - 1].ratio
    } else {
        0.0
    };
    for row in &sorted[start..] {
        if row.accuracy_drop > thresholds.t_d {
            return Ok((prev_ratio, StopReason::AccuracyDrop));
        }
        if row.compute_crossbars < thresholds.t_c {
            return Ok((prev_ratio, StopReason::CrossbarFloor));
        }
        if row.ratio > thresholds.t_p + eps {
            let kept = match thresholds.cap_mode {
                CapMode::StopAfter => row.ratio,
                CapMode::Clamp => prev_ratio,
            };
            return Ok((kept, StopReason::RatioCap));
        }
        prev_ratio = row.ratio;
    }
    Ok((prev_ratio, StopReason::SweepEnd))
}

/// Outcome of whole-network pruning.
#[derive(Debug)]
pub struct NetworkPruneOutcome {
    /// Final parameters (repaired weights + masks) per layer.
    pub params: Vec<LayerParams>,
    /// Per-layer pruning results for the layers that were pruned.
    pub pruned: Vec<Option<LayerPruneResult>>,
    pub report: OverheadReport,
    pub final_accuracy: Option<f64>,
}

/// Prune the whole network layer by layer in topological order,
/// recomputing each layer's calibration activations behind the already
/// pruned predecessors. The first conv and the last fc layer must not
/// carry decisions.
pub fn prune_network(
    spec: &NetworkSpec,
    dense: &[LayerParams],
    decisions: &[LayerDecision],
    calib_inputs: ArrayView4<f64>,
    opts: &PruneOptions,
    evaluator: Option<&dyn Evaluator>,
) -> Result<NetworkPruneOutcome> {
    let geom = spec.geometry()?;
    let first_conv = spec.first_conv();
    let last_fc = spec.last_fc();

    let mut by_layer: Vec<Option<f64>> = vec![None; spec.layers.len()];
    for d in decisions {
        let idx = spec
            .layers
            .iter()
            .position(|l| l.name == d.layer)
            .ok_or_else(|| Error::Eval(format!("decision names unknown layer `{}`", d.layer)))?;
        if Some(idx) == first_conv {
            return Err(Error::Eval(format!(
                "layer `{}` is the first conv layer and is not pruned",
                d.layer
            )));
        }
        if Some(idx) == last_fc {
            return Err(Error::Eval(format!(
                "layer `{}` is the last fc layer and is not pruned",
                d.layer
            )));
        }
        by_layer[idx] = Some(d.ratio);
    }

    let mut params: Vec<LayerParams> = dense.to_vec();
    let mut pruned: Vec<Option<LayerPruneResult>> = vec![None; spec.layers.len()];
    let mut layouts: Vec<(CrossbarLayout, CrossbarLayout)> = Vec::with_capacity(spec.layers.len());

    for (idx, layer) in spec.layers.iter().enumerate() {
        let dense_layout = dense_baseline(
            layer,
            &geom[idx],
            opts.grain,
            spec.crossbar_rows,
            spec.crossbar_cols,
        )?;
        let pruned_layer_layout = match by_layer[idx] {
            Some(ratio) if ratio > 0.0 => {
                // activations behind the pruned prefix
                let layer_inputs = forward::activations_at(spec, &params, calib_inputs, idx)?;
                let run = PruneOptions {
                    ratio,
                    ..opts.clone()
                };
                let result = crate::pruner::prune_layer(
                    layer,
                    params[idx].weights.view(),
                    layer_inputs.view(),
                    &run,
                )?;
                let layout = pruned_layout(
                    layer,
                    &geom[idx],
                    opts.grain,
                    &result.masks,
                    spec.crossbar_rows,
                    spec.crossbar_cols,
                )?;
                params[idx] = LayerParams {
                    weights: result.repaired_weights.clone(),
                    masks: Some(result.mask_set()),
                };
                pruned[idx] = Some(result);
                layout
            }
            _ => dense_layout.clone(),
        };
        layouts.push((dense_layout, pruned_layer_layout));
    }

    let report = count_overhead(spec, &layouts)?;
    let final_accuracy = match evaluator {
        Some(e) => Some(e.accuracy(spec, &params)?),
        None => None,
    };
    Ok(NetworkPruneOutcome {
        params,
        pruned,
        report,
        final_accuracy,
    })
}

/// CSV rendering of sweeps: `layer,ratio,accuracy_drop,compute_crossbars`.
pub fn sweeps_to_csv(sweeps: &[LayerSweep]) -> String {
    let mut out = String::from("layer,ratio,accuracy_drop,compute_crossbars\n");
    for sweep in sweeps {
        for row in &sweep.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                sweep.layer, row.ratio, row.accuracy_drop, row.compute_crossbars
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ratio_pct: u32, drop_pct: f64, crossbars: usize) -> SensitivityRow {
        SensitivityRow {
            ratio: ratio_pct as f64 / 100.0,
            accuracy_drop: drop_pct / 100.0,
            compute_crossbars: crossbars,
        }
    }

    fn thresholds() -> PolicyThresholds {
        PolicyThresholds {
            t_d_initial: 0.01,
            t_d: 0.04,
            t_p: 0.60,
            t_c: 400,
            cap_mode: CapMode::StopAfter,
        }
    }

    #[test]
    fn default_grid_has_eleven_ratios() {
        let grid = default_ratio_grid();
        assert_eq!(grid.len(), 11);
        assert_eq!(grid[0], 0.20);
        assert_eq!(*grid.last().unwrap(), 0.70);
    }

    #[test]
    fn initial_ratio_picks_smallest_drop_above_threshold() {
        let rows = vec![
            row(20, 0.5, 900),
            row(25, 0.9, 800),
            row(30, 1.4, 700),
            row(35, 3.0, 600),
        ];
        assert_eq!(initial_ratio(&rows, 0.01), 0.30);
        assert_eq!(initial_ratio(&rows, 0.02), 0.35);
    }

    #[test]
    fn initial_ratio_falls_through_to_sweep_max() {
        let rows = vec![row(20, 0.1, 900), row(45, 0.2, 800), row(70, 0.3, 700)];
        assert_eq!(initial_ratio(&rows, 0.01), 0.70);
    }

    #[test]
    fn crossbar_floor_stops_at_previous_ratio() {
        // crossbars fall below T_c = 400 beyond 60%
        let rows = vec![
            row(50, 1.2, 800),
            row(55, 1.5, 600),
            row(60, 2.0, 450),
            row(65, 2.5, 380),
            row(70, 3.0, 300),
        ];
        let (ratio, reason) = finalize_ratio(&rows, 0.50, &thresholds()).unwrap();
        assert_eq!(ratio, 0.60);
        assert_eq!(reason, StopReason::CrossbarFloor);
    }

    #[test]
    fn ratio_cap_keeps_first_ratio_past_the_cap_in_stop_after_mode() {
        let rows = vec![
            row(50, 1.0, 900),
            row(55, 1.5, 850),
            row(60, 2.0, 800),
            row(65, 2.5, 750),
            row(70, 3.0, 700),
        ];
        let (ratio, reason) = finalize_ratio(&rows, 0.50, &thresholds()).unwrap();
        assert_eq!(ratio, 0.65);
        assert_eq!(reason, StopReason::RatioCap);

        let clamped = PolicyThresholds {
            cap_mode: CapMode::Clamp,
            ..thresholds()
        };
        let (ratio, reason) = finalize_ratio(&rows, 0.50, &clamped).unwrap();
        assert_eq!(ratio, 0.60);
        assert_eq!(reason, StopReason::RatioCap);
    }

    #[test]
    fn accuracy_drop_stops_at_previous_ratio() {
        // drop crosses T_d = 4% between 55% and 60%
        let rows = vec![
            row(50, 3.0, 900),
            row(55, 3.8, 850),
            row(60, 4.5, 800),
            row(65, 5.0, 750),
        ];
        let (ratio, reason) = finalize_ratio(&rows, 0.50, &thresholds()).unwrap();
        assert_eq!(ratio, 0.55);
        assert_eq!(reason, StopReason::AccuracyDrop);
    }

    #[test]
    fn sweep_end_keeps_the_maximum() {
        let rows = vec![row(50, 1.0, 900), row(55, 1.2, 850), row(60, 1.4, 800)];
        let (ratio, reason) = finalize_ratio(&rows, 0.50, &thresholds()).unwrap();
        assert_eq!(ratio, 0.60);
        assert_eq!(reason, StopReason::SweepEnd);
    }

    #[test]
    fn accuracy_drop_takes_priority_over_simultaneous_conditions() {
        // at 65% every condition fires; accuracy wins the tie
        let rows = vec![row(60, 1.0, 900), row(65, 9.0, 100)];
        let (ratio, reason) = finalize_ratio(&rows, 0.60, &thresholds()).unwrap();
        assert_eq!(ratio, 0.60);
        assert_eq!(reason, StopReason::AccuracyDrop);
    }

    #[test]
    fn crossbar_floor_preempts_the_ratio_cap() {
        // both fire at 65%: the floor busts a budget, so it rolls back;
        // the cap would have kept 65%
        let rows = vec![row(60, 1.0, 900), row(65, 2.0, 100)];
        let (ratio, reason) = finalize_ratio(&rows, 0.60, &thresholds()).unwrap();
        assert_eq!(ratio, 0.60);
        assert_eq!(reason, StopReason::CrossbarFloor);
    }

    #[test]
    fn start_ratio_must_be_covered() {
        let rows = vec![row(50, 1.0, 900)];
        assert!(finalize_ratio(&rows, 0.45, &thresholds()).is_err());
    }

    #[test]
    fn thresholds_are_validated() {
        let bad = PolicyThresholds {
            t_d: 0.005,
            ..thresholds()
        };
        assert!(bad.validate().is_err());
        assert!(thresholds().validate().is_ok());
    }

    #[test]
    fn stop_reason_serializes_with_enum_names() {
        let d = LayerDecision {
            layer: "conv2".into(),
            ratio: 0.6,
            reason: StopReason::CrossbarFloor,
        };
        let text = serde_json::to_string(&d).unwrap();
        assert!(text.contains("\"CrossbarFloor\""), "{text}");
        let cap = serde_json::to_string(&CapMode::StopAfter).unwrap();
        assert_eq!(cap, "\"stop_after\"");
    }
}
