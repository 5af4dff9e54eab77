//! Device non-idealities: conductance quantization and multiplicative
//! log-normal weight variation, plus the accuracy sweep over both.

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::LayerParams;
use crate::io::NetworkSpec;
use crate::policy::Evaluator;
use crate::seed::derive_seed;

/// Quantization level count; `Infinite` models an ideal device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Levels {
    Finite(u32),
    Infinite,
}

impl std::fmt::Display for Levels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Levels::Finite(n) => write!(f, "{n}"),
            Levels::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Levels {
    type Err = Error;

    fn from_str(s: &str) -> Result<Levels> {
        match s.trim() {
            "inf" | "Inf" | "INF" | "∞" => Ok(Levels::Infinite),
            other => {
                let n: u32 = other
                    .parse()
                    .map_err(|_| Error::Eval(format!("bad level count `{other}`")))?;
                if n < 2 {
                    return Err(Error::Eval(format!("level count {n} must be at least 2")));
                }
                Ok(Levels::Finite(n))
            }
        }
    }
}

/// Snap each weight to the nearest point of a uniform grid spanning the
/// layer's [min, max]; midpoints round to the lower level. Degenerate
/// all-equal tensors pass through unchanged.
pub fn quantize(weights: &Array4<f64>, levels: Levels) -> Array4<f64> {
    let n = match levels {
        Levels::Infinite => return weights.clone(),
        Levels::Finite(n) => n.max(2) as f64,
    };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &w in weights.iter() {
        lo = lo.min(w);
        hi = hi.max(w);
    }
    if hi <= lo {
        return weights.clone();
    }
    let step = (hi - lo) / (n - 1.0);
    weights.mapv(|w| {
        let t = (w - lo) / step;
        let idx = (t - 0.5).ceil().clamp(0.0, n - 1.0);
        // pin the extreme levels to the observed range so the grid of a
        // quantized tensor reproduces itself (idempotence)
        if idx == n - 1.0 {
            hi
        } else {
            lo + idx * step
        }
    })
}

/// Multiplicative log-normal variation: `w ← w·e^θ`, `θ ~ N(0, σ²)`
/// i.i.d. per weight. `σ = 0` returns the weights bit-identically; the
/// sign of every weight is preserved since `e^θ > 0`.
pub fn perturb(weights: &Array4<f64>, sigma: f64, rng: &mut impl Rng) -> Array4<f64> {
    if sigma == 0.0 {
        return weights.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma >= 0");
    weights.mapv(|w| w * normal.sample(rng).exp())
}

/// Accuracy grid over (variation, quantization) settings.
#[derive(Debug, Clone)]
pub struct NoiseSweepResult {
    pub sigmas: Vec<f64>,
    pub levels: Vec<Levels>,
    /// Mean accuracy over trials, indexed `[sigma][level]`.
    pub accuracy: Array2<f64>,
    pub trials: usize,
}

impl NoiseSweepResult {
    /// CSV rendering: one row per sigma, one column per level count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma");
        for l in &self.levels {
            out.push_str(&format!(",levels_{l}"));
        }
        out.push('\n');
        for (si, sigma) in self.sigmas.iter().enumerate() {
            out.push_str(&sigma.to_string());
            for li in 0..self.levels.len() {
                out.push_str(&format!(",{}", self.accuracy[[si, li]]));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean accuracy over `trials` perturbation draws per (sigma, levels)
/// cell. Weights are quantized first, then perturbed (program-then-drift
/// ordering). Trials are deterministic per (cell, trial, layer) seed and
/// aggregated in trial order.
pub fn noise_sweep(
    spec: &NetworkSpec,
    params: &[LayerParams],
    evaluator: &dyn Evaluator,
    sigmas: &[f64],
    levels: &[Levels],
    trials: usize,
    seed: u64,
) -> Result<NoiseSweepResult> {
    if sigmas.is_empty() || levels.is_empty() || trials == 0 {
        return Err(Error::Eval(
            "noise sweep needs at least one sigma, one level count, and one trial".into(),
        ));
    }
    if let Some(s) = sigmas.iter().find(|s| **s < 0.0 || !s.is_finite()) {
        return Err(Error::Eval(format!("bad sigma {s}")));
    }
    let mut accuracy = Array2::<f64>::zeros((sigmas.len(), levels.len()));
    for (si, &sigma) in sigmas.iter().enumerate() {
        for (li, &lv) in levels.iter().enumerate() {
            let quantized: Vec<LayerParams> = params
                .iter()
                .map(|lp| LayerParams {
                    weights: quantize(&lp.weights, lv),
                    masks: lp.masks.clone(),
                })
                .collect();
            let per_trial: Vec<f64> = (0..trials)
                .into_par_iter()
                .map(|trial| -> Result<f64> {
                    let noisy: Vec<LayerParams> = spec
                        .layers
                        .iter()
                        .zip(&quantized)
                        .map(|(layer, lp)| {
                            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                                seed,
                                &layer.name,
                                trial,
                                &format!("noise:{si}:{li}"),
                            ));
                            LayerParams {
                                weights: perturb(&lp.weights, sigma, &mut rng),
                                masks: lp.masks.clone(),
                            }
                        })
                        .collect();
                    evaluator.accuracy(spec, &noisy)
                })
                .collect::<Result<_>>()?;
            // a constant series averages to itself exactly; this keeps
            // the sigma = 0, infinite-levels cell bit-equal to the clean
            // accuracy
            let first = per_trial[0];
            accuracy[[si, li]] = if per_trial.iter().all(|&a| a == first) {
                first
            } else {
                per_trial.iter().sum::<f64>() / trials as f64
            };
        }
    }
    Ok(NoiseSweepResult {
        sigmas: sigmas.to_vec(),
        levels: levels.to_vec(),
        accuracy,
        trials,
    })
}
