//! The L0-constrained solver.
//!
//! Selects `r` of `I` input FM groups per output group by minimizing
//! `‖Y − X·β‖²` subject to `‖β‖₀ = r`, alternating plain gradient steps
//! in the full coefficient space with a relaxant probabilistic projection
//! (RPP) back into the sparse space. Each projected iterate is rescaled
//! by the closed-form least-squares scalar, and the best binary mask seen
//! across iterations is returned.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{gershgorin_bound, gram};

/// Solver settings. `eta = None` performs an exact line search along
/// the gradient each iteration (the optimal step for the quadratic
/// objective); a fixed learning rate is used when given.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub eta: Option<f64>,
    pub iters: usize,
    pub r0: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eta: None,
            iters: 50,
            r0: 1,
            seed: 0,
        }
    }
}

/// Result of one projection: the coefficient vector restricted to the
/// selected support (original signed values kept), plus the support.
#[derive(Debug, Clone)]
pub struct RppOutput {
    /// Length-`I` vector, zero off the support.
    pub values: Vec<f64>,
    /// Exactly `r` indices, sorted ascending.
    pub support: Vec<usize>,
}

/// Relaxant probabilistic projection: keep `r` of the `r + r0` largest
/// `|β|` entries, chosen by magnitude-proportional sampling.
///
/// Candidates are the top `r + r0` by `|β|` (ties broken by ascending
/// index; `r0` is clamped to `I − r`). Rounds recompute the sampling
/// probabilities over the remaining candidates, test candidates in
/// ascending index order against fresh uniform draws, and stop mid-round
/// once `r` entries are admitted. A round whose remaining candidates all
/// have zero magnitude falls back to uniform probabilities.
pub fn rpp(beta: &[f64], r: usize, r0: usize, rng: &mut impl Rng) -> Result<RppOutput> {
    let len = beta.len();
    if r == 0 || r > len {
        return Err(Error::Budget(format!("r = {r} must be in [1, {len}]")));
    }
    let r0 = r0.min(len - r);
    let k = r + r0;

    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| {
        beta[b]
            .abs()
            .partial_cmp(&beta[a].abs())
            .expect("finite coefficients")
            .then(a.cmp(&b))
    });

    // magnitudes of the candidate set; everything else is screened out
    let mut abs = vec![0.0f64; len];
    let mut remaining = vec![false; len];
    for &i in &order[..k] {
        abs[i] = beta[i].abs();
        remaining[i] = true;
    }

    let mut values = vec![0.0f64; len];
    let mut support = Vec::with_capacity(r);
    while support.len() < r {
        let total: f64 = abs
            .iter()
            .zip(&remaining)
            .filter(|(_, &rem)| rem)
            .map(|(&a, _)| a)
            .sum();
        let count = remaining.iter().filter(|&&rem| rem).count();
        for i in 0..len {
            if !remaining[i] {
                continue;
            }
            let prob = if total > 0.0 {
                abs[i] / total
            } else {
                1.0 / count as f64
            };
            let u: f64 = rng.random();
            if prob > u {
                remaining[i] = false;
                values[i] = beta[i];
                abs[i] = 0.0;
                support.push(i);
                if support.len() == r {
                    break;
                }
            }
        }
    }
    support.sort_unstable();
    Ok(RppOutput { values, support })
}

/// One gradient step in the full coefficient space:
/// `β = β_L0 − η·(XᵀX·β_L0 − XᵀY)`.
pub fn lgd_step(
    beta_l0: ArrayView1<f64>,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    eta: f64,
) -> Result<Array1<f64>> {
    if x.nrows() != y.len() || x.ncols() != beta_l0.len() {
        return Err(Error::Geometry(format!(
            "shapes do not conform: X {}x{}, Y {}, beta {}",
            x.nrows(),
            x.ncols(),
            y.len(),
            beta_l0.len()
        )));
    }
    let xb = x.dot(&beta_l0);
    let grad = x.t().dot(&xb) - x.t().dot(&y);
    let beta = &beta_l0 - &(grad * eta);
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence);
    }
    Ok(beta)
}

/// Outcome of the scalar least-squares rescale.
pub struct Rescale {
    pub scaled: Array1<f64>,
    pub alpha: f64,
    /// True when `β_L0` was all zero and the call was a no-op.
    pub degenerate: bool,
}

/// Scale `β_L0` by the `α` minimizing `‖Y − α·X·β_L0‖²`. A vanishing
/// `ZᵀZ` (below `1e-12·‖Y‖²`) leaves the vector unscaled (`α = 1`).
pub fn alpha_rescale(beta_l0: ArrayView1<f64>, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Rescale {
    if beta_l0.iter().all(|&v| v == 0.0) {
        return Rescale {
            scaled: beta_l0.to_owned(),
            alpha: 1.0,
            degenerate: true,
        };
    }
    let z = x.dot(&beta_l0);
    let zz = z.dot(&z);
    let yy = y.dot(&y);
    let alpha = if zz <= 1e-12 * yy || zz == 0.0 {
        1.0
    } else {
        z.dot(&y) / zz
    };
    Rescale {
        scaled: beta_l0.mapv(|v| alpha * v),
        alpha,
        degenerate: false,
    }
}

/// A finalized binary pruning mask for one output FM group.
#[derive(Debug, Clone)]
pub struct PruneMask {
    /// Output-group index; filled in by the layer pruner.
    pub j: usize,
    /// L0 budget (number of surviving input groups).
    pub r: usize,
    pub r0: usize,
    /// Final real-valued coefficient vector (last gradient iterate).
    pub beta: Vec<f64>,
    /// Binary mask with exactly `r` ones.
    pub beta_l0: Vec<f64>,
    /// Support of `beta_l0`, sorted ascending.
    pub support: Vec<usize>,
    /// Least-squares scale of the returned mask.
    pub alpha: f64,
    /// `‖Y − α·X·β_L0‖²` of the returned mask.
    pub loss: f64,
    /// Best loss seen after the init and after each iteration
    /// (non-increasing by construction).
    pub best_loss_trace: Vec<f64>,
}

/// Exact line-search step along the negative gradient of the quadratic
/// `‖Y − Xβ‖²`: `η* = gᵀg / ‖Xg‖²`. Falls back to `safe_eta` when the
/// curvature along the gradient vanishes.
fn line_search_eta(
    beta_l0: ArrayView1<f64>,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    safe_eta: f64,
) -> f64 {
    let g = x.t().dot(&x.dot(&beta_l0)) - x.t().dot(&y);
    let gg = g.dot(&g);
    if gg == 0.0 {
        return 0.0;
    }
    let xg = x.dot(&g);
    let curvature = xg.dot(&xg);
    if curvature > 0.0 && curvature.is_finite() {
        gg / curvature
    } else {
        safe_eta
    }
}

struct SupportEval {
    support: Vec<usize>,
    alpha: f64,
    loss: f64,
}

/// Loss of a binary mask with its optimal scalar `α`.
fn evaluate_support(support: &[usize], x: ArrayView2<f64>, y: ArrayView1<f64>) -> SupportEval {
    let mut z = Array1::<f64>::zeros(x.nrows());
    for &i in support {
        z += &x.column(i);
    }
    let zz = z.dot(&z);
    let yy = y.dot(&y);
    let alpha = if zz <= 1e-12 * yy || zz == 0.0 {
        1.0
    } else {
        z.dot(&y) / zz
    };
    let loss = (&y.to_owned() - &(z * alpha)).mapv(|v| v * v).sum();
    SupportEval {
        support: support.to_vec(),
        alpha,
        loss,
    }
}

/// Solve the L0-constrained problem for one output group; returns the
/// binary mask with the best loss seen across `config.iters` iterations.
pub fn lgd(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    r: usize,
    config: &SolverConfig,
) -> Result<PruneMask> {
    let i_len = x.ncols();
    if x.nrows() != y.len() {
        return Err(Error::Geometry(format!(
            "X has {} rows but Y has {}",
            x.nrows(),
            y.len()
        )));
    }
    if r == 0 || r > i_len {
        return Err(Error::Budget(format!("r = {r} must be in [1, {i_len}]")));
    }
    // fallback step for degenerate line-search iterations; the
    // Gershgorin bound on XᵀX guarantees stability
    let safe_eta = {
        let bound = gershgorin_bound(&gram(x));
        if bound > 0.0 {
            1.0 / bound
        } else {
            1.0
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init: Vec<f64> = (0..i_len).map(|_| rng.sample(StandardNormal)).collect();
    let projected = rpp(&init, r, config.r0, &mut rng)?;
    let mut best = evaluate_support(&projected.support, x, y);
    let mut trace = vec![best.loss];
    let mut beta_l0 = Array1::from(projected.values);
    let mut beta = beta_l0.clone();

    for _ in 0..config.iters {
        let eta = match config.eta {
            Some(e) => e,
            None => line_search_eta(beta_l0.view(), x, y, safe_eta),
        };
        beta = lgd_step(beta_l0.view(), x, y, eta)?;
        let projected = rpp(beta.as_slice().expect("contiguous"), r, config.r0, &mut rng)?;
        let eval = evaluate_support(&projected.support, x, y);
        if eval.loss < best.loss {
            best = eval;
        }
        trace.push(best.loss);
        beta_l0 = alpha_rescale(Array1::from(projected.values).view(), x, y).scaled;
    }

    let mut beta_binary = vec![0.0f64; i_len];
    for &i in &best.support {
        beta_binary[i] = 1.0;
    }
    Ok(PruneMask {
        j: 0,
        r,
        r0: config.r0.min(i_len - r),
        beta: beta.to_vec(),
        beta_l0: beta_binary,
        support: best.support,
        alpha: best.alpha,
        loss: best.loss,
        best_loss_trace: trace,
    })
}
