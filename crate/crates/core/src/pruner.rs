//! Single-layer crossbar-aware pruning: optional input FM reorder,
//! per-output-group mask solving, and least-squares weight repair.
//!
//! For each output FM group `j` the layer's grouped partial sums are
//! sampled into a design matrix, the L0 solver picks the `r` surviving
//! input groups, and the weights of the survivors are re-fit against the
//! dense complete sums so the pruned layer tracks the original one.

use ndarray::{Array2, Array4, ArrayView4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::conv::{build_bundle, im2col, sample_design, PartialSumBundle};
use crate::error::{Error, Result};
use crate::forward::MaskSet;
use crate::io::{Grain, LayerKind, LayerSpec, MaskFile};
use crate::lgd::{lgd, PruneMask, SolverConfig};
use crate::linalg::solve_normal_equations;
use crate::seed::derive_seed;

/// Settings for one layer-pruning run.
#[derive(Debug, Clone)]
pub struct PruneOptions {
    pub grain: Grain,
    /// Fraction of input FM groups to remove per output group.
    pub ratio: f64,
    /// Exact survivor budget; overrides `ratio` when set.
    pub r_override: Option<usize>,
    /// Reorder input FMs by descending importance before grouping.
    pub reorder: bool,
    pub eta: Option<f64>,
    pub iters: usize,
    pub r0: usize,
    /// Spatial points sampled per FM for the solver design.
    pub lgd_points: usize,
    /// Spatial points sampled per FM for the final regression.
    pub regression_points: usize,
    pub seed: u64,
}

impl PruneOptions {
    pub fn new(grain: Grain, ratio: f64) -> Self {
        PruneOptions {
            grain,
            ratio,
            r_override: None,
            reorder: false,
            eta: None,
            iters: 50,
            r0: 1,
            lgd_points: 10,
            regression_points: 2,
            seed: 0,
        }
    }
}

/// Per-output-group solver outcome.
#[derive(Debug, Clone)]
pub struct GroupOutcome {
    pub mask: PruneMask,
    pub ridge_fallback: bool,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Result of pruning one layer.
#[derive(Debug, Clone)]
pub struct LayerPruneResult {
    pub grain: Grain,
    /// `[I, J]` binary masks over permuted input groups.
    pub masks: Array2<u8>,
    /// `permutation[k]` = original index of the FM at permuted position `k`.
    pub permutation: Vec<usize>,
    /// Weights with pruned connections zeroed and survivors re-fit.
    pub repaired_weights: Array4<f64>,
    pub r_per_group: usize,
    /// Squared residual of the masked original weights on the
    /// regression sample, summed over output groups.
    pub loss_before: f64,
    /// Same residual after the least-squares repair.
    pub loss_after: f64,
    pub ridge_fallback: bool,
    pub groups: Vec<GroupOutcome>,
}

impl LayerPruneResult {
    pub fn mask_set(&self) -> MaskSet {
        MaskSet {
            masks: self.masks.clone(),
            permutation: self.permutation.clone(),
        }
    }

    pub fn to_mask_file(&self, layer: &LayerSpec) -> MaskFile {
        MaskFile {
            layer: layer.name.clone(),
            grain: self.grain,
            k_in: layer.k_in,
            k_out: layer.k_out,
            input_groups: self.masks.dim().0,
            output_groups: self.masks.dim().1,
            r_per_group: self.r_per_group,
            permutation: self.permutation.clone(),
            masks: self
                .masks
                .rows()
                .into_iter()
                .map(|row| row.to_vec())
                .collect(),
            ridge_fallback: self.ridge_fallback,
            loss_before: self.loss_before,
            loss_after: self.loss_after,
        }
    }
}

/// Signed importance of each input FM: `Y_F^p = Σ_q Σ_{n,s} Y_S^{p,q}`.
/// Deliberately not the absolute value: a large positive and a large
/// negative partial sum landing in the same crossbar cancel to a small
/// output, and such FMs should rank low.
pub fn compute_importance(bundle: &PartialSumBundle) -> Vec<f64> {
    let (n, s_out, p, q) = bundle.y_s.dim();
    let mut y_f = vec![0.0f64; p];
    for ni in 0..n {
        for s in 0..s_out {
            for (pi, acc) in y_f.iter_mut().enumerate() {
                for qi in 0..q {
                    *acc += bundle.y_s[[ni, s, pi, qi]];
                }
            }
        }
    }
    y_f
}

/// Permutation sorting FMs by descending importance (ties by ascending
/// original index). `result[k]` is the original index placed at `k`.
pub fn reorder_inputs(importance: &[f64]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..importance.len()).collect();
    perm.sort_by(|&a, &b| {
        importance[b]
            .partial_cmp(&importance[a])
            .expect("finite importance")
            .then(a.cmp(&b))
    });
    perm
}

/// Inverse of a permutation: maps original index back to position.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (pos, &orig) in perm.iter().enumerate() {
        inv[orig] = pos;
    }
    inv
}

/// Fraction of output groups that use each input group:
/// `(Σ_j β^{ij}) / J`.
pub fn contribution_rates(masks: &Array2<u8>) -> Vec<f64> {
    let (_, j_groups) = masks.dim();
    masks
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|&b| b as usize).sum::<usize>() as f64 / j_groups as f64)
        .collect()
}

/// Survivor budget for pruning ratio `ratio` over `i_groups` groups:
/// `max(1, round((1 − ratio) · I))`.
pub fn ratio_to_r(ratio: f64, i_groups: usize) -> usize {
    (((1.0 - ratio) * i_groups as f64).round() as usize).clamp(1, i_groups)
}

/// Precomputed per-layer calibration data: the partial-sum bundle and
/// the im2col design of the raw inputs (in original FM order).
#[derive(Debug, Clone)]
pub struct LayerCalibration {
    pub bundle: PartialSumBundle,
    /// `[N, S_out, kh*kw, P]`
    pub cols: Array4<f64>,
}

/// Build the calibration data for one layer.
pub fn calibrate(
    layer: &LayerSpec,
    weights: ArrayView4<f64>,
    inputs: ArrayView4<f64>,
) -> Result<LayerCalibration> {
    let bundle = build_bundle(layer, weights, inputs)?;
    let (cols, _) = im2col(
        inputs,
        (layer.kernel_h, layer.kernel_w),
        layer.stride,
        layer.padding,
    )?;
    Ok(LayerCalibration { bundle, cols })
}

/// Prune one layer against calibration inputs `[N, H, W, P]`.
pub fn prune_layer(
    layer: &LayerSpec,
    weights: ArrayView4<f64>,
    inputs: ArrayView4<f64>,
    opts: &PruneOptions,
) -> Result<LayerPruneResult> {
    let calib = calibrate(layer, weights, inputs)?;
    prune_calibrated(layer, weights, &calib, opts)
}

/// Prune one layer reusing precomputed calibration data.
pub fn prune_calibrated(
    layer: &LayerSpec,
    weights: ArrayView4<f64>,
    calib: &LayerCalibration,
    opts: &PruneOptions,
) -> Result<LayerPruneResult> {
    if opts.grain == Grain::Column && layer.kind == LayerKind::Conv && layer.k_out != 1 {
        return Err(Error::validation(
            &layer.name,
            "K_out",
            format!(
                "column-grain pruning of conv layers requires K_out = 1, got {}",
                layer.k_out
            ),
        ));
    }
    if !(0.0..=1.0).contains(&opts.ratio) {
        return Err(Error::Budget(format!(
            "pruning ratio {} outside [0, 1]",
            opts.ratio
        )));
    }

    let i_groups = layer.input_groups();
    let j_groups = layer.output_groups();
    let r = match opts.r_override {
        Some(r) => {
            if r == 0 || r > i_groups {
                return Err(Error::Budget(format!("r = {r} must be in [1, {i_groups}]")));
            }
            r
        }
        None => ratio_to_r(opts.ratio, i_groups),
    };

    let (permutation, bundle) = if opts.reorder {
        let importance = compute_importance(&calib.bundle);
        let perm = reorder_inputs(&importance);
        let bundle = calib.bundle.regroup(&perm)?;
        (perm, bundle)
    } else {
        ((0..layer.p).collect::<Vec<_>>(), calib.bundle.clone())
    };

    let s_out = bundle.s_out();
    let lgd_points = opts.lgd_points.clamp(1, s_out);
    let regression_points = opts.regression_points.clamp(1, s_out);

    let repaired_groups: Vec<(GroupOutcome, Array2<f64>)> = (0..j_groups)
        .into_par_iter()
        .map(|j| -> Result<(GroupOutcome, Array2<f64>)> {
            let design = sample_design(
                &bundle,
                j,
                lgd_points,
                derive_seed(opts.seed, &layer.name, j, "lgd-sample"),
            )?;
            let solver = SolverConfig {
                eta: opts.eta,
                iters: opts.iters,
                r0: opts.r0,
                seed: derive_seed(opts.seed, &layer.name, j, "lgd"),
            };
            let mut mask = lgd(design.x.view(), design.y.view(), r, &solver)?;
            mask.j = j;
            repair_group(
                layer,
                weights,
                calib,
                &bundle,
                &permutation,
                mask,
                regression_points,
                opts.seed,
            )
        })
        .collect::<Result<_>>()?;

    let mut masks = Array2::<u8>::zeros((i_groups, j_groups));
    let mut repaired = Array4::<f64>::zeros(weights.raw_dim());
    let mut loss_before = 0.0;
    let mut loss_after = 0.0;
    let mut ridge_fallback = false;
    let mut groups = Vec::with_capacity(j_groups);
    for (outcome, w_rem) in repaired_groups {
        let j = outcome.mask.j;
        for &i in &outcome.mask.support {
            masks[[i, j]] = 1;
        }
        loss_before += outcome.loss_before;
        loss_after += outcome.loss_after;
        ridge_fallback |= outcome.ridge_fallback;
        scatter_repair(layer, &permutation, &outcome.mask, &w_rem, &mut repaired);
        groups.push(outcome);
    }

    Ok(LayerPruneResult {
        grain: opts.grain,
        masks,
        permutation,
        repaired_weights: repaired,
        r_per_group: r,
        loss_before,
        loss_after,
        ridge_fallback,
        groups,
    })
}

/// Surviving original FM indices of a mask, in (support, within-group)
/// order; this fixes the column order of the regression design.
fn surviving_fms(layer: &LayerSpec, permutation: &[usize], support: &[usize]) -> Vec<usize> {
    let mut fms = Vec::with_capacity(support.len() * layer.k_in);
    for &i in support {
        for k in layer.g_in(i) {
            fms.push(permutation[k]);
        }
    }
    fms
}

/// Re-fit the surviving weights of output group `j` by solving
/// `W_rem = (LR_Xᵀ LR_X)⁻¹ LR_Xᵀ LR_Y` over a sampled im2col design of
/// the surviving input FMs. Targets are the dense complete sums.
#[allow(clippy::too_many_arguments)]
fn repair_group(
    layer: &LayerSpec,
    weights: ArrayView4<f64>,
    calib: &LayerCalibration,
    bundle: &PartialSumBundle,
    permutation: &[usize],
    mask: PruneMask,
    regression_points: usize,
    base_seed: u64,
) -> Result<(GroupOutcome, Array2<f64>)> {
    let j = mask.j;
    let fms = surviving_fms(layer, permutation, &mask.support);
    let n = bundle.n();
    let s_out = bundle.s_out();

    let seed = derive_seed(base_seed, &layer.name, j, "lr-sample");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<(usize, usize)> = Vec::with_capacity(n * regression_points);
    for ni in 0..n {
        let mut idx = rand::seq::index::sample(&mut rng, s_out, regression_points).into_vec();
        idx.sort_unstable();
        for s in idx {
            rows.push((ni, s));
        }
    }

    let kk = layer.kernel_h * layer.kernel_w;
    let cols_n = kk * fms.len();
    let mut lr_x = Array2::<f64>::zeros((rows.len(), cols_n));
    let mut lr_y = Array2::<f64>::zeros((rows.len(), layer.k_out));
    let mut w_old = Array2::<f64>::zeros((cols_n, layer.k_out));
    for t in 0..kk {
        let (dy, dx) = (t / layer.kernel_w, t % layer.kernel_w);
        for (g, &fm) in fms.iter().enumerate() {
            let col = t * fms.len() + g;
            for (row, &(ni, s)) in rows.iter().enumerate() {
                lr_x[[row, col]] = calib.cols[[ni, s, t, fm]];
            }
            for (k, q) in layer.g_out(j).enumerate() {
                w_old[[col, k]] = weights[[dy, dx, fm, q]];
            }
        }
    }
    for (row, &(ni, s)) in rows.iter().enumerate() {
        for (k, q) in layer.g_out(j).enumerate() {
            lr_y[[row, k]] = bundle.y_o[[ni, s, q]];
        }
    }

    let gram = lr_x.t().dot(&lr_x);
    let rhs = lr_x.t().dot(&lr_y);
    let solved = solve_normal_equations(&gram, &rhs);

    let residual = |w: &Array2<f64>| -> f64 {
        let pred = lr_x.dot(w);
        (&lr_y - &pred).mapv(|v| v * v).sum()
    };
    let loss_before = residual(&w_old);
    let loss_after = residual(&solved.solution);

    Ok((
        GroupOutcome {
            mask,
            ridge_fallback: solved.ridge_fallback,
            loss_before,
            loss_after,
        },
        solved.solution,
    ))
}

fn scatter_repair(
    layer: &LayerSpec,
    permutation: &[usize],
    mask: &PruneMask,
    w_rem: &Array2<f64>,
    repaired: &mut Array4<f64>,
) {
    let fms = surviving_fms(layer, permutation, &mask.support);
    let kk = layer.kernel_h * layer.kernel_w;
    for t in 0..kk {
        let (dy, dx) = (t / layer.kernel_w, t % layer.kernel_w);
        for (g, &fm) in fms.iter().enumerate() {
            let col = t * fms.len() + g;
            for (k, q) in layer.g_out(mask.j).enumerate() {
                repaired[[dy, dx, fm, q]] = w_rem[[col, k]];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::masked_output;
    use crate::forward::layer_preactivation;
    use crate::io::Activation;
    use approx::assert_relative_eq;
    use ndarray::{Array, Axis};
    use rand::Rng;

    fn conv_layer(p: usize, q: usize, k: usize, k_in: usize, k_out: usize) -> LayerSpec {
        LayerSpec {
            name: "t".into(),
            kind: LayerKind::Conv,
            p,
            q,
            kernel_h: k,
            kernel_w: k,
            stride: 1,
            padding: 0,
            k_in,
            k_out,
            weights: "unused.npy".into(),
            non_compute_overhead: 0,
            activation: Activation::None,
            pool: None,
        }
    }

    fn rng_array<D: ndarray::Dimension>(
        shape: impl ndarray::ShapeBuilder<Dim = D>,
        rng: &mut impl Rng,
    ) -> Array<f64, D> {
        Array::from_shape_simple_fn(shape, || rng.random::<f64>() * 2.0 - 1.0)
    }

    fn manual_bundle(y_s: Array4<f64>, k_in: usize, k_out: usize) -> PartialSumBundle {
        let (_, s_out, p, _) = y_s.dim();
        let i_groups = p / k_in;
        let mut y_e = Array4::<f64>::zeros((y_s.dim().0, s_out, i_groups, y_s.dim().3));
        for i in 0..i_groups {
            for pi in i * k_in..(i + 1) * k_in {
                let src = y_s.index_axis(Axis(2), pi);
                let mut dst = y_e.index_axis_mut(Axis(2), i);
                dst += &src;
            }
        }
        let y_o = y_e.sum_axis(Axis(2));
        PartialSumBundle {
            y_s,
            y_e,
            y_o,
            out_h: 1,
            out_w: s_out,
            k_in,
            k_out,
        }
    }

    #[test]
    fn importance_of_constant_field() {
        let y_s = Array4::<f64>::ones((2, 5, 3, 4));
        let b = manual_bundle(y_s, 1, 1);
        let y_f = compute_importance(&b);
        assert_eq!(y_f, vec![40.0, 40.0, 40.0]);
    }

    #[test]
    fn importance_matches_triple_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y_s: Array4<f64> = rng_array((3, 4, 6, 5), &mut rng);
        let b = manual_bundle(y_s.clone(), 2, 1);
        let y_f = compute_importance(&b);
        for pi in 0..6 {
            let mut acc = 0.0;
            for ni in 0..3 {
                for s in 0..4 {
                    for qi in 0..5 {
                        acc += y_s[[ni, s, pi, qi]];
                    }
                }
            }
            assert_relative_eq!(y_f[pi], acc, max_relative = 1e-9);
        }
    }

    #[test]
    fn importance_is_signed_so_opposites_cancel() {
        // one FM contributes +10 to half the outputs and -10 to the rest;
        // its signed importance sits near zero while a weaker but
        // consistent FM ranks higher
        let mut y_s = Array4::<f64>::zeros((1, 2, 2, 2));
        y_s.slice_mut(ndarray::s![.., .., 0, 0]).fill(10.0);
        y_s.slice_mut(ndarray::s![.., .., 0, 1]).fill(-10.0);
        y_s.slice_mut(ndarray::s![.., .., 1, ..]).fill(0.5);
        let b = manual_bundle(y_s, 1, 1);
        let y_f = compute_importance(&b);
        assert_relative_eq!(y_f[0], 0.0, epsilon = 1e-12);
        assert!(y_f[1] > y_f[0]);
    }

    #[test]
    fn reorder_descending_is_identity() {
        assert_eq!(reorder_inputs(&[5.0, 3.0, 1.0]), vec![0, 1, 2]);
    }

    #[test]
    fn reorder_three_elements() {
        assert_eq!(reorder_inputs(&[1.0, 3.0, 2.0]), vec![1, 2, 0]);
    }

    #[test]
    fn permutation_roundtrip_recovers_order() {
        let perm = reorder_inputs(&[0.3, -0.1, 0.9, 0.3, 0.0]);
        let inv = invert_permutation(&perm);
        for orig in 0..perm.len() {
            assert_eq!(perm[inv[orig]], orig);
        }
    }

    #[test]
    fn contribution_rates_all_ones() {
        let masks = Array2::<u8>::ones((3, 4));
        assert_eq!(contribution_rates(&masks), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn contribution_rates_single_column() {
        let mut masks = Array2::<u8>::zeros((3, 4));
        masks[[0, 2]] = 1;
        assert_eq!(contribution_rates(&masks), vec![0.25, 0.0, 0.0]);
    }

    #[test]
    fn contribution_rates_match_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let masks = Array2::<u8>::from_shape_simple_fn((5, 7), || rng.random_range(0..2) as u8);
        let rates = contribution_rates(&masks);
        for i in 0..5 {
            let count = (0..7).filter(|&j| masks[[i, j]] == 1).count();
            assert_relative_eq!(rates[i], count as f64 / 7.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn default_sampling_matches_the_operating_configuration() {
        // 10 points per FM for the solver, 2 for the final regression,
        // 50 solver iterations, relaxation 1
        let opts = PruneOptions::new(Grain::Column, 0.5);
        assert_eq!(opts.lgd_points, 10);
        assert_eq!(opts.regression_points, 2);
        assert_eq!(opts.iters, 50);
        assert_eq!(opts.r0, 1);
    }

    #[test]
    fn ratio_mapping_rounds_and_clamps() {
        assert_eq!(ratio_to_r(0.0, 4), 4);
        assert_eq!(ratio_to_r(0.5, 4), 2);
        assert_eq!(ratio_to_r(0.5, 5), 3); // 2.5 rounds away from zero
        assert_eq!(ratio_to_r(1.0, 4), 1); // floor of one survivor
        assert_eq!(ratio_to_r(0.7, 10), 3);
    }

    #[allow(clippy::too_many_arguments)]
    fn random_setup(
        seed: u64,
        p: usize,
        q: usize,
        k: usize,
        k_in: usize,
        k_out: usize,
        n: usize,
        hw: (usize, usize),
    ) -> (LayerSpec, Array4<f64>, Array4<f64>) {
        let layer = conv_layer(p, q, k, k_in, k_out);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Array4<f64> = rng_array((k, k, p, q), &mut rng);
        let inputs: Array4<f64> = rng_array((n, hw.0, hw.1, p), &mut rng);
        (layer, weights, inputs)
    }

    #[test]
    fn zero_ratio_keeps_everything_and_recovers_dense_weights() {
        let (layer, weights, inputs) = random_setup(3, 4, 4, 2, 2, 1, 16, (4, 5));
        let opts = PruneOptions::new(Grain::Column, 0.0);
        let res = prune_layer(&layer, weights.view(), inputs.view(), &opts).unwrap();
        assert!(res.masks.iter().all(|&m| m == 1));
        assert!(res.loss_after < 1e-12, "loss_after = {}", res.loss_after);
        // the repaired layer reproduces the dense outputs
        let dense = layer_preactivation(&layer, &weights, inputs.view()).unwrap();
        let repaired = layer_preactivation(&layer, &res.repaired_weights, inputs.view()).unwrap();
        for (a, b) in dense.iter().zip(repaired.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn planted_block_structure_yields_diagonal_masks() {
        // input group 0 drives output group 0, input group 1 drives
        // output group 1; at r = 1 the solver must pick the diagonal
        let layer = conv_layer(4, 4, 2, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut weights: Array4<f64> = rng_array((2, 2, 4, 4), &mut rng);
        for pi in 0..4 {
            for qi in 0..4 {
                if (pi < 2) != (qi < 2) {
                    weights.slice_mut(ndarray::s![.., .., pi, qi]).fill(0.0);
                }
            }
        }
        let inputs: Array4<f64> = rng_array((8, 3, 4, 4), &mut rng);
        let opts = PruneOptions {
            ratio: 0.5,
            ..PruneOptions::new(Grain::Crossbar, 0.5)
        };
        let res = prune_layer(&layer, weights.view(), inputs.view(), &opts).unwrap();
        assert_eq!(res.masks[[0, 0]], 1);
        assert_eq!(res.masks[[1, 1]], 1);
        assert_eq!(res.masks[[0, 1]], 0);
        assert_eq!(res.masks[[1, 0]], 0);

        // with that mask, output group 0 is computed solely from input
        // group 0
        let bundle = build_bundle(&layer, weights.view(), inputs.view()).unwrap();
        let masked = masked_output(&bundle, &res.masks).unwrap();
        for ni in 0..bundle.n() {
            for s in 0..bundle.s_out() {
                for q in 0..2 {
                    assert_relative_eq!(
                        masked[[ni, s, q]],
                        bundle.y_e[[ni, s, 0, q]],
                        max_relative = 1e-9,
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn repair_never_hurts_on_the_regression_sample() {
        for seed in 0..20 {
            let (layer, weights, inputs) = random_setup(100 + seed, 8, 4, 3, 2, 1, 12, (5, 5));
            let mut opts = PruneOptions::new(Grain::Column, 0.5);
            opts.seed = seed;
            opts.regression_points = 4;
            let res = prune_layer(&layer, weights.view(), inputs.view(), &opts).unwrap();
            assert!(
                res.loss_after <= res.loss_before + 1e-9,
                "seed {seed}: {} > {}",
                res.loss_after,
                res.loss_before
            );
        }
    }

    #[test]
    fn mask_columns_have_exact_budget() {
        for (ratio, want_r) in [(0.25, 3), (0.5, 2), (0.75, 1)] {
            let (layer, weights, inputs) = random_setup(7, 8, 4, 2, 2, 1, 10, (4, 4));
            let opts = PruneOptions::new(Grain::Column, ratio);
            let res = prune_layer(&layer, weights.view(), inputs.view(), &opts).unwrap();
            assert_eq!(res.r_per_group, want_r);
            for j in 0..res.masks.dim().1 {
                let ones: usize = (0..res.masks.dim().0)
                    .map(|i| res.masks[[i, j]] as usize)
                    .sum();
                assert_eq!(ones, want_r, "ratio {ratio}");
            }
        }
    }

    #[test]
    fn column_grain_conv_requires_unit_k_out() {
        let (layer, weights, inputs) = random_setup(8, 4, 4, 2, 2, 2, 4, (3, 4));
        let opts = PruneOptions::new(Grain::Column, 0.5);
        let err = prune_layer(&layer, weights.view(), inputs.view(), &opts).unwrap_err();
        assert!(err.to_string().contains("K_out"), "{err}");
        // crossbar grain accepts the same layer
        let opts = PruneOptions::new(Grain::Crossbar, 0.5);
        prune_layer(&layer, weights.view(), inputs.view(), &opts).unwrap();
    }

    #[test]
    fn pruning_is_deterministic() {
        let (layer, weights, inputs) = random_setup(9, 8, 4, 2, 2, 1, 8, (4, 4));
        let mut opts = PruneOptions::new(Grain::Column, 0.5);
        opts.seed = 123;
        opts.reorder = true;
        let a = prune_layer(&layer, weights.view(), inputs.view(), &opts).unwrap();
        let b = prune_layer(&layer, weights.view(), inputs.view(), &opts).unwrap();
        assert_eq!(a.masks, b.masks);
        assert_eq!(a.permutation, b.permutation);
        assert_eq!(a.repaired_weights, b.repaired_weights);
        assert_eq!(a.loss_after, b.loss_after);
    }

    #[test]
    fn underdetermined_repair_flags_ridge() {
        // 2 samples x 2 regression points = 4 rows against 3*3*4 = 36
        // columns: the normal equations are singular
        let (layer, weights, inputs) = random_setup(10, 8, 2, 3, 2, 1, 2, (6, 6));
        let mut opts = PruneOptions::new(Grain::Column, 0.0);
        opts.regression_points = 2;
        let res = prune_layer(&layer, weights.view(), inputs.view(), &opts).unwrap();
        assert!(res.ridge_fallback);
    }

    #[test]
    fn fc_layers_prune_at_column_grain_with_wide_output_groups() {
        let layer = LayerSpec {
            name: "fc".into(),
            kind: LayerKind::Fc,
            p: 16,
            q: 16,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            padding: 0,
            k_in: 4,
            k_out: 8,
            weights: "unused.npy".into(),
            non_compute_overhead: 0,
            activation: crate::io::Activation::None,
            pool: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let weights: Array4<f64> = rng_array((1, 1, 16, 16), &mut rng);
        let inputs: Array4<f64> = rng_array((24, 1, 1, 16), &mut rng);
        let opts = PruneOptions::new(Grain::Column, 0.5);
        let res = prune_layer(&layer, weights.view(), inputs.view(), &opts).unwrap();
        assert_eq!(res.masks.dim(), (4, 2));
        assert_eq!(res.r_per_group, 2);
        for j in 0..2 {
            let ones: usize = (0..4).map(|i| res.masks[[i, j]] as usize).sum();
            assert_eq!(ones, 2);
        }
        assert!(res.loss_after <= res.loss_before + 1e-9);
    }

    #[test]
    fn planted_importance_concentrates_contribution_in_head_groups() {
        // half the FMs carry x10 weights; after reorder the pruned
        // masks' contribution rates concentrate in the head groups
        let layer = conv_layer(8, 4, 2, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut weights: Array4<f64> =
            Array::from_shape_simple_fn((2, 2, 8, 4), || rng.random::<f64>() + 0.5);
        for pi in [1, 3, 5, 7] {
            let mut w = weights.slice_mut(ndarray::s![.., .., pi, ..]);
            w *= 10.0;
        }
        let inputs: Array4<f64> =
            Array::from_shape_simple_fn((10, 4, 5, 8), || rng.random::<f64>() + 0.5);
        let mut opts = PruneOptions::new(Grain::Column, 0.5);
        opts.reorder = true;
        let res = prune_layer(&layer, weights.view(), inputs.view(), &opts).unwrap();
        let rates = contribution_rates(&res.masks);
        let head: f64 = rates[..2].iter().sum();
        let tail: f64 = rates[2..].iter().sum();
        assert!(
            head > tail,
            "head groups should dominate: head {head}, tail {tail} (rates {rates:?})"
        );
        // important FMs were odd indices, so the permutation front half
        // must hold them
        for k in 0..4 {
            assert_eq!(res.permutation[k] % 2, 1, "perm = {:?}", res.permutation);
        }
    }
}
