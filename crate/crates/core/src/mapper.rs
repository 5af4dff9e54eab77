//! Semi-folded crossbar layouts, non-zero column recombination, and
//! crossbar counting.
//!
//! One semi-folded crossbar holds one input FM group: its rows carry
//! `K_in · kernel_h · input_width` weights (reused along the FM row
//! dimension), its columns one sliding window per output FM. When
//! `K_out · out_w` exceeds the physical columns, or the row band exceeds
//! the physical rows, the output width is split evenly onto independent
//! crossbars.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::conv::PartialSumBundle;
use crate::error::{Error, Result};
use crate::io::{Grain, LayerGeometry, LayerSpec, NetworkSpec};

/// One physical crossbar column: a sliding window of one output FM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRef {
    /// Output FM index `q`.
    pub output_fm: usize,
    /// Output-column (window) index in `[0, out_w)`.
    pub window: usize,
}

/// One allocated crossbar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Crossbar {
    /// Input FM group feeding the rows (all columns share it).
    pub input_group: usize,
    /// Width-split index this crossbar belongs to.
    pub split: usize,
    pub rows_used: usize,
    pub cols_used: usize,
    pub columns: Vec<ColumnRef>,
}

/// The materialized layout of one layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossbarLayout {
    pub layer: String,
    pub splits: usize,
    pub compute_count: usize,
    pub crossbars: Vec<Crossbar>,
}

/// Window ranges and row occupancy of the width-split plan.
struct SplitPlan {
    /// Half-open window ranges, one per split.
    chunks: Vec<(usize, usize)>,
    /// Rows used by each split's band.
    rows: Vec<usize>,
}

fn plan_splits(
    layer: &LayerSpec,
    geom: &LayerGeometry,
    xbar_rows: usize,
    xbar_cols: usize,
) -> Result<SplitPlan> {
    let out_w = geom.out_w;
    for s in 1..=out_w {
        let chunk_w = out_w.div_ceil(s);
        let receptive = (chunk_w - 1) * layer.stride + layer.kernel_w;
        let rows_needed = layer.k_in * layer.kernel_h * receptive.min(geom.in_w);
        let cols_needed = layer.k_out * chunk_w;
        if rows_needed <= xbar_rows && cols_needed <= xbar_cols {
            let mut chunks = Vec::with_capacity(s);
            let mut rows = Vec::with_capacity(s);
            let mut start = 0;
            while start < out_w {
                let end = (start + chunk_w).min(out_w);
                let w = end - start;
                let recep = (w - 1) * layer.stride + layer.kernel_w;
                chunks.push((start, end));
                rows.push(layer.k_in * layer.kernel_h * recep.min(geom.in_w));
                start = end;
            }
            return Ok(SplitPlan { chunks, rows });
        }
    }
    Err(Error::Mapping(format!(
        "layer `{}`: a semi-folded band of {} rows exceeds the crossbar ({} rows) even at maximal width split",
        layer.name,
        layer.k_in * layer.kernel_h * layer.kernel_w.min(geom.in_w),
        xbar_rows
    )))
}

/// The columns of output group `j` within one window chunk, q-major.
fn block_columns(layer: &LayerSpec, j: usize, chunk: (usize, usize)) -> Vec<ColumnRef> {
    let mut cols = Vec::with_capacity(layer.k_out * (chunk.1 - chunk.0));
    for q in layer.g_out(j) {
        for window in chunk.0..chunk.1 {
            cols.push(ColumnRef {
                output_fm: q,
                window,
            });
        }
    }
    cols
}

/// Dense semi-folded mapping: one crossbar per (input group, output
/// group, split); `I · J · splits` compute crossbars in total.
pub fn map_dense(
    layer: &LayerSpec,
    geom: &LayerGeometry,
    xbar_rows: usize,
    xbar_cols: usize,
) -> Result<CrossbarLayout> {
    let ones = Array2::<u8>::ones((layer.input_groups(), layer.output_groups()));
    map_crossbar_grain(layer, geom, &ones, xbar_rows, xbar_cols)
}

/// Crossbar-grain mapping: the dense layout minus the crossbars whose
/// `(i, j)` mask entry is zero.
pub fn map_crossbar_grain(
    layer: &LayerSpec,
    geom: &LayerGeometry,
    masks: &Array2<u8>,
    xbar_rows: usize,
    xbar_cols: usize,
) -> Result<CrossbarLayout> {
    check_mask_shape(layer, masks)?;
    let plan = plan_splits(layer, geom, xbar_rows, xbar_cols)?;
    let mut crossbars = Vec::new();
    for i in 0..layer.input_groups() {
        for j in 0..layer.output_groups() {
            if masks[[i, j]] == 0 {
                continue;
            }
            for (split, &chunk) in plan.chunks.iter().enumerate() {
                let columns = block_columns(layer, j, chunk);
                crossbars.push(Crossbar {
                    input_group: i,
                    split,
                    rows_used: plan.rows[split],
                    cols_used: columns.len(),
                    columns,
                });
            }
        }
    }
    Ok(CrossbarLayout {
        layer: layer.name.clone(),
        splits: plan.chunks.len(),
        compute_count: crossbars.len(),
        crossbars,
    })
}

/// Column-grain mapping with recombination: within each (input group,
/// split) domain the surviving column blocks are packed first-fit in
/// ascending `j` into crossbars of `xbar_cols` capacity. Columns only
/// share a crossbar when they share input rows, so domains never mix.
pub fn recombine(
    layer: &LayerSpec,
    geom: &LayerGeometry,
    masks: &Array2<u8>,
    xbar_rows: usize,
    xbar_cols: usize,
) -> Result<CrossbarLayout> {
    check_mask_shape(layer, masks)?;
    let plan = plan_splits(layer, geom, xbar_rows, xbar_cols)?;
    let mut crossbars = Vec::new();
    for i in 0..layer.input_groups() {
        for (split, &chunk) in plan.chunks.iter().enumerate() {
            let mut pending: Vec<ColumnRef> = Vec::new();
            for j in 0..layer.output_groups() {
                if masks[[i, j]] != 0 {
                    pending.extend(block_columns(layer, j, chunk));
                }
            }
            for slice in pending.chunks(xbar_cols) {
                crossbars.push(Crossbar {
                    input_group: i,
                    split,
                    rows_used: plan.rows[split],
                    cols_used: slice.len(),
                    columns: slice.to_vec(),
                });
            }
        }
    }
    Ok(CrossbarLayout {
        layer: layer.name.clone(),
        splits: plan.chunks.len(),
        compute_count: crossbars.len(),
        crossbars,
    })
}

/// Pruned layout for either grain.
pub fn pruned_layout(
    layer: &LayerSpec,
    geom: &LayerGeometry,
    grain: Grain,
    masks: &Array2<u8>,
    xbar_rows: usize,
    xbar_cols: usize,
) -> Result<CrossbarLayout> {
    match grain {
        Grain::Crossbar => map_crossbar_grain(layer, geom, masks, xbar_rows, xbar_cols),
        Grain::Column => recombine(layer, geom, masks, xbar_rows, xbar_cols),
    }
}

/// Dense baseline for comparisons: the packed all-ones layout of the
/// same grain (for crossbar grain this is exactly [`map_dense`]).
pub fn dense_baseline(
    layer: &LayerSpec,
    geom: &LayerGeometry,
    grain: Grain,
    xbar_rows: usize,
    xbar_cols: usize,
) -> Result<CrossbarLayout> {
    let ones = Array2::<u8>::ones((layer.input_groups(), layer.output_groups()));
    pruned_layout(layer, geom, grain, &ones, xbar_rows, xbar_cols)
}

fn check_mask_shape(layer: &LayerSpec, masks: &Array2<u8>) -> Result<()> {
    let want = (layer.input_groups(), layer.output_groups());
    if masks.dim() != want {
        return Err(Error::Geometry(format!(
            "layer `{}`: mask shape {:?} does not match (I, J) = {:?}",
            layer.name,
            masks.dim(),
            want
        )));
    }
    Ok(())
}

/// Structural checks: capacity limits and every column at most once.
pub fn validate_layout(
    layout: &CrossbarLayout,
    layer: &LayerSpec,
    xbar_rows: usize,
    xbar_cols: usize,
) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for xb in &layout.crossbars {
        if xb.rows_used > xbar_rows || xb.cols_used > xbar_cols {
            return Err(Error::Mapping(format!(
                "layer `{}`: crossbar exceeds capacity ({}x{} > {}x{})",
                layer.name, xb.rows_used, xb.cols_used, xbar_rows, xbar_cols
            )));
        }
        if xb.cols_used != xb.columns.len() {
            return Err(Error::Mapping(
                "cols_used does not match column list".into(),
            ));
        }
        for c in &xb.columns {
            if !seen.insert((xb.input_group, xb.split, c.output_fm, c.window)) {
                return Err(Error::Mapping(format!(
                    "layer `{}`: duplicate column (i={}, q={}, w={})",
                    layer.name, xb.input_group, c.output_fm, c.window
                )));
            }
        }
    }
    Ok(())
}

/// Evaluate the layout against a bundle: each crossbar column
/// contributes its input group's partial sum at its window positions.
/// Recombination is a pure re-packing, so this must reproduce the masked
/// accumulation exactly.
pub fn layout_output(layout: &CrossbarLayout, bundle: &PartialSumBundle) -> Result<Array3<f64>> {
    let (n, s_out, i_groups, q) = bundle.y_e.dim();
    let out_w = bundle.out_w;
    let out_h = bundle.out_h;
    let mut out = Array3::<f64>::zeros((n, s_out, q));
    for xb in &layout.crossbars {
        if xb.input_group >= i_groups {
            return Err(Error::Mapping(format!(
                "crossbar references input group {} of {}",
                xb.input_group, i_groups
            )));
        }
        for c in &xb.columns {
            if c.output_fm >= q || c.window >= out_w {
                return Err(Error::Mapping(format!(
                    "column (q={}, w={}) outside output geometry",
                    c.output_fm, c.window
                )));
            }
            for ni in 0..n {
                for oh in 0..out_h {
                    let s = oh * out_w + c.window;
                    out[[ni, s, c.output_fm]] += bundle.y_e[[ni, s, xb.input_group, c.output_fm]];
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Overhead accounting
// ---------------------------------------------------------------------

/// Per-layer crossbar counts; totals add the layer's non-compute
/// overhead (buffer/reduce crossbars) verbatim.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct LayerOverheadRow {
    pub layer: String,
    pub dense_total: usize,
    pub dense_compute: usize,
    pub pruned_total: usize,
    pub pruned_compute: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct OverheadReport {
    pub layers: Vec<LayerOverheadRow>,
    pub dense_total: usize,
    pub dense_compute: usize,
    pub pruned_total: usize,
    pub pruned_compute: usize,
}

/// Sum dense and pruned layouts into the network report. `layouts` holds
/// one (dense, pruned) pair per layer, in layer order.
pub fn count_overhead(
    spec: &NetworkSpec,
    layouts: &[(CrossbarLayout, CrossbarLayout)],
) -> Result<OverheadReport> {
    if layouts.len() != spec.layers.len() {
        return Err(Error::Geometry(format!(
            "{} layout pairs for {} layers",
            layouts.len(),
            spec.layers.len()
        )));
    }
    let mut report = OverheadReport {
        layers: Vec::with_capacity(layouts.len()),
        dense_total: 0,
        dense_compute: 0,
        pruned_total: 0,
        pruned_compute: 0,
    };
    for (layer, (dense, pruned)) in spec.layers.iter().zip(layouts) {
        let row = LayerOverheadRow {
            layer: layer.name.clone(),
            dense_total: dense.compute_count + layer.non_compute_overhead,
            dense_compute: dense.compute_count,
            pruned_total: pruned.compute_count + layer.non_compute_overhead,
            pruned_compute: pruned.compute_count,
        };
        report.dense_total += row.dense_total;
        report.dense_compute += row.dense_compute;
        report.pruned_total += row.pruned_total;
        report.pruned_compute += row.pruned_compute;
        report.layers.push(row);
    }
    Ok(report)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl OverheadReport {
    /// CSV rendering: `layer,dense_T,dense_C,pruned_T,pruned_C` plus a
    /// final TOTAL row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,dense_T,dense_C,pruned_T,pruned_C\n");
        for r in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&r.layer),
                r.dense_total,
                r.dense_compute,
                r.pruned_total,
                r.pruned_compute
            ));
        }
        out.push_str(&format!(
            "TOTAL,{},{},{},{}\n",
            self.dense_total, self.dense_compute, self.pruned_total, self.pruned_compute
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{build_bundle, masked_output};
    use crate::io::{Activation, LayerKind};
    use approx::assert_relative_eq;
    use ndarray::{array, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn worked_layer(k_out: usize) -> LayerSpec {
        LayerSpec {
            name: "conv1".into(),
            kind: LayerKind::Conv,
            p: 4,
            q: 4,
            kernel_h: 2,
            kernel_w: 2,
            stride: 1,
            padding: 0,
            k_in: 2,
            k_out,
            weights: "unused.npy".into(),
            non_compute_overhead: 0,
            activation: Activation::None,
            pool: None,
        }
    }

    fn worked_geometry() -> LayerGeometry {
        LayerGeometry {
            in_h: 2,
            in_w: 3,
            out_h: 1,
            out_w: 2,
            post_h: 1,
            post_w: 2,
            needs_split: false,
        }
    }

    #[test]
    fn worked_example_dense_mapping_uses_four_crossbars() {
        let layer = worked_layer(2);
        let layout = map_dense(&layer, &worked_geometry(), 12, 4).unwrap();
        assert_eq!(layout.compute_count, 4);
        assert_eq!(layout.splits, 1);
        for xb in &layout.crossbars {
            assert_eq!(xb.rows_used, 12);
            assert_eq!(xb.cols_used, 4);
        }
        validate_layout(&layout, &layer, 12, 4).unwrap();
    }

    #[test]
    fn single_group_maps_to_one_crossbar() {
        let mut layer = worked_layer(4);
        layer.k_in = 4;
        let layout = map_dense(&layer, &worked_geometry(), 24, 8).unwrap();
        assert_eq!(layout.compute_count, 1);
    }

    #[test]
    fn doubling_output_width_doubles_the_count_via_splits() {
        // widen the input so out_w = 4: K_out * out_w = 8 > 4 columns
        let layer = worked_layer(2);
        let geom = LayerGeometry {
            in_h: 2,
            in_w: 5,
            out_h: 1,
            out_w: 4,
            post_h: 1,
            post_w: 4,
            needs_split: true,
        };
        let layout = map_dense(&layer, &geom, 12, 4).unwrap();
        assert_eq!(layout.splits, 2);
        assert_eq!(layout.compute_count, 8);
        // oracle: explicit column enumeration; every (i, q, window)
        // appears exactly once
        let total_cols: usize = layout.crossbars.iter().map(|xb| xb.columns.len()).sum();
        assert_eq!(total_cols, 2 * 4 * 4); // I * Q * out_w
        validate_layout(&layout, &layer, 12, 4).unwrap();
    }

    #[test]
    fn impossible_band_is_a_mapping_error() {
        let layer = worked_layer(2);
        // even a single window needs k_in*kh*kw = 8 rows
        let err = map_dense(&layer, &worked_geometry(), 7, 4).unwrap_err();
        assert!(err.to_string().contains("maximal width split"), "{err}");
    }

    #[test]
    fn crossbar_grain_diagonal_masks_keep_two() {
        let layer = worked_layer(2);
        let masks = array![[1u8, 0], [0, 1]];
        let layout = map_crossbar_grain(&layer, &worked_geometry(), &masks, 12, 4).unwrap();
        assert_eq!(layout.compute_count, 2);
        assert_eq!(layout.crossbars[0].input_group, 0);
        assert_eq!(layout.crossbars[1].input_group, 1);
    }

    #[test]
    fn recombination_packs_surviving_blocks_into_two() {
        // column grain: input group 0 survives for outputs {0, 3}, group
        // 1 for {1, 2}; blocks of 2 columns, capacity 4
        let layer = worked_layer(1);
        let masks = array![[1u8, 0, 0, 1], [0, 1, 1, 0]];
        let layout = recombine(&layer, &worked_geometry(), &masks, 12, 4).unwrap();
        assert_eq!(layout.compute_count, 2);
        for xb in &layout.crossbars {
            assert_eq!(xb.cols_used, 4);
        }
        // first crossbar holds q=0 and q=3 columns of input group 0
        let fms: Vec<usize> = layout.crossbars[0]
            .columns
            .iter()
            .map(|c| c.output_fm)
            .collect();
        assert_eq!(fms, vec![0, 0, 3, 3]);
        validate_layout(&layout, &layer, 12, 4).unwrap();
    }

    #[test]
    fn all_ones_recombination_matches_dense_column_count() {
        let layer = worked_layer(1);
        let geom = worked_geometry();
        let packed = dense_baseline(&layer, &geom, Grain::Column, 12, 4).unwrap();
        let dense = map_dense(&layer, &geom, 12, 4).unwrap();
        let packed_cols: usize = packed.crossbars.iter().map(|x| x.cols_used).sum();
        let dense_cols: usize = dense.crossbars.iter().map(|x| x.cols_used).sum();
        assert_eq!(packed_cols, dense_cols);
        // and the packed baseline matches the K_out = 2 dense count here
        assert_eq!(packed.compute_count, 4);
    }

    #[test]
    fn random_masks_match_bin_packing_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..30 {
            let p = 2 * rng.random_range(1..=4usize);
            let q = rng.random_range(1..=8usize);
            let out_w = rng.random_range(1..=4usize);
            let layer = LayerSpec {
                name: format!("t{trial}"),
                kind: LayerKind::Conv,
                p,
                q,
                kernel_h: 1,
                kernel_w: 1,
                stride: 1,
                padding: 0,
                k_in: 2,
                k_out: 1,
                weights: "unused.npy".into(),
                non_compute_overhead: 0,
                activation: Activation::None,
                pool: None,
            };
            let geom = LayerGeometry {
                in_h: 2,
                in_w: out_w,
                out_h: 2,
                out_w,
                post_h: 2,
                post_w: out_w,
                needs_split: false,
            };
            let i_groups = layer.input_groups();
            let masks =
                Array2::<u8>::from_shape_simple_fn((i_groups, q), || rng.random_range(0..2) as u8);
            let cols_cap = out_w * rng.random_range(1..=3usize);
            let rows_cap = layer.k_in * out_w;
            let layout = recombine(&layer, &geom, &masks, rows_cap, cols_cap).unwrap();
            // independent recount: sum_i ceil(surviving columns / capacity)
            let mut want = 0usize;
            for i in 0..i_groups {
                let surviving: usize = (0..q).filter(|&j| masks[[i, j]] == 1).map(|_| out_w).sum();
                want += surviving.div_ceil(cols_cap);
            }
            assert_eq!(layout.compute_count, want, "trial {trial}");
            validate_layout(&layout, &layer, rows_cap, cols_cap).unwrap();
        }
    }

    #[test]
    fn fc_layers_map_by_group_sizes() {
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
            activation: Activation::None,
            pool: None,
        };
        let geom = LayerGeometry {
            in_h: 1,
            in_w: 1,
            out_h: 1,
            out_w: 1,
            post_h: 1,
            post_w: 1,
            needs_split: false,
        };
        let layout = map_dense(&layer, &geom, 12, 8).unwrap();
        // I = 4, J = 2
        assert_eq!(layout.compute_count, 8);
        for xb in &layout.crossbars {
            assert_eq!(xb.rows_used, 4);
            assert_eq!(xb.cols_used, 8);
        }
    }

    #[test]
    fn fc_column_grain_recombines_whole_group_blocks() {
        // fc: I = 4, J = 2, blocks of K_out = 8 columns, capacity 8
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
            activation: Activation::None,
            pool: None,
        };
        let geom = LayerGeometry {
            in_h: 1,
            in_w: 1,
            out_h: 1,
            out_w: 1,
            post_h: 1,
            post_w: 1,
            needs_split: false,
        };
        // group 0 feeds both output groups, groups 1 and 2 feed one each
        let masks = array![[1u8, 1], [1, 0], [0, 1], [0, 0]];
        let layout = recombine(&layer, &geom, &masks, 8, 8).unwrap();
        assert_eq!(layout.compute_count, 4);
        validate_layout(&layout, &layer, 8, 8).unwrap();
        // wider crossbars pack the two blocks of group 0 together
        let wide = recombine(&layer, &geom, &masks, 8, 16).unwrap();
        assert_eq!(wide.compute_count, 3);
    }

    fn random_bundle_layer(seed: u64) -> (LayerSpec, LayerGeometry, PartialSumBundle, Array2<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = 2 * rng.random_range(1..=3usize);
        let q = rng.random_range(2..=5usize);
        let layer = LayerSpec {
            name: "rand".into(),
            kind: LayerKind::Conv,
            p,
            q,
            kernel_h: 2,
            kernel_w: 2,
            stride: 1,
            padding: 0,
            k_in: 2,
            k_out: 1,
            weights: "unused.npy".into(),
            non_compute_overhead: 0,
            activation: Activation::None,
            pool: None,
        };
        let weights =
            Array4::from_shape_simple_fn((2, 2, p, q), || rng.random::<f64>() * 2.0 - 1.0);
        let inputs = Array4::from_shape_simple_fn((2, 3, 4, p), || rng.random::<f64>() * 2.0 - 1.0);
        let bundle = build_bundle(&layer, weights.view(), inputs.view()).unwrap();
        let geom = LayerGeometry {
            in_h: 3,
            in_w: 4,
            out_h: bundle.out_h,
            out_w: bundle.out_w,
            post_h: bundle.out_h,
            post_w: bundle.out_w,
            needs_split: false,
        };
        let i_groups = layer.input_groups();
        // random masks, at least one survivor per column
        let mut masks = Array2::<u8>::zeros((i_groups, q));
        for j in 0..q {
            for i in 0..i_groups {
                masks[[i, j]] = rng.random_range(0..2) as u8;
            }
            let row = rng.random_range(0..i_groups);
            masks[[row, j]] = 1;
        }
        (layer, geom, bundle, masks)
    }

    #[test]
    fn recombined_layout_is_functionally_equivalent() {
        for seed in 0..10 {
            let (layer, geom, bundle, masks) = random_bundle_layer(seed);
            let layout = recombine(&layer, &geom, &masks, 256, 3).unwrap();
            let via_layout = layout_output(&layout, &bundle).unwrap();
            let direct = masked_output(&bundle, &masks).unwrap();
            for (a, b) in via_layout.iter().zip(direct.iter()) {
                assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pruning_monotonically_frees_crossbars() {
        let (layer, geom, _bundle, _mask) = random_bundle_layer(42);
        let i_groups = layer.input_groups();
        let mut prev = usize::MAX;
        for survivors in (1..=i_groups).rev() {
            // nested masks: keep the first `survivors` groups everywhere
            let mut masks = Array2::<u8>::zeros((i_groups, layer.q));
            for i in 0..survivors {
                for j in 0..layer.q {
                    masks[[i, j]] = 1;
                }
            }
            let count = recombine(&layer, &geom, &masks, 256, 4)
                .unwrap()
                .compute_count;
            assert!(count <= prev);
            prev = count;
        }
    }

    #[test]
    fn overhead_report_sums_and_csv() {
        let mut layer = worked_layer(2);
        layer.non_compute_overhead = 3;
        let spec = NetworkSpec {
            crossbar_rows: 12,
            crossbar_cols: 4,
            input_h: 2,
            input_w: 3,
            layers: vec![layer.clone()],
        };
        let geom = worked_geometry();
        let dense = map_dense(&layer, &geom, 12, 4).unwrap();
        let masks = array![[1u8, 0], [0, 1]];
        let pruned = map_crossbar_grain(&layer, &geom, &masks, 12, 4).unwrap();
        let report = count_overhead(&spec, &[(dense.clone(), pruned)]).unwrap();
        assert_eq!(report.layers[0].dense_compute, 4);
        assert_eq!(report.layers[0].dense_total, 7);
        assert_eq!(report.layers[0].pruned_compute, 2);
        assert_eq!(report.layers[0].pruned_total, 5);
        assert_eq!(report.pruned_total, 5);
        let csv = report.to_csv();
        assert!(csv.starts_with("layer,dense_T,dense_C,pruned_T,pruned_C\n"));
        assert!(csv.contains("conv1,7,4,5,2\n"));
        assert!(csv.ends_with("TOTAL,7,4,5,2\n"));

        // no masks applied -> pruned equals dense
        let same = count_overhead(&spec, &[(dense.clone(), dense)]).unwrap();
        assert_eq!(same.dense_total, same.pruned_total);
    }

    #[test]
    fn synthetic_three_layer_sums_match_recount() {
        let mk = |name: &str, nco: usize| {
            let mut l = worked_layer(2);
            l.name = name.into();
            l.non_compute_overhead = nco;
            l
        };
        let layers = vec![mk("a", 1), mk("b", 2), mk("c", 0)];
        let spec = NetworkSpec {
            crossbar_rows: 12,
            crossbar_cols: 4,
            input_h: 2,
            input_w: 3,
            layers,
        };
        let geom = worked_geometry();
        let pairs: Vec<_> = spec
            .layers
            .iter()
            .map(|l| {
                let d = map_dense(l, &geom, 12, 4).unwrap();
                let p = map_crossbar_grain(l, &geom, &array![[1u8, 1], [0, 1]], 12, 4).unwrap();
                (d, p)
            })
            .collect();
        let report = count_overhead(&spec, &pairs).unwrap();
        let dense_sum: usize = report.layers.iter().map(|r| r.dense_total).sum();
        let pruned_sum: usize = report.layers.iter().map(|r| r.pruned_total).sum();
        assert_eq!(report.dense_total, dense_sum);
        assert_eq!(report.pruned_total, pruned_sum);
        assert_eq!(report.dense_compute, 12);
        assert_eq!(report.pruned_compute, 9);
    }
}
