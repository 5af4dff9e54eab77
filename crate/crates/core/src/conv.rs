//! Per-pair convolutions, grouped partial sums, and the sampled design
//! matrices consumed by the solver.
//!
//! Conventions: activations are `[N, H, W, P]`, weights `[kh, kw, P, Q]`,
//! all convolutions are bias-free cross-correlations (no kernel flip)
//! with zero padding. Spatial positions are flattened row-major to
//! `S_out = out_h * out_w`.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{conv_out_dim, LayerSpec};

/// Convolution of one input FM with one kernel: `Y_S = X ⊛ W`.
/// Returns `[N, S_out]`.
pub fn conv_pair(
    x: ArrayView3<f64>,
    w: ArrayView2<f64>,
    stride: usize,
    padding: usize,
) -> Result<Array2<f64>> {
    let (n, h, width) = x.dim();
    let (kh, kw) = w.dim();
    if stride == 0 {
        return Err(Error::Geometry("stride must be positive".into()));
    }
    let out_h = conv_out_dim(h, kh, stride, padding)?;
    let out_w = conv_out_dim(width, kw, stride, padding)?;
    let mut out = Array2::<f64>::zeros((n, out_h * out_w));
    for ni in 0..n {
        for oh in 0..out_h {
            for ow in 0..out_w {
                let mut acc = 0.0;
                for dy in 0..kh {
                    let iy = (oh * stride + dy) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for dx in 0..kw {
                        let ix = (ow * stride + dx) as isize - padding as isize;
                        if ix < 0 || ix >= width as isize {
                            continue;
                        }
                        acc += x[[ni, iy as usize, ix as usize]] * w[[dy, dx]];
                    }
                }
                out[[ni, oh * out_w + ow]] = acc;
            }
        }
    }
    Ok(out)
}

/// Sliding-window extraction: `[N, H, W, P] -> [N, S_out, kh*kw, P]`.
/// Window offsets are flattened as `t = dy * kw + dx`, matching the
/// weight flattening used throughout.
pub fn im2col(
    inputs: ArrayView4<f64>,
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
) -> Result<(Array4<f64>, (usize, usize))> {
    let (n, h, w, p) = inputs.dim();
    let (kh, kw) = kernel;
    let out_h = conv_out_dim(h, kh, stride, padding)?;
    let out_w = conv_out_dim(w, kw, stride, padding)?;
    let mut cols = Array4::<f64>::zeros((n, out_h * out_w, kh * kw, p));
    for ni in 0..n {
        for oh in 0..out_h {
            for ow in 0..out_w {
                let s = oh * out_w + ow;
                for dy in 0..kh {
                    let iy = (oh * stride + dy) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for dx in 0..kw {
                        let ix = (ow * stride + dx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let t = dy * kw + dx;
                        for pi in 0..p {
                            cols[[ni, s, t, pi]] = inputs[[ni, iy as usize, ix as usize, pi]];
                        }
                    }
                }
            }
        }
    }
    Ok((cols, (out_h, out_w)))
}

/// Per-pair results `Y_S`, per-input-group partial sums `Y_E`, and
/// complete sums `Y_O` of one layer over `N` calibration samples.
#[derive(Debug, Clone)]
pub struct PartialSumBundle {
    /// `[N, S_out, P, Q]` per-pair convolution results.
    pub y_s: Array4<f64>,
    /// `[N, S_out, I, Q]` input-group partial sums.
    pub y_e: Array4<f64>,
    /// `[N, S_out, Q]` complete sums.
    pub y_o: Array3<f64>,
    pub out_h: usize,
    pub out_w: usize,
    pub k_in: usize,
    pub k_out: usize,
}

impl PartialSumBundle {
    pub fn n(&self) -> usize {
        self.y_s.dim().0
    }

    pub fn s_out(&self) -> usize {
        self.y_s.dim().1
    }

    pub fn p(&self) -> usize {
        self.y_s.dim().2
    }

    pub fn q(&self) -> usize {
        self.y_s.dim().3
    }

    /// Number of input FM groups `I`.
    pub fn input_groups(&self) -> usize {
        self.y_e.dim().2
    }

    /// Number of output FM groups `J`.
    pub fn output_groups(&self) -> usize {
        self.q() / self.k_out
    }

    /// Rebuild the grouped views after permuting the input FM order.
    /// `perm[k]` is the original FM index placed at position `k`.
    pub fn regroup(&self, perm: &[usize]) -> Result<PartialSumBundle> {
        let (n, s_out, p, q) = self.y_s.dim();
        if perm.len() != p {
            return Err(Error::Geometry(format!(
                "permutation has {} entries for {} input FMs",
                perm.len(),
                p
            )));
        }
        let mut seen = vec![false; p];
        for &src in perm {
            if src >= p || seen[src] {
                return Err(Error::Geometry("not a permutation".into()));
            }
            seen[src] = true;
        }
        let mut y_s = Array4::<f64>::zeros((n, s_out, p, q));
        for (dst, &src) in perm.iter().enumerate() {
            y_s.index_axis_mut(Axis(2), dst)
                .assign(&self.y_s.index_axis(Axis(2), src));
        }
        let (y_e, y_o) = group_sums(&y_s, self.k_in);
        Ok(PartialSumBundle {
            y_s,
            y_e,
            y_o,
            ..*self
        })
    }
}

/// Accumulate `Y_E[i] = Σ_{p ∈ g_in^i} Y_S[p]` and `Y_O = Σ_i Y_E[i]`.
fn group_sums(y_s: &Array4<f64>, k_in: usize) -> (Array4<f64>, Array3<f64>) {
    let (n, s_out, p, q) = y_s.dim();
    let i_groups = p / k_in;
    let mut y_e = Array4::<f64>::zeros((n, s_out, i_groups, q));
    for i in 0..i_groups {
        for pi in i * k_in..(i + 1) * k_in {
            let src = y_s.index_axis(Axis(2), pi);
            let mut dst = y_e.index_axis_mut(Axis(2), i);
            dst += &src;
        }
    }
    let y_o = y_e.sum_axis(Axis(2));
    (y_e, y_o)
}

/// Build the partial/complete sum bundle of one layer from calibration
/// inputs `[N, H, W, P]` and weights `[kh, kw, P, Q]`.
pub fn build_bundle(
    layer: &LayerSpec,
    weights: ArrayView4<f64>,
    inputs: ArrayView4<f64>,
) -> Result<PartialSumBundle> {
    let (kh, kw, p, q) = weights.dim();
    if (kh, kw, p, q) != (layer.kernel_h, layer.kernel_w, layer.p, layer.q) {
        return Err(Error::Geometry(format!(
            "layer `{}`: weight shape {:?} does not match spec [{}, {}, {}, {}]",
            layer.name,
            weights.shape(),
            layer.kernel_h,
            layer.kernel_w,
            layer.p,
            layer.q
        )));
    }
    let (n, _, _, in_p) = inputs.dim();
    if in_p != p {
        return Err(Error::Geometry(format!(
            "layer `{}`: inputs carry {} FMs, weights expect {}",
            layer.name, in_p, p
        )));
    }

    // one pair conv per (p, q); independent, so workers split over p
    let per_p: Vec<Array3<f64>> = (0..p)
        .into_par_iter()
        .map(|pi| -> Result<Array3<f64>> {
            let x_p = inputs.index_axis(Axis(3), pi);
            let mut slab: Option<Array3<f64>> = None;
            for qi in 0..q {
                let w_pq = weights.slice(ndarray::s![.., .., pi, qi]);
                let y = conv_pair(x_p, w_pq, layer.stride, layer.padding)?;
                let s_out = y.dim().1;
                let slab = slab.get_or_insert_with(|| Array3::zeros((n, s_out, q)));
                slab.slice_mut(ndarray::s![.., .., qi]).assign(&y);
            }
            Ok(slab.expect("Q >= 1"))
        })
        .collect::<Result<_>>()?;

    let (out_h, out_w) = (
        conv_out_dim(inputs.dim().1, kh, layer.stride, layer.padding)?,
        conv_out_dim(inputs.dim().2, kw, layer.stride, layer.padding)?,
    );
    let s_out = out_h * out_w;
    let mut y_s = Array4::<f64>::zeros((n, s_out, p, q));
    for (pi, slab) in per_p.into_iter().enumerate() {
        y_s.index_axis_mut(Axis(2), pi).assign(&slab);
    }
    let (y_e, y_o) = group_sums(&y_s, layer.k_in);
    Ok(PartialSumBundle {
        y_s,
        y_e,
        y_o,
        out_h,
        out_w,
        k_in: layer.k_in,
        k_out: layer.k_out,
    })
}

/// The solver's view of one output FM group: partial sums as columns,
/// complete sums as the target.
#[derive(Debug, Clone)]
pub struct SampledDesign {
    /// `[N*S_sample*K_out, I]`; column `i` holds `Y_E` entries of input
    /// group `i` restricted to `g_out^j`.
    pub x: Array2<f64>,
    /// `[N*S_sample*K_out]` complete sums in matching row order.
    pub y: Array1<f64>,
    /// The spatial indices drawn for each sample `n`.
    pub sample_indices: Vec<Vec<usize>>,
}

/// Sample `s_sample` spatial points per FM (uniform, without
/// replacement, shared across all `i` and all `q ∈ g_out^j` for a given
/// sample) and reshape into the 2-D design for output group `j`.
pub fn sample_design(
    bundle: &PartialSumBundle,
    j: usize,
    s_sample: usize,
    seed: u64,
) -> Result<SampledDesign> {
    let (n, s_out, i_groups, _q) = bundle.y_e.dim();
    let j_groups = bundle.output_groups();
    if j >= j_groups {
        return Err(Error::Geometry(format!(
            "output group {j} out of range (J = {j_groups})"
        )));
    }
    if s_sample == 0 || s_sample > s_out {
        return Err(Error::Sampling(format!(
            "S_sample = {s_sample} must be in [1, {s_out}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample_indices = Vec::with_capacity(n);
    for _ in 0..n {
        let mut idx = rand::seq::index::sample(&mut rng, s_out, s_sample).into_vec();
        idx.sort_unstable();
        sample_indices.push(idx);
    }

    let k_out = bundle.k_out;
    let rows = n * s_sample * k_out;
    let mut x = Array2::<f64>::zeros((rows, i_groups));
    let mut y = Array1::<f64>::zeros(rows);
    let q0 = j * k_out;
    let mut row = 0;
    for (ni, indices) in sample_indices.iter().enumerate() {
        for &s in indices {
            for k in 0..k_out {
                let q = q0 + k;
                for i in 0..i_groups {
                    x[[row, i]] = bundle.y_e[[ni, s, i, q]];
                }
                y[row] = bundle.y_o[[ni, s, q]];
                row += 1;
            }
        }
    }
    Ok(SampledDesign {
        x,
        y,
        sample_indices,
    })
}

/// Masked accumulation of partial sums: `Y_O^q = Σ_i β[i, j(q)] · Y_E^{i,q}`.
/// An all-ones mask reproduces the dense complete sums exactly.
pub fn masked_output(bundle: &PartialSumBundle, masks: &Array2<u8>) -> Result<Array3<f64>> {
    let (n, s_out, i_groups, q) = bundle.y_e.dim();
    let j_groups = bundle.output_groups();
    if masks.dim() != (i_groups, j_groups) {
        return Err(Error::Geometry(format!(
            "mask shape {:?} does not match (I, J) = ({i_groups}, {j_groups})",
            masks.dim()
        )));
    }
    let mut out = Array3::<f64>::zeros((n, s_out, q));
    for qi in 0..q {
        let j = qi / bundle.k_out;
        for i in 0..i_groups {
            if masks[[i, j]] != 0 {
                let src = bundle.y_e.slice(ndarray::s![.., .., i, qi]);
                let mut dst = out.slice_mut(ndarray::s![.., .., qi]);
                dst += &src;
            }
        }
    }
    Ok(out)
}
