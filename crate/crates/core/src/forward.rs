//! Dense and masked forward inference for desk-scale evaluation.
//!
//! Supports conv (cross-correlation, zero padding), ReLU, max-pool, and
//! fc heads. Conv layers are evaluated as an im2col matmul, which is an
//! independent accumulation route from the per-pair sums in [`crate::conv`].

use ndarray::{Array2, Array4, ArrayView4, Axis};

use crate::conv::im2col;
use crate::error::{Error, Result};
use crate::io::{Activation, LayerKind, LayerSpec, NetworkSpec};

/// Pruning state of one layer: the `[I, J]` mask over (permuted) input
/// FM groups and output FM groups, plus the input FM permutation.
#[derive(Debug, Clone)]
pub struct MaskSet {
    pub masks: Array2<u8>,
    /// `permutation[k]` = original FM index at permuted position `k`.
    pub permutation: Vec<usize>,
}

impl MaskSet {
    pub fn all_ones(layer: &LayerSpec) -> MaskSet {
        MaskSet {
            masks: Array2::ones((layer.input_groups(), layer.output_groups())),
            permutation: (0..layer.p).collect(),
        }
    }
}

/// Weights (dense or repaired) plus an optional mask for one layer.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub weights: Array4<f64>,
    pub masks: Option<MaskSet>,
}

impl LayerParams {
    pub fn dense(weights: Array4<f64>) -> Self {
        LayerParams {
            weights,
            masks: None,
        }
    }
}

/// Apply the group mask to a weight tensor by zeroing pruned (p, q)
/// connections. Weights of surviving pairs pass through unchanged.
pub fn effective_weights(layer: &LayerSpec, params: &LayerParams) -> Result<Array4<f64>> {
    let mut w = params.weights.clone();
    let Some(ms) = &params.masks else {
        return Ok(w);
    };
    let (i_groups, j_groups) = ms.masks.dim();
    if i_groups != layer.input_groups() || j_groups != layer.output_groups() {
        return Err(Error::Geometry(format!(
            "layer `{}`: mask shape ({i_groups}, {j_groups}) does not match (I, J) = ({}, {})",
            layer.name,
            layer.input_groups(),
            layer.output_groups()
        )));
    }
    if ms.permutation.len() != layer.p {
        return Err(Error::Geometry(format!(
            "layer `{}`: permutation length {} != P = {}",
            layer.name,
            ms.permutation.len(),
            layer.p
        )));
    }
    for j in 0..j_groups {
        for i in 0..i_groups {
            if ms.masks[[i, j]] == 0 {
                for k in layer.g_in(i) {
                    let p = ms.permutation[k];
                    for q in layer.g_out(j) {
                        w.slice_mut(ndarray::s![.., .., p, q]).fill(0.0);
                    }
                }
            }
        }
    }
    Ok(w)
}

/// Pre-activation output of one layer: `[N, H, W, P] -> [N, out_h, out_w, Q]`.
pub fn layer_preactivation(
    layer: &LayerSpec,
    weights: &Array4<f64>,
    input: ArrayView4<f64>,
) -> Result<Array4<f64>> {
    let (n, _h, _w, p_in) = input.dim();
    if p_in != layer.p {
        return Err(Error::Geometry(format!(
            "layer `{}`: input carries {} FMs, expected {}",
            layer.name, p_in, layer.p
        )));
    }
    let (cols, (out_h, out_w)) = im2col(
        input,
        (layer.kernel_h, layer.kernel_w),
        layer.stride,
        layer.padding,
    )?;
    let s_out = out_h * out_w;
    let kk = layer.kernel_h * layer.kernel_w;
    let cols2 = cols
        .into_shape_with_order((n * s_out, kk * layer.p))
        .expect("contiguous");
    let w2 = weights
        .to_owned()
        .into_shape_with_order((kk * layer.p, layer.q))
        .expect("contiguous");
    let out = cols2.dot(&w2);
    Ok(out
        .into_shape_with_order((n, out_h, out_w, layer.q))
        .expect("contiguous"))
}

fn relu(mut a: Array4<f64>) -> Array4<f64> {
    a.mapv_inplace(|v| v.max(0.0));
    a
}

fn max_pool(a: &Array4<f64>, ph: usize, pw: usize) -> Array4<f64> {
    let (n, h, w, c) = a.dim();
    let (oh, ow) = (h / ph, w / pw);
    let mut out = Array4::<f64>::zeros((n, oh, ow, c));
    for ni in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                for ci in 0..c {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..ph {
                        for dx in 0..pw {
                            m = m.max(a[[ni, y * ph + dy, x * pw + dx, ci]]);
                        }
                    }
                    out[[ni, y, x, ci]] = m;
                }
            }
        }
    }
    out
}

/// Flatten `[N, H, W, C]` to `[N, 1, 1, H*W*C]` (row-major unit order).
fn flatten(a: Array4<f64>) -> Array4<f64> {
    let (n, h, w, c) = a.dim();
    a.into_shape_with_order((n, 1, 1, h * w * c))
        .expect("contiguous")
}

/// Run one full layer (mask, conv, activation, pool). The input is
/// flattened first when the layer is fc.
pub fn layer_forward(
    layer: &LayerSpec,
    params: &LayerParams,
    input: Array4<f64>,
) -> Result<Array4<f64>> {
    let input = if layer.kind == LayerKind::Fc {
        flatten(input)
    } else {
        input
    };
    let weights = effective_weights(layer, params)?;
    let mut out = layer_preactivation(layer, &weights, input.view())?;
    if layer.activation == Activation::Relu {
        out = relu(out);
    }
    if let Some((ph, pw)) = layer.pool {
        out = max_pool(&out, ph, pw);
    }
    Ok(out)
}

/// Full forward pass; returns the last layer's output flattened to
/// `[N, units]`.
pub fn forward(
    spec: &NetworkSpec,
    params: &[LayerParams],
    inputs: ArrayView4<f64>,
) -> Result<Array2<f64>> {
    let acts = run_layers(spec, params, inputs, spec.layers.len())?;
    let (n, h, w, c) = acts.dim();
    Ok(acts
        .into_shape_with_order((n, h * w * c))
        .expect("contiguous"))
}

/// Input activations of layer `upto` under the given parameters (the
/// original inputs when `upto == 0`), already flattened if that layer
/// is fc. Used to recompute calibration data behind pruned layers.
pub fn activations_at(
    spec: &NetworkSpec,
    params: &[LayerParams],
    inputs: ArrayView4<f64>,
    upto: usize,
) -> Result<Array4<f64>> {
    let acts = run_layers(spec, params, inputs, upto)?;
    Ok(if spec.layers[upto].kind == LayerKind::Fc {
        flatten(acts)
    } else {
        acts
    })
}

fn run_layers(
    spec: &NetworkSpec,
    params: &[LayerParams],
    inputs: ArrayView4<f64>,
    upto: usize,
) -> Result<Array4<f64>> {
    if params.len() != spec.layers.len() {
        return Err(Error::Geometry(format!(
            "{} parameter sets for {} layers",
            params.len(),
            spec.layers.len()
        )));
    }
    let mut acts = inputs.to_owned();
    for (layer, lp) in spec.layers.iter().zip(params).take(upto) {
        acts = layer_forward(layer, lp, acts)?;
    }
    Ok(acts)
}

/// Classification accuracy of logits `[N, C]` against labels; argmax
/// ties resolve to the lowest class index.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let (n, c) = logits.dim();
    if labels.len() != n {
        return Err(Error::Eval(format!(
            "{} labels for {} samples",
            labels.len(),
            n
        )));
    }
    if n == 0 {
        return Err(Error::Eval("empty evaluation set".into()));
    }
    let mut hits = 0usize;
    for (row, &label) in logits.axis_iter(Axis(0)).zip(labels) {
        if label >= c {
            return Err(Error::Eval(format!(
                "label {label} out of range ({c} classes)"
            )));
        }
        let mut best = 0usize;
        for k in 1..c {
            if row[k] > row[best] {
                best = k;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Forward + accuracy in one call.
pub fn evaluate(
    spec: &NetworkSpec,
    params: &[LayerParams],
    inputs: ArrayView4<f64>,
    labels: &[usize],
) -> Result<f64> {
    let logits = forward(spec, params, inputs)?;
    accuracy(&logits, labels)
}
