//! Network descriptions, weight tensors, masks: the file formats of the
//! toolkit.
//!
//! A network is described by a JSON file:
//!
//! ```json
//! {
//!   "crossbar": { "rows": 12, "cols": 4 },
//!   "input": { "h": 2, "w": 3 },
//!   "layers": [
//!     { "name": "conv1", "kind": "conv", "P": 4, "Q": 4,
//!       "kernel": [2, 2], "stride": 1, "padding": 0,
//!       "K_in": 2, "K_out": 2, "weights": "conv1.npy",
//!       "non_compute_overhead": 0 }
//!   ]
//! }
//! ```
//!
//! Weight and activation tensors are `.npy` files (see [`npy`]); weights
//! are shaped `[kernel_h, kernel_w, P, Q]` and activations `[N, H, W, P]`.
//! Optional per-layer keys: `activation` (`"relu"`/`"none"`, defaulting
//! to relu for conv and none for fc) and `pool` (`[h, w]` max-pool).

pub mod npy;

use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::{Array4, ArrayD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use npy::{load_tensor, read_tensor, save_tensor, write_tensor, Dtype, TensorFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    #[serde(alias = "FC")]
    Fc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// Granularity of the pruning mask: whole crossbars or column blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grain {
    Crossbar,
    Column,
}

/// Geometry and grouping of one layer, with all defaults resolved.
#[derive(Debug, Clone, Serialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Number of input feature maps.
    pub p: usize,
    /// Number of output feature maps.
    pub q: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    /// Input FMs per group; `I = P / K_in` groups map to crossbar rows.
    pub k_in: usize,
    /// Output FMs per group; `J = Q / K_out` groups map to crossbar columns.
    pub k_out: usize,
    pub weights: PathBuf,
    /// Buffer/reduce crossbars attached to this layer; counted verbatim.
    pub non_compute_overhead: usize,
    pub activation: Activation,
    pub pool: Option<(usize, usize)>,
}

impl LayerSpec {
    /// Number of input FM groups `I`.
    pub fn input_groups(&self) -> usize {
        self.p / self.k_in
    }

    /// Number of output FM groups `J`.
    pub fn output_groups(&self) -> usize {
        self.q / self.k_out
    }

    /// Contiguous index set of the `i`-th input FM group.
    pub fn g_in(&self, i: usize) -> Range<usize> {
        i * self.k_in..(i + 1) * self.k_in
    }

    /// Contiguous index set of the `j`-th output FM group.
    pub fn g_out(&self, j: usize) -> Range<usize> {
        j * self.k_out..(j + 1) * self.k_out
    }
}

/// A full network description plus the physical crossbar dimensions.
#[derive(Debug, Clone, Serialize)]
pub struct NetworkSpec {
    pub crossbar_rows: usize,
    pub crossbar_cols: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub layers: Vec<LayerSpec>,
}

/// Propagated spatial dimensions of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    pub in_h: usize,
    pub in_w: usize,
    /// Convolution output dims (before pooling).
    pub out_h: usize,
    pub out_w: usize,
    /// Dims after the optional max-pool.
    pub post_h: usize,
    pub post_w: usize,
    /// True when one semi-folded band does not fit the crossbar and the
    /// mapper will have to width-split this layer.
    pub needs_split: bool,
}

impl LayerGeometry {
    pub fn s_out(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Convolution output size along one dimension.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Geometry(format!(
            "kernel {kernel} exceeds padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

impl NetworkSpec {
    /// Propagate spatial dimensions through the layer chain and check
    /// inter-layer consistency.
    pub fn geometry(&self) -> Result<Vec<LayerGeometry>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = self.input_h;
        let mut w = self.input_w;
        // (kind, Q, flattened unit count) of the previous layer
        let mut prev: Option<(LayerKind, usize, usize)> = None;

        for layer in &self.layers {
            match (layer.kind, prev) {
                (LayerKind::Fc, Some((_, _, units))) => {
                    if layer.p != units {
                        return Err(Error::validation(
                            &layer.name,
                            "P",
                            format!(
                                "expected {units} inputs from the previous layer, got {}",
                                layer.p
                            ),
                        ));
                    }
                }
                (LayerKind::Conv, Some((LayerKind::Fc, _, _))) => {
                    return Err(Error::validation(
                        &layer.name,
                        "kind",
                        "conv layer after fc is not supported",
                    ));
                }
                (LayerKind::Conv, Some((LayerKind::Conv, q, _))) => {
                    if layer.p != q {
                        return Err(Error::validation(
                            &layer.name,
                            "P",
                            format!(
                                "expected {q} channels from the previous layer, got {}",
                                layer.p
                            ),
                        ));
                    }
                }
                (_, None) => {}
            }
            if layer.kind == LayerKind::Fc {
                h = 1;
                w = 1;
            }

            let (out_h, out_w) = match layer.kind {
                LayerKind::Fc => (1, 1),
                LayerKind::Conv => (
                    conv_out_dim(h, layer.kernel_h, layer.stride, layer.padding)?,
                    conv_out_dim(w, layer.kernel_w, layer.stride, layer.padding)?,
                ),
            };
            let (post_h, post_w) = match layer.pool {
                Some((ph, pw)) => {
                    let (a, b) = (out_h / ph, out_w / pw);
                    if a == 0 || b == 0 {
                        return Err(Error::Geometry(format!(
                            "layer `{}`: pool {}x{} does not fit output {}x{}",
                            layer.name, ph, pw, out_h, out_w
                        )));
                    }
                    (a, b)
                }
                None => (out_h, out_w),
            };

            let needs_split = layer.k_in * layer.kernel_h * w > self.crossbar_rows
                || layer.k_out * out_w > self.crossbar_cols;

            out.push(LayerGeometry {
                in_h: h,
                in_w: w,
                out_h,
                out_w,
                post_h,
                post_w,
                needs_split,
            });

            prev = Some((layer.kind, layer.q, layer.q * post_h * post_w));
            h = post_h;
            w = post_w;
        }
        Ok(out)
    }

    /// Index of the first conv layer, if any.
    pub fn first_conv(&self) -> Option<usize> {
        self.layers.iter().position(|l| l.kind == LayerKind::Conv)
    }

    /// Index of the last fc layer, if any.
    pub fn last_fc(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.kind == LayerKind::Fc)
    }
}

// ---------------------------------------------------------------------
// JSON schema (raw form before defaults are resolved)
// ---------------------------------------------------------------------

#[derive(Deserialize)]
struct RawNetwork {
    crossbar: RawCrossbar,
    input: RawInput,
    layers: Vec<RawLayer>,
}

#[derive(Deserialize)]
struct RawCrossbar {
    rows: usize,
    cols: usize,
}

#[derive(Deserialize)]
struct RawInput {
    h: usize,
    w: usize,
}

#[derive(Deserialize)]
struct RawLayer {
    name: String,
    kind: LayerKind,
    #[serde(rename = "P")]
    p: usize,
    #[serde(rename = "Q")]
    q: usize,
    kernel: Option<[usize; 2]>,
    #[serde(default = "default_stride")]
    stride: usize,
    #[serde(default)]
    padding: usize,
    #[serde(rename = "K_in")]
    k_in: usize,
    #[serde(rename = "K_out")]
    k_out: Option<usize>,
    weights: PathBuf,
    #[serde(default)]
    non_compute_overhead: usize,
    activation: Option<Activation>,
    pool: Option<[usize; 2]>,
}

fn default_stride() -> usize {
    1
}

/// Parse and validate a network description.
///
/// Weight paths are resolved relative to the JSON file's directory but
/// not opened; use [`load_weights`] for that.
pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: RawNetwork = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    network_from_raw(raw, base)
}

fn network_from_raw(raw: RawNetwork, base: &Path) -> Result<NetworkSpec> {
    let mut layers = Vec::with_capacity(raw.layers.len());
    for rl in raw.layers {
        let (kernel_h, kernel_w) = match (rl.kind, rl.kernel) {
            (LayerKind::Fc, None) => (1, 1),
            (LayerKind::Fc, Some([1, 1])) => (1, 1),
            (LayerKind::Fc, Some([h, w])) => {
                return Err(Error::validation(
                    &rl.name,
                    "kernel",
                    format!("fc layers are fixed at 1x1, got {h}x{w}"),
                ))
            }
            (LayerKind::Conv, Some([h, w])) => (h, w),
            (LayerKind::Conv, None) => {
                return Err(Error::validation(
                    &rl.name,
                    "kernel",
                    "missing for conv layer",
                ))
            }
        };
        let k_out = rl.k_out.unwrap_or(match rl.kind {
            LayerKind::Conv => 1, // column-grain default
            LayerKind::Fc => 8,
        });
        let activation = rl.activation.unwrap_or(match rl.kind {
            LayerKind::Conv => Activation::Relu,
            LayerKind::Fc => Activation::None,
        });
        let layer = LayerSpec {
            name: rl.name,
            kind: rl.kind,
            p: rl.p,
            q: rl.q,
            kernel_h,
            kernel_w,
            stride: rl.stride,
            padding: rl.padding,
            k_in: rl.k_in,
            k_out,
            weights: base.join(rl.weights),
            non_compute_overhead: rl.non_compute_overhead,
            activation,
            pool: rl.pool.map(|[h, w]| (h, w)),
        };
        validate_layer(&layer)?;
        layers.push(layer);
    }
    let spec = NetworkSpec {
        crossbar_rows: raw.crossbar.rows,
        crossbar_cols: raw.crossbar.cols,
        input_h: raw.input.h,
        input_w: raw.input.w,
        layers,
    };
    if spec.crossbar_rows == 0 || spec.crossbar_cols == 0 {
        return Err(Error::Geometry(
            "crossbar dimensions must be positive".into(),
        ));
    }
    // run the chain checks once so invalid networks fail at load time
    spec.geometry()?;
    Ok(spec)
}

fn validate_layer(l: &LayerSpec) -> Result<()> {
    let err = |field: &str, reason: String| Err(Error::validation(&l.name, field, reason));
    if l.p == 0 || l.q == 0 {
        return err("P/Q", "feature map counts must be positive".into());
    }
    if l.k_in == 0 {
        return err("K_in", "group size must be positive".into());
    }
    if l.k_out == 0 {
        return err("K_out", "group size must be positive".into());
    }
    if !l.p.is_multiple_of(l.k_in) {
        return err("K_in", format!("{} % {} != 0", l.p, l.k_in));
    }
    if !l.q.is_multiple_of(l.k_out) {
        return err("K_out", format!("{} % {} != 0", l.q, l.k_out));
    }
    if l.stride == 0 {
        return err("stride", "must be positive".into());
    }
    if l.kernel_h == 0 || l.kernel_w == 0 {
        return err("kernel", "must be positive".into());
    }
    if l.kind == LayerKind::Fc {
        if (l.kernel_h, l.kernel_w) != (1, 1) {
            return err("kernel", "fc layers are fixed at 1x1".into());
        }
        if l.stride != 1 || l.padding != 0 {
            return err(
                "stride/padding",
                "fc layers require stride 1, padding 0".into(),
            );
        }
        if l.pool.is_some() {
            return err("pool", "fc layers cannot pool".into());
        }
    }
    if let Some((ph, pw)) = l.pool {
        if ph == 0 || pw == 0 {
            return err("pool", "must be positive".into());
        }
    }
    Ok(())
}

/// Load every layer's weight tensor, checking shapes against the spec.
pub fn load_weights(spec: &NetworkSpec) -> Result<Vec<Array4<f64>>> {
    spec.layers.iter().map(load_layer_weights).collect()
}

/// Load one layer's `[kernel_h, kernel_w, P, Q]` weight tensor.
pub fn load_layer_weights(layer: &LayerSpec) -> Result<Array4<f64>> {
    let t = load_tensor(&layer.weights).map_err(|e| match e {
        Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
            Error::validation(
                &layer.name,
                "weights",
                format!("weights file not found: {}", path.display()),
            )
        }
        other => other,
    })?;
    let expected = [layer.kernel_h, layer.kernel_w, layer.p, layer.q];
    if t.shape != expected {
        return Err(Error::validation(
            &layer.name,
            "weights",
            format!("expected shape {:?}, file has {:?}", expected, t.shape),
        ));
    }
    tensor_to_array4(&t)
}

/// Reinterpret a tensor file as a 4-d array.
pub fn tensor_to_array4(t: &TensorFile) -> Result<Array4<f64>> {
    if t.shape.len() != 4 {
        return Err(Error::Geometry(format!(
            "expected a 4-d tensor, got shape {:?}",
            t.shape
        )));
    }
    let shape = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
    Array4::from_shape_vec(shape, t.data.clone()).map_err(|e| Error::Geometry(e.to_string()))
}

/// Wrap an array for saving; always stored as `<f8`.
pub fn array_to_tensor<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> TensorFile {
    let shape = a.shape().to_vec();
    let data = a.iter().copied().collect();
    TensorFile {
        dtype: Dtype::F64,
        shape,
        data,
    }
}

/// Reinterpret a tensor file as a dynamic-dimension array.
pub fn tensor_to_arrayd(t: &TensorFile) -> Result<ArrayD<f64>> {
    ArrayD::from_shape_vec(t.shape.clone(), t.data.clone())
        .map_err(|e| Error::Geometry(e.to_string()))
}

// ---------------------------------------------------------------------
// Mask file schema
// ---------------------------------------------------------------------

/// On-disk schema for a layer's pruning masks.
///
/// `masks[i][j]` is 1 when input FM group `i` (in the permuted order
/// given by `permutation`) survives for output FM group `j`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MaskFile {
    pub layer: String,
    pub grain: Grain,
    pub k_in: usize,
    pub k_out: usize,
    pub input_groups: usize,
    pub output_groups: usize,
    pub r_per_group: usize,
    /// `permutation[k]` is the original index of the FM placed at
    /// position `k` before grouping.
    pub permutation: Vec<usize>,
    pub masks: Vec<Vec<u8>>,
    pub ridge_fallback: bool,
    pub loss_before: f64,
    pub loss_after: f64,
}

pub fn save_masks(m: &MaskFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(m).expect("mask schema serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_masks(path: impl AsRef<Path>) -> Result<MaskFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}
