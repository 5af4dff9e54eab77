//! Seeded synthetic classification tasks at desk scale.
//!
//! The generated network carries its class signal in channel blocks:
//! class 0 drives the first half of the channels, class 1 the second
//! half, and the fc head sums each block into its logit. Pruning or
//! perturbing the interior layers degrades the signal path gradually,
//! which gives the policy sweeps and the device sweeps something real
//! to measure.

use ndarray::{Array4, ArrayView4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::forward::LayerParams;
use crate::io::{Activation, LayerKind, LayerSpec, NetworkSpec};

/// A generated task: spec, dense weights, calibration and eval tensors.
pub struct SynthTask {
    pub spec: NetworkSpec,
    pub params: Vec<LayerParams>,
    pub calib_inputs: Array4<f64>,
    pub eval_inputs: Array4<f64>,
    pub eval_labels: Vec<usize>,
}

impl SynthTask {
    pub fn weights(&self) -> Vec<ArrayView4<'_, f64>> {
        self.params.iter().map(|p| p.weights.view()).collect()
    }
}

fn conv(name: &str, p: usize, q: usize, k: usize, pad: usize, k_in: usize) -> LayerSpec {
    LayerSpec {
        name: name.into(),
        kind: LayerKind::Conv,
        p,
        q,
        kernel_h: k,
        kernel_w: k,
        stride: 1,
        padding: pad,
        k_in,
        k_out: 1,
        weights: format!("{name}.npy").into(),
        non_compute_overhead: 0,
        activation: Activation::Relu,
        pool: None,
    }
}

/// Two-class inputs: class `c` adds a positive offset on its channel
/// block plus i.i.d. noise everywhere.
fn sample_inputs(
    n: usize,
    h: usize,
    w: usize,
    channels: usize,
    signal: f64,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> (Array4<f64>, Vec<usize>) {
    let mut x = Array4::<f64>::zeros((n, h, w, channels));
    let mut labels = Vec::with_capacity(n);
    let half = channels / 2;
    for ni in 0..n {
        let class = ni % 2;
        labels.push(class);
        for hi in 0..h {
            for wi in 0..w {
                for c in 0..channels {
                    let in_block = (class == 0 && c < half) || (class == 1 && c >= half);
                    let base = if in_block { signal } else { 0.0 };
                    let eps: f64 = rng.sample(StandardNormal);
                    x[[ni, hi, wi, c]] = base + noise * eps;
                }
            }
        }
    }
    (x, labels)
}

/// Block-structured conv weights: channel block `b` of the inputs feeds
/// channel block `b` of the outputs, with magnitudes varying per channel
/// so pruning has a cost gradient, plus a small dense background.
fn block_weights(
    k: usize,
    p: usize,
    q: usize,
    strength: f64,
    background: f64,
    rng: &mut ChaCha8Rng,
) -> Array4<f64> {
    let mut w = Array4::<f64>::zeros((k, k, p, q));
    let (hp, hq) = (p / 2, q / 2);
    for pi in 0..p {
        for qi in 0..q {
            let same_block = (pi < hp) == (qi < hq);
            // per-pair magnitude spread in [0.5, 1.5]
            let spread = 0.5 + rng.random::<f64>();
            for dy in 0..k {
                for dx in 0..k {
                    let eps: f64 = rng.sample(StandardNormal);
                    let main = if same_block { strength * spread } else { 0.0 };
                    w[[dy, dx, pi, qi]] = (main + background * eps) / (k * k) as f64;
                }
            }
        }
    }
    w
}

/// Build the standard generated task: conv1 (4→8) → conv2 (8→8) →
/// conv3 (8→8) → fc (32→2), 6×6 two-class inputs. `conv2` and `conv3`
/// are the prunable interior layers.
pub fn two_class_task(seed: u64, calib_n: usize, eval_n: usize) -> SynthTask {
    two_class_task_with_noise(seed, calib_n, eval_n, 0.8)
}

/// Same task with an explicit input-noise level; higher noise tightens
/// the class margin so pruning and device sweeps have room to degrade.
pub fn two_class_task_with_noise(
    seed: u64,
    calib_n: usize,
    eval_n: usize,
    input_noise: f64,
) -> SynthTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut conv1 = conv("conv1", 4, 8, 3, 1, 2);
    conv1.pool = Some((2, 2));
    let conv2 = conv("conv2", 8, 8, 2, 0, 2);
    let conv3 = conv("conv3", 8, 8, 1, 0, 2);
    let fc = LayerSpec {
        name: "fc1".into(),
        kind: LayerKind::Fc,
        p: 32,
        q: 2,
        kernel_h: 1,
        kernel_w: 1,
        stride: 1,
        padding: 0,
        k_in: 4,
        k_out: 1,
        weights: "fc1.npy".into(),
        non_compute_overhead: 0,
        activation: Activation::None,
        pool: None,
    };
    let spec = NetworkSpec {
        crossbar_rows: 64,
        crossbar_cols: 8,
        input_h: 6,
        input_w: 6,
        layers: vec![conv1, conv2, conv3, fc],
    };

    let w1 = block_weights(3, 4, 8, 1.0, 0.08, &mut rng);
    let w2 = block_weights(2, 8, 8, 0.8, 0.08, &mut rng);
    let w3 = block_weights(1, 8, 8, 0.8, 0.08, &mut rng);
    // fc template: logit c sums the units of channel block c; unit
    // order is (h, w, q) row-major over the 2x2x8 conv3 output
    let mut wf = Array4::<f64>::zeros((1, 1, 32, 2));
    for unit in 0..32 {
        let q = unit % 8;
        let class = usize::from(q >= 4);
        wf[[0, 0, unit, class]] = 1.0;
    }

    let params = vec![
        LayerParams::dense(w1),
        LayerParams::dense(w2),
        LayerParams::dense(w3),
        LayerParams::dense(wf),
    ];

    let (calib_inputs, _) = sample_inputs(calib_n, 6, 6, 4, 1.0, input_noise, &mut rng);
    let (eval_inputs, eval_labels) = sample_inputs(eval_n, 6, 6, 4, 1.0, input_noise, &mut rng);

    SynthTask {
        spec,
        params,
        calib_inputs,
        eval_inputs,
        eval_labels,
    }
}

/// Write a generated task as a CLI-ready bundle: `net.json`, one weight
/// `.npy` per layer, `calib.npy`, `eval_inputs.npy`, `eval_labels.npy`.
pub fn write_task_files(task: &SynthTask, dir: &std::path::Path) -> crate::error::Result<()> {
    use crate::error::Error;
    use crate::io::{array_to_tensor, save_tensor, Dtype, TensorFile};

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::new();
    for (layer, params) in task.spec.layers.iter().zip(&task.params) {
        let file = format!("{}.npy", layer.name);
        save_tensor(&array_to_tensor(&params.weights), dir.join(&file))?;
        let mut entry = serde_json::json!({
            "name": layer.name,
            "kind": match layer.kind {
                crate::io::LayerKind::Conv => "conv",
                crate::io::LayerKind::Fc => "fc",
            },
            "P": layer.p,
            "Q": layer.q,
            "kernel": [layer.kernel_h, layer.kernel_w],
            "stride": layer.stride,
            "padding": layer.padding,
            "K_in": layer.k_in,
            "K_out": layer.k_out,
            "weights": file,
            "non_compute_overhead": layer.non_compute_overhead,
            "activation": match layer.activation {
                crate::io::Activation::Relu => "relu",
                crate::io::Activation::None => "none",
            },
        });
        if let Some((ph, pw)) = layer.pool {
            entry["pool"] = serde_json::json!([ph, pw]);
        }
        layers.push(entry);
    }
    let net = serde_json::json!({
        "crossbar": { "rows": task.spec.crossbar_rows, "cols": task.spec.crossbar_cols },
        "input": { "h": task.spec.input_h, "w": task.spec.input_w },
        "layers": layers,
    });
    let text = serde_json::to_string_pretty(&net).expect("schema serializes");
    std::fs::write(dir.join("net.json"), text + "\n").map_err(|e| Error::io(dir, e))?;

    save_tensor(&array_to_tensor(&task.calib_inputs), dir.join("calib.npy"))?;
    save_tensor(
        &array_to_tensor(&task.eval_inputs),
        dir.join("eval_inputs.npy"),
    )?;
    let labels = TensorFile::new(
        Dtype::F64,
        vec![task.eval_labels.len()],
        task.eval_labels.iter().map(|&l| l as f64).collect(),
    )?;
    save_tensor(&labels, dir.join("eval_labels.npy"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::evaluate;

    #[test]
    fn generated_network_is_consistent_and_learnable() {
        let task = two_class_task(1, 8, 64);
        task.spec.geometry().unwrap();
        let acc = evaluate(
            &task.spec,
            &task.params,
            task.eval_inputs.view(),
            &task.eval_labels,
        )
        .unwrap();
        assert!(acc > 0.8, "clean accuracy {acc} too low for a planted task");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = two_class_task(7, 4, 8);
        let b = two_class_task(7, 4, 8);
        assert_eq!(a.eval_labels, b.eval_labels);
        assert_eq!(a.calib_inputs, b.calib_inputs);
        for (x, y) in a.params.iter().zip(&b.params) {
            assert_eq!(x.weights, y.weights);
        }
    }

    #[test]
    fn written_bundle_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let task = two_class_task(3, 4, 8);
        write_task_files(&task, dir.path()).unwrap();
        let spec = crate::io::load_network(dir.path().join("net.json")).unwrap();
        assert_eq!(spec.layers.len(), task.spec.layers.len());
        let weights = crate::io::load_weights(&spec).unwrap();
        for (w, p) in weights.iter().zip(&task.params) {
            assert_eq!(w, &p.weights);
        }
        let calib = crate::io::load_tensor(dir.path().join("calib.npy")).unwrap();
        assert_eq!(calib.shape, vec![4, 6, 6, 4]);
    }
}
