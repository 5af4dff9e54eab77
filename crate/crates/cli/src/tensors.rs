//! Tensor-file loading helpers shared by the subcommands.

use std::path::Path;

use ndarray::Array4;
use xbar_prune::error::{Error, Result};
use xbar_prune::io::{load_tensor, tensor_to_array4};

/// Load `[N, H, W, P]` activations.
pub fn load_activations(path: &Path) -> Result<Array4<f64>> {
    let t = load_tensor(path)?;
    tensor_to_array4(&t).map_err(|_| {
        Error::Eval(format!(
            "{}: expected a 4-d [N, H, W, P] tensor, got shape {:?}",
            path.display(),
            t.shape
        ))
    })
}

/// Load a 1-d float tensor of class indices.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let t = load_tensor(path)?;
    if t.shape.len() != 1 {
        return Err(Error::Eval(format!(
            "{}: labels must be a 1-d tensor, got shape {:?}",
            path.display(),
            t.shape
        )));
    }
    t.data
        .iter()
        .map(|&v| {
            if v < 0.0 || v.fract() != 0.0 {
                Err(Error::Eval(format!(
                    "{}: label {v} is not a non-negative integer",
                    path.display()
                )))
            } else {
                Ok(v as usize)
            }
        })
        .collect()
}
