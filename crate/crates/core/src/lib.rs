//! Crossbar-aware structured pruning for convolutional networks.
//!
//! The crate prunes conv/fc layers at crossbar and crossbar-column
//! granularity for crossbar-based accelerators. Partial sums of input FM
//! groups are fitted to the dense complete sums with an L0-constrained
//! gradient-descent solver; survivors are repaired by least squares and
//! repacked onto physical crossbars under a semi-folded mapping model so
//! the saved resources can be counted.
//!
//! Module map:
//! - [`io`]: network spec JSON, `.npy` tensors, mask files
//! - [`conv`]: per-pair convolutions, partial/complete sums, design sampling
//! - [`forward`]: dense/masked inference for desk-scale evaluation
//! - [`lgd`]: the L0-constrained solver and its probabilistic projection
//! - [`pruner`]: single-layer pruning with reorder and weight repair
//! - [`mapper`]: semi-folded layouts, column recombination, counting
//! - [`policy`]: sensitivity sweeps and the stop-condition walk
//! - [`device`]: quantization and multiplicative weight noise

pub mod conv;
pub mod device;
pub mod error;
pub mod forward;
pub mod io;
pub mod lgd;
pub mod linalg;
pub mod mapper;
pub mod policy;
pub mod pruner;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
