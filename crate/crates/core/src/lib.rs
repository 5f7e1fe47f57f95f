//! Crowd-count labeling with inverse k-nearest-neighbor (ikNN) maps, the
//! Gaussian density maps they replace, and a desk-scale multi-scale
//! upsampling counting network.
//!
//! The crate is organized bottom-up:
//!
//! - [`annotations`]: head-point CSV files and dataset summaries.
//! - [`spatial`]: kNN distance queries (kd-tree and a brute-force reference).
//! - [`labelmaps`]: density, kNN and ikNN rasters, pooling, LMAP/PNG export.
//! - [`tensor`]: the differentiable operator set with finite-difference checks.
//! - [`model`]: backbone, map modules, count averaging and the training loss.
//! - [`imageio`]: RGB PNG images as tensors.
//! - [`train`]: training, sliding-window inference, metrics and sweeps.
//! - [`synthetic`]: seeded synthetic crowd scenes with exact annotations.
//! - [`cli`]: the `mudiknn` command-line front end.
//!
//! Runnable walkthroughs for each capability live in the crate's `examples/`
//! directory (`cargo run --release --example <name>`).

pub mod annotations;
pub mod cli;
pub mod imageio;
pub mod kv;
pub mod labelmaps;
pub mod model;
pub mod spatial;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use annotations::{AnnotationSet, Point};
pub use labelmaps::{LabelMap, MapConfig, MapKind, SigmaMode};
pub use model::{ModelConfig, MudModel, PredictionResult};
pub use tensor::{Graph, Tensor};
