//! Finite-difference check of the training loss through the whole network.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{loss_nodes, ModelConfig, ModelError, MudModel};
use crate::annotations::{AnnotationSet, Point};
use crate::labelmaps::{iknn_map, LabelMap};
use crate::tensor::{
    grad_check_with_floor, relative_error_with_floor, sample_elements, smooth_numeric_gradient, GradCheckReport, Graph, DEFAULT_FLOOR,
    NodeId, Scalar, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// f32 tape gradients against f64 central differences.
    Single,
    Double,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Single => "32",
            Self::Double => "64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "32" | "f32" => Ok(Self::Single),
            "64" | "f64" => Ok(Self::Double),
            other => Err(format!("unknown precision `{other}` (expected 32 or 64)")),
        }
    }
}

impl Precision {
    /// Pass threshold on the relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            Self::Single => 1e-3,
            Self::Double => 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradCheck {
    pub model: ModelConfig,
    pub precision: Precision,
    /// Share of parameter elements checked.
    pub fraction: f64,
    pub seed: u64,
    /// Central-difference step; shrunk per element when it would cross a
    /// leaky-ReLU kink.
    pub eps: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for ModelGradCheck {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            precision: Precision::Double,
            fraction: 0.01,
            seed: 0,
            eps: 1e-4,
            floor: DEFAULT_FLOOR,
        }
    }
}

/// Random `[0, 1]` patch and an ikNN target built from random heads.
fn fixture(patch: usize, seed: u64) -> Result<(Tensor<f64>, LabelMap, f64), ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = (0..3 * patch * patch).map(|_| rng.random::<f64>()).collect();
    let image = Tensor::from_vec(&[3, patch, patch], image)?;
    let heads: Vec<Point> = (0..12)
        .map(|_| Point::new(rng.random_range(0.0..patch as f64), rng.random_range(0.0..patch as f64)))
        .collect();
    let n = heads.len() as f64;
    let ann = AnnotationSet::new(patch, patch, heads).map_err(|e| ModelError::Config(e.to_string()))?;
    Ok((image, iknn_map(&ann, 1)?, n))
}

fn loss_root<F: Scalar>(
    model: &MudModel<F>,
    g: &mut Graph<F>,
    params: &[Tensor<F>],
    image: &Tensor<F>,
    truth: &LabelMap,
    count: f64,
) -> Result<NodeId, ModelError> {
    let pred = model.build(g, params, image.clone())?;
    Ok(loss_nodes(g, &pred, truth, count)?.total)
}

/// Checks the gradient of the full loss (map terms plus count term) on one
/// random patch. Count biases start at the true count, as in training.
pub fn check_model_gradients(check: &ModelGradCheck) -> Result<GradCheckReport, ModelError> {
    let patch = check.model.patch;
    let (image, truth, count) = fixture(patch, check.seed)?;
    let mut model = MudModel::<f64>::new(ModelConfig {
        seed: check.seed,
        ..check.model.clone()
    })?;
    model.set_count_biases(count);
    let elements = sample_elements(model.params(), check.fraction, check.seed.wrapping_add(1));

    match check.precision {
        Precision::Double => grad_check_with_floor(model.params(), Some(&elements), check.eps, check.floor, |g, p| {
            loss_root(&model, g, p, &image, &truth, count)
        }),
        Precision::Single => {
            // Round the weights to f32 first so both routes see one network.
            let single: MudModel<f32> = model.cast();
            let model: MudModel<f64> = single.cast();
            let image32: Tensor<f32> = image.cast();
            let mut g = Graph::new();
            let root = loss_root(&single, &mut g, single.params(), &image32, &truth, count)?;
            let grads = g.backward(root)?;
            let mut build = |g: &mut Graph<f64>, p: &[Tensor<f64>]| loss_root(&model, g, p, &image, &truth, count);
            let mut report = GradCheckReport::new();
            for &el in &elements {
                let analytic = grads.get(el.slot).map_or(0.0, |t| f64::from(t.data()[el.index]));
                let numeric = smooth_numeric_gradient(model.params(), el, check.eps, &mut build)?;
                report.record(el, numeric.map(|n| relative_error_with_floor(analytic, n, check.floor)));
            }
            Ok(report)
        }
    }
}
