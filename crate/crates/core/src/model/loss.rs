//! Training loss: summed per-module map MSE plus squared error of the
//! averaged count.

use super::{ModelError, PredictionNodes, PredictionResult, MAP_MODULES};
use crate::labelmaps::LabelMap;
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Sum over map modules of the map MSE.
    pub map_loss: f64,
    /// Squared error of the final count.
    pub count_loss: f64,
    /// `map_loss + count_loss`.
    pub total: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub map_loss: NodeId,
    pub count_loss: NodeId,
    pub total: NodeId,
}

impl LossNodes {
    /// Reads the terms back; `total` is their sum in f64, so it matches the
    /// reported terms exactly even when the graph runs in f32.
    pub fn breakdown<F: Scalar>(&self, g: &Graph<F>) -> LossBreakdown {
        let v = |id| g.value(id).data()[0].as_f64();
        let (map_loss, count_loss) = (v(self.map_loss), v(self.count_loss));
        LossBreakdown {
            map_loss,
            count_loss,
            total: map_loss + count_loss,
        }
    }
}

/// Records the loss against one ground-truth map and count.
///
/// When the label is coarser than the prediction, each predicted map is
/// block-pooled down to the label size with the pooling that suits the map
/// kind (sum for density, mean otherwise).
pub fn loss_nodes<F: Scalar>(
    g: &mut Graph<F>,
    pred: &PredictionNodes,
    truth_map: &LabelMap,
    truth_count: f64,
) -> Result<LossNodes, ModelError> {
    let patch = g.value(pred.maps[0]).shape()[1];
    let label = truth_map.width();
    if truth_map.height() != label || label == 0 || patch % label != 0 {
        return Err(ModelError::Resolution { label, patch });
    }
    let factor = patch / label;
    let target = Tensor::from_vec(
        &[1, label, label],
        truth_map.values().iter().map(|&v| F::from_f64(v)).collect(),
    )?;
    let target = g.constant(target);
    let mut terms = Vec::with_capacity(MAP_MODULES);
    for &m in &pred.maps {
        let m = if factor > 1 {
            g.pool2d(m, factor, truth_map.kind().pool_mode())?
        } else {
            m
        };
        terms.push(g.mse(m, target)?);
    }
    let map_loss = g.sum_all(&terms)?;
    let c = g.constant(Tensor::scalar(F::from_f64(truth_count)));
    let count_loss = g.mse(pred.final_count, c)?;
    let total = g.add(map_loss, count_loss)?;
    Ok(LossNodes {
        map_loss,
        count_loss,
        total,
    })
}

/// Evaluates the loss of an already computed prediction.
pub fn compute_loss<F: Scalar>(
    pred: &PredictionResult<F>,
    truth_map: &LabelMap,
    truth_count: f64,
) -> Result<LossBreakdown, ModelError> {
    let mut g = Graph::new();
    if pred.maps.len() != MAP_MODULES {
        return Err(ModelError::Config(format!("expected {MAP_MODULES} maps, got {}", pred.maps.len())));
    }
    let maps = [0, 1, 2].map(|j| g.constant(pred.maps[j].clone()));
    let module_counts = pred.module_counts.map(|c| g.constant(Tensor::scalar(F::from_f64(c))));
    let end_count = g.constant(Tensor::scalar(F::from_f64(pred.end_count)));
    let final_count = g.constant(Tensor::scalar(F::from_f64(pred.final_count)));
    let nodes = PredictionNodes {
        maps,
        module_counts,
        end_count,
        final_count,
    };
    Ok(loss_nodes(&mut g, &nodes, truth_map, truth_count)?.breakdown(&g))
}
