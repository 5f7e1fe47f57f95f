//! Mini-batch training on random patch crops.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::labelmaps::{downsample_map, generate, LabelMap, MapConfig, MapKind, NATIVE_RESOLUTION};
use crate::model::{loss_nodes, LossBreakdown, ModelConfig, MudModel};
use crate::tensor::{Graph, Tensor};

use super::data::{crop_chw, Sample};
use super::metrics::{compute_metrics, MetricsReport};
use super::optim::Adam;
use super::window::predict_image;
use super::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Ground-truth map kind; `map` holds its parameters and the label
    /// resolution.
    pub kind: MapKind,
    pub map: MapConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds weight initialization, crop offsets and example order. The
    /// model's own seed is replaced by this one.
    pub seed: u64,
    pub model: ModelConfig,
    /// Start every count bias at the mean training-patch count.
    pub init_count_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: MapKind::Iknn,
            map: MapConfig::default(),
            epochs: 10,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            model: ModelConfig::default(),
            init_count_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("invalid learning rate {}", self.learning_rate));
        }
        // The resolution only has to divide the training patch, which need
        // not be 224 wide.
        MapConfig {
            label_resolution: NATIVE_RESOLUTION,
            ..self.map
        }
        .validate()?;
        self.model.validate()?;
        let (res, patch) = (self.map.label_resolution, self.model.patch);
        if res > patch || patch % res != 0 {
            return bad(format!("label resolution {res} does not divide patch {patch}"));
        }
        Ok(())
    }
}

/// Mean per-example losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub map_loss: f64,
    pub count_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MudModel<f32>,
    pub history: Vec<EpochLoss>,
}

/// `epoch,L,L_m,L_c` table.
pub fn history_csv(history: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,L,L_m,L_c\n");
    for e in history {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.total, e.map_loss, e.count_loss);
    }
    out
}

struct Example {
    patch: Tensor<f32>,
    label: LabelMap,
    count: f64,
}

fn make_example(
    sample: &Sample,
    full_map: &LabelMap,
    x0: usize,
    y0: usize,
    patch: usize,
    resolution: usize,
) -> Result<Example, TrainError> {
    let label = full_map.crop(x0, y0, patch, patch)?;
    let label = if resolution < patch {
        downsample_map(&label, resolution, label.kind().pool_mode())?
    } else {
        label
    };
    Ok(Example {
        patch: crop_chw(&sample.image, x0, y0, patch, patch)?,
        label,
        count: sample.annotations.crop(x0, y0, patch, patch)?.count() as f64,
    })
}

/// Trains a fresh model. Every image must be at least one patch in each
/// dimension; training patches are uniform random crops and their labels are
/// cut from the full-image map.
///
/// Per-example gradients are computed in parallel and summed in batch order,
/// so a given seed reproduces the run bit for bit.
pub fn train(samples: &[Sample], config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let patch = config.model.patch;
    if let Some(s) = samples.iter().find(|s| s.width() < patch || s.height() < patch) {
        return Err(TrainError::ImageTooSmall {
            width: s.width(),
            height: s.height(),
            patch,
        });
    }
    let maps: Vec<LabelMap> = samples
        .par_iter()
        .map(|s| generate(&s.annotations, config.kind, &config.map))
        .collect::<Result<_, _>>()?;

    let mut model_cfg = config.model.clone();
    model_cfg.seed = config.seed;
    let mut model = MudModel::<f32>::new(model_cfg)?;
    if config.init_count_bias {
        let area = (patch * patch) as f64;
        let mean = samples
            .iter()
            .map(|s| s.count() as f64 * area / (s.width() * s.height()) as f64)
            .sum::<f64>()
            / samples.len() as f64;
        model.set_count_biases(mean as f32);
    }

    // Stream 0 of this seed initialized the weights.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let resolution = config.map.label_resolution;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = [0.0f64; 3];
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Example> = chunk
                .iter()
                .map(|&i| {
                    let s = &samples[i];
                    let x0 = rng.random_range(0..=s.width() - patch);
                    let y0 = rng.random_range(0..=s.height() - patch);
                    make_example(s, &maps[i], x0, y0, patch, resolution)
                })
                .collect::<Result<_, _>>()?;

            let results: Vec<(Vec<Option<Tensor<f32>>>, LossBreakdown)> = batch
                .par_iter()
                .map(|ex| -> Result<_, TrainError> {
                    let mut g = Graph::new();
                    let nodes = model.build(&mut g, model.params(), ex.patch.clone())?;
                    let loss = loss_nodes(&mut g, &nodes, &ex.label, ex.count)?;
                    let grads = g.backward(loss.total)?;
                    Ok((grads.into_vec(), loss.breakdown(&g)))
                })
                .collect::<Result<_, _>>()?;

            let scale = 1.0 / results.len() as f32;
            let mut acc: Vec<Option<Tensor<f32>>> = vec![None; model.params().len()];
            let mut batch_loss = 0.0;
            for (grads, loss) in results {
                if !loss.total.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        step,
                        loss: loss.total,
                    });
                }
                batch_loss += loss.total;
                sum[0] += loss.total;
                sum[1] += loss.map_loss;
                sum[2] += loss.count_loss;
                for (slot, g) in grads.into_iter().enumerate() {
                    let Some(g) = g else { continue };
                    match &mut acc[slot] {
                        Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b * scale),
                        None => acc[slot] = Some(g.map(|v| v * scale)),
                    }
                }
            }
            log::debug!("epoch {epoch} step {step}: batch L = {:.6}", batch_loss / chunk.len() as f64);
            adam.step(model.params_mut(), &acc);
        }
        let n = samples.len() as f64;
        let e = EpochLoss {
            epoch,
            total: sum[0] / n,
            map_loss: sum[1] / n,
            count_loss: sum[2] / n,
        };
        log::info!(
            "epoch {}: L = {:.6}, L_m = {:.6}, L_c = {:.6}",
            e.epoch,
            e.total,
            e.map_loss,
            e.count_loss
        );
        history.push(e);
    }
    Ok(TrainOutcome { model, history })
}

/// Sliding-window counts for every sample, compared with the annotation
/// counts.
pub fn evaluate(model: &MudModel<f32>, samples: &[Sample], step: usize) -> Result<MetricsReport, TrainError> {
    let pairs: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| Ok((s.count() as f64, predict_image(model, &s.image, step)?.count)))
        .collect::<Result<_, TrainError>>()?;
    compute_metrics(&pairs)
}

/// Predicts the mean training count, scaled by image area, for every test
/// image.
pub fn constant_baseline(train: &[Sample], test: &[Sample]) -> Result<MetricsReport, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let density = train
        .iter()
        .map(|s| s.count() as f64 / (s.width() * s.height()) as f64)
        .sum::<f64>()
        / train.len() as f64;
    let pairs: Vec<(f64, f64)> = test
        .iter()
        .map(|s| (s.count() as f64, density * (s.width() * s.height()) as f64))
        .collect();
    compute_metrics(&pairs)
}

/// Trains on `train` and evaluates on `test`.
pub fn run_experiment(
    train_set: &[Sample],
    test_set: &[Sample],
    config: &TrainConfig,
    step: usize,
) -> Result<(TrainOutcome, MetricsReport), TrainError> {
    let outcome = train(train_set, config)?;
    let report = evaluate(&outcome.model, test_set, step)?;
    Ok((outcome, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{AnnotationSet, Point};
    use crate::model::BackboneConfig;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                widths: [4, 4, 4],
                dense: false,
            },
            patch: 32,
            map_stack: vec![2, 2, 2],
            ..Default::default()
        }
    }

    fn tiny_config(seed: u64, epochs: usize) -> TrainConfig {
        TrainConfig {
            map: MapConfig {
                label_resolution: 32,
                ..Default::default()
            },
            epochs,
            batch_size: 2,
            seed,
            model: tiny_model(),
            ..Default::default()
        }
    }

    fn tiny_sample(seed: u64, side: usize) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads: Vec<Point> = (0..rng.random_range(1..6))
            .map(|_| Point::new(rng.random_range(0.0..side as f64), rng.random_range(0.0..side as f64)))
            .collect();
        let mut data = vec![0.1f32; 3 * side * side];
        for h in &heads {
            let at = h.y as usize * side + h.x as usize;
            for c in 0..3 {
                data[c * side * side + at] = 0.9;
            }
        }
        Sample::new(
            Tensor::from_vec(&[3, side, side], data).unwrap(),
            AnnotationSet::new(side, side, heads).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn same_seed_reproduces_checkpoint() {
        let data: Vec<Sample> = (0..5).map(|i| tiny_sample(i, 40)).collect();
        let a = train(&data, &tiny_config(3, 2)).unwrap();
        let b = train(&data, &tiny_config(3, 2)).unwrap();
        let c = train(&data, &tiny_config(4, 2)).unwrap();
        assert_eq!(a.model.checkpoint_bytes(), b.model.checkpoint_bytes());
        assert_eq!(a.history, b.history);
        assert_ne!(a.model.checkpoint_bytes(), c.model.checkpoint_bytes());
        assert_eq!(a.history.len(), 2);
    }

    #[test]
    fn history_terms_add_up() {
        let data: Vec<Sample> = (0..3).map(|i| tiny_sample(i, 32)).collect();
        let out = train(&data, &tiny_config(1, 3)).unwrap();
        for e in &out.history {
            assert!((e.total - e.map_loss - e.count_loss).abs() <= 1e-9 * e.total.max(1.0));
        }
        let csv = history_csv(&out.history);
        assert!(csv.starts_with("epoch,L,L_m,L_c\n1,"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn overfits_single_example() {
        let data = vec![tiny_sample(9, 32)];
        let cfg = TrainConfig {
            batch_size: 1,
            init_count_bias: false,
            ..tiny_config(2, 500)
        };
        let out = train(&data, &cfg).unwrap();
        let first = out.history[0].total;
        let last = out.history.last().unwrap().total;
        assert!(last < 0.01 * first, "{first} -> {last}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(train(&[], &tiny_config(0, 1)), Err(TrainError::EmptyDataset)));
        let small = vec![tiny_sample(0, 16)];
        assert!(matches!(train(&small, &tiny_config(0, 1)), Err(TrainError::ImageTooSmall { .. })));
        let bad = TrainConfig {
            learning_rate: f64::NAN,
            ..tiny_config(0, 1)
        };
        assert!(matches!(train(&[tiny_sample(0, 32)], &bad), Err(TrainError::Config(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            learning_rate: 1e30,
            ..tiny_config(0, 20)
        };
        let data: Vec<Sample> = (0..4).map(|i| tiny_sample(i, 32)).collect();
        assert!(matches!(train(&data, &cfg), Err(TrainError::NonFinite { .. })));
    }

    #[test]
    fn baseline_predicts_mean_density() {
        let train_set = vec![tiny_sample(1, 32), tiny_sample(2, 32)];
        let mean = (train_set[0].count() + train_set[1].count()) as f64 / 2.0;
        let r = constant_baseline(&train_set, &train_set).unwrap();
        assert!(r.pairs.iter().all(|&(_, p)| (p - mean).abs() < 1e-9));
    }

    #[test]
    fn evaluation_uses_annotation_counts() {
        let data: Vec<Sample> = (0..3).map(|i| tiny_sample(i, 48)).collect();
        let model = MudModel::<f32>::new(tiny_model()).unwrap();
        let r = evaluate(&model, &data, 16).unwrap();
        let truth: Vec<f64> = r.pairs.iter().map(|p| p.0).collect();
        assert_eq!(truth, data.iter().map(|s| s.count() as f64).collect::<Vec<_>>());
    }
}
