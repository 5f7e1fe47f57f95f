//! The multi-scale upsampling counting network at desk scale.
//!
//! A three-stage strided backbone produces features at 1/8, 1/16 and 1/32 of
//! the patch size. Each stage output feeds a map module: a transposed
//! convolution whose kernel equals its stride upsamples the features to a
//! full-size predicted map, and a small stride-2 convolution stack regresses
//! a count from that map. The last stage also feeds a global-average-pool
//! count head. The final count is the mean of the three module counts and
//! the end count.

mod config;
mod gradient;
mod layers;
mod loss;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::labelmaps::MapError;
use crate::tensor::{read_checkpoint, write_checkpoint, CheckpointError, Graph, NodeId, Scalar, Tensor, TensorError};

pub use config::{BackboneConfig, ModelConfig};
pub use gradient::{check_model_gradients, ModelGradCheck, Precision};
pub use layers::MapModuleSpec;
pub use loss::{compute_loss, loss_nodes, LossBreakdown, LossNodes};

use layers::{DownBlock, MapModuleSlots, ParamBuilder};

/// Number of map modules.
pub const MAP_MODULES: usize = 3;

/// Output strides of the three backbone stages.
pub const STAGE_STRIDES: [usize; 3] = [8, 16, 32];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("expected input of shape {expected:?}, got {got:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("map module expects features {expected:?}, got {got:?}")]
    StageMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("label resolution {label} cannot be matched by pooling a {patch}x{patch} prediction")]
    Resolution { label: usize, patch: usize },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Evaluated network outputs for one patch.
#[derive(Debug, Clone)]
pub struct PredictionResult<F> {
    /// One predicted map (1 x patch x patch) per module, shallowest first.
    pub maps: Vec<Tensor<F>>,
    pub module_counts: [f64; MAP_MODULES],
    pub end_count: f64,
    pub final_count: f64,
}

/// Graph handles for the outputs of [`MudModel::build`].
#[derive(Debug, Clone, Copy)]
pub struct PredictionNodes {
    pub maps: [NodeId; MAP_MODULES],
    pub module_counts: [NodeId; MAP_MODULES],
    pub end_count: NodeId,
    pub final_count: NodeId,
}

/// `(end + sum(module counts)) / (m + 1)`.
pub fn final_count(end_count: f64, module_counts: &[f64]) -> f64 {
    (end_count + module_counts.iter().sum::<f64>()) / (module_counts.len() + 1) as f64
}

#[derive(Debug, Clone)]
struct Layout {
    stages: [Vec<DownBlock>; 3],
    maps: [MapModuleSlots; MAP_MODULES],
    end_weight: usize,
    end_bias: usize,
}

#[derive(Debug, Clone)]
pub struct MudModel<F> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<F>>,
    layout: Layout,
}

impl<F: Scalar> MudModel<F> {
    /// Builds a freshly initialized network; initialization is fully
    /// determined by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut b = ParamBuilder::<F, _>::new(&mut rng);
        let [c1, c2, c3] = config.backbone.widths;
        let dense = config.backbone.dense;
        let hidden = (c1 / 2).max(4);

        let stage1 = vec![
            DownBlock::create(&mut b, "backbone.stage1.block0", 3, hidden, dense),
            DownBlock::create(&mut b, "backbone.stage1.block1", hidden, hidden, dense),
            DownBlock::create(&mut b, "backbone.stage1.block2", hidden, c1, dense),
        ];
        let stage2 = vec![DownBlock::create(&mut b, "backbone.stage2.block0", c1, c2, dense)];
        let stage3 = vec![DownBlock::create(&mut b, "backbone.stage3.block0", c2, c3, dense)];

        let maps = [0, 1, 2].map(|j| {
            let spec = MapModuleSpec {
                in_channels: config.backbone.widths[j],
                stride: STAGE_STRIDES[j],
                patch: config.patch,
                stack: config.map_stack.clone(),
            };
            MapModuleSlots::create(&mut b, &format!("map{}", j + 1), spec)
        });
        let end_weight = b.weight("end.weight".into(), &[1, c3], c3);
        let end_bias = b.zeros("end.bias".into(), &[1]);
        let ParamBuilder { names, tensors, .. } = b;
        Ok(Self {
            config,
            names,
            params: tensors,
            layout: Layout {
                stages: [stage1, stage2, stage3],
                maps,
                end_weight,
                end_bias,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<F>)> {
        self.names.iter().cloned().zip(self.params.iter().cloned()).collect()
    }

    /// Same network and weights in another precision.
    pub fn cast<G: Scalar>(&self) -> MudModel<G> {
        MudModel {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            layout: self.layout.clone(),
        }
    }

    /// Sets the bias of every count output (three module heads and the end
    /// head), so an untrained network predicts `value` for zero features.
    pub fn set_count_biases(&mut self, value: F) {
        let slots = self
            .layout
            .maps
            .iter()
            .map(MapModuleSlots::count_bias_slot)
            .chain([self.layout.end_bias]);
        for slot in slots.collect::<Vec<_>>() {
            self.params[slot].data_mut().fill(value);
        }
    }

    fn slope(&self) -> F {
        F::from_f64(self.config.slope)
    }

    /// Registers `params` as slots `0..n` on the graph.
    pub fn register_params(&self, g: &mut Graph<F>, params: &[Tensor<F>]) -> Vec<NodeId> {
        params.iter().enumerate().map(|(i, t)| g.param(i, t.clone())).collect()
    }

    pub fn check_input(&self, patch: &Tensor<F>) -> Result<(), ModelError> {
        let expected = [3, self.config.patch, self.config.patch];
        if patch.shape() != expected {
            return Err(ModelError::InputShape {
                expected: expected.to_vec(),
                got: patch.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Backbone stage outputs on the graph: strides 8, 16 and 32.
    pub fn backbone_nodes(&self, g: &mut Graph<F>, p: &[NodeId], x: NodeId) -> Result<[NodeId; 3], ModelError> {
        let slope = self.slope();
        let mut out = [x; 3];
        let mut cur = x;
        for (s, blocks) in self.layout.stages.iter().enumerate() {
            for block in blocks {
                cur = block.apply(g, p, cur, slope)?;
            }
            out[s] = cur;
        }
        Ok(out)
    }

    /// Predicted map and count of map module `j` (0-based).
    pub fn map_module_nodes(
        &self,
        g: &mut Graph<F>,
        p: &[NodeId],
        j: usize,
        features: NodeId,
    ) -> Result<(NodeId, NodeId), ModelError> {
        self.layout.maps[j].apply(g, p, features, self.slope())
    }

    /// Global average pool of the last stage followed by an affine map to a
    /// scalar.
    pub fn end_count_nodes(&self, g: &mut Graph<F>, p: &[NodeId], f3: NodeId) -> Result<NodeId, ModelError> {
        let pooled = g.global_avg_pool(f3)?;
        Ok(g.affine(pooled, p[self.layout.end_weight], p[self.layout.end_bias])?)
    }

    /// Records the full forward pass for `patch` using `params` in place of
    /// the model's own weights.
    pub fn build(&self, g: &mut Graph<F>, params: &[Tensor<F>], patch: Tensor<F>) -> Result<PredictionNodes, ModelError> {
        self.check_input(&patch)?;
        let p = self.register_params(g, params);
        let x = g.constant(patch);
        let feats = self.backbone_nodes(g, &p, x)?;
        let mut maps = [x; MAP_MODULES];
        let mut counts = [x; MAP_MODULES];
        for j in 0..MAP_MODULES {
            let (m, c) = self.map_module_nodes(g, &p, j, feats[j])?;
            maps[j] = m;
            counts[j] = c;
        }
        let end_count = self.end_count_nodes(g, &p, feats[2])?;
        let total = g.sum_all(&[end_count, counts[0], counts[1], counts[2]])?;
        let final_count = g.scale(total, F::from_f64(1.0 / (MAP_MODULES + 1) as f64));
        Ok(PredictionNodes {
            maps,
            module_counts: counts,
            end_count,
            final_count,
        })
    }

    pub fn backbone_forward(&self, patch: &Tensor<F>) -> Result<[Tensor<F>; 3], ModelError> {
        self.check_input(patch)?;
        let mut g = Graph::new();
        let p = self.register_params(&mut g, &self.params);
        let x = g.constant(patch.clone());
        let f = self.backbone_nodes(&mut g, &p, x)?;
        Ok(f.map(|id| g.value(id).clone()))
    }

    pub fn map_module_forward(&self, j: usize, features: &Tensor<F>) -> Result<(Tensor<F>, f64), ModelError> {
        let mut g = Graph::new();
        let p = self.register_params(&mut g, &self.params);
        let x = g.constant(features.clone());
        let (m, c) = self.map_module_nodes(&mut g, &p, j, x)?;
        Ok((g.value(m).clone(), g.value(c).data()[0].as_f64()))
    }

    pub fn end_count_head(&self, f3: &Tensor<F>) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let p = self.register_params(&mut g, &self.params);
        let x = g.constant(f3.clone());
        let c = self.end_count_nodes(&mut g, &p, x)?;
        Ok(g.value(c).data()[0].as_f64())
    }

    pub fn forward(&self, patch: &Tensor<F>) -> Result<PredictionResult<F>, ModelError> {
        let mut g = Graph::new();
        let nodes = self.build(&mut g, &self.params, patch.clone())?;
        Ok(collect_prediction(&g, &nodes))
    }

    /// Replaces weights from named tensors; every parameter must be present
    /// with its exact shape.
    pub fn load_params(&mut self, named: Vec<(String, Tensor<f32>)>) -> Result<(), ModelError> {
        if named.len() != self.params.len() {
            return Err(ModelError::ParamMismatch(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                named.len()
            )));
        }
        for (name, t) in named {
            let slot = self
                .names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| ModelError::ParamMismatch(format!("unknown tensor {name}")))?;
            if t.shape() != self.params[slot].shape() {
                return Err(ModelError::ParamMismatch(format!(
                    "{name}: expected {:?}, found {:?}",
                    self.params[slot].shape(),
                    t.shape()
                )));
            }
            self.params[slot] = t.cast();
        }
        Ok(())
    }

    /// Writes the weights to `path` and the configuration to
    /// [`config_path`]`(path)`.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let io = |source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        write_checkpoint(&mut w, &self.named_params()).map_err(io)?;
        let cfg = config_path(path);
        std::fs::write(&cfg, self.config.to_text()).map_err(|source| ModelError::Io { path: cfg, source })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let cfg = config_path(path);
        let text = std::fs::read_to_string(&cfg).map_err(|source| ModelError::Io { path: cfg, source })?;
        let config = ModelConfig::from_text(&text)?;
        let mut model = Self::new(config)?;
        let file = File::open(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        model.load_params(read_checkpoint(&mut BufReader::new(file))?)?;
        Ok(model)
    }

    /// Serialized weights, as written by [`MudModel::save`].
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &self.named_params()).expect("writing to memory");
        buf
    }
}

/// The key-value configuration file stored next to a checkpoint.
pub fn config_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

pub fn collect_prediction<F: Scalar>(g: &Graph<F>, nodes: &PredictionNodes) -> PredictionResult<F> {
    let scalar = |id: NodeId| g.value(id).data()[0].as_f64();
    PredictionResult {
        maps: nodes.maps.iter().map(|&id| g.value(id).clone()).collect(),
        module_counts: nodes.module_counts.map(scalar),
        end_count: scalar(nodes.end_count),
        final_count: scalar(nodes.final_count),
    }
}

/// A stand-alone map module with its own weights, for experimenting with
/// module geometry outside the full network.
#[derive(Debug, Clone)]
pub struct MapModule<F> {
    slots: MapModuleSlots,
    names: Vec<String>,
    params: Vec<Tensor<F>>,
    slope: f64,
}

impl<F: Scalar> MapModule<F> {
    pub fn new(spec: MapModuleSpec, seed: u64, slope: f64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::<F, _>::new(&mut rng);
        let slots = MapModuleSlots::create(&mut b, "map", spec);
        let ParamBuilder { names, tensors, .. } = b;
        Ok(Self {
            slots,
            names,
            params: tensors,
            slope,
        })
    }

    pub fn spec(&self) -> &MapModuleSpec {
        &self.slots.spec
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    /// Records the module on `g` with `params` as slots `0..n`.
    pub fn build(&self, g: &mut Graph<F>, params: &[Tensor<F>], features: Tensor<F>) -> Result<(NodeId, NodeId), ModelError> {
        let p: Vec<NodeId> = params.iter().enumerate().map(|(i, t)| g.param(i, t.clone())).collect();
        let x = g.constant(features);
        self.slots.apply(g, &p, x, F::from_f64(self.slope))
    }

    pub fn forward(&self, features: &Tensor<F>) -> Result<(Tensor<F>, f64), ModelError> {
        let mut g = Graph::new();
        let (m, c) = self.build(&mut g, &self.params, features.clone())?;
        Ok((g.value(m).clone(), g.value(c).data()[0].as_f64()))
    }
    /// Shapes of the map and of each layer after it, ending with the
    /// `1 x 1 x 1` count.
    pub fn stage_shapes(&self, features: &Tensor<F>) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut g = Graph::new();
        let p: Vec<NodeId> = self.params.iter().enumerate().map(|(i, t)| g.param(i, t.clone())).collect();
        let x = g.constant(features.clone());
        let (map, stages, _) = self.slots.apply_traced(&mut g, &p, x, F::from_f64(self.slope))?;
        Ok(std::iter::once(map).chain(stages).map(|id| g.value(id).shape().to_vec()).collect())
    }
}
