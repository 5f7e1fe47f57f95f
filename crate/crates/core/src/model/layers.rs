//! Parameter bookkeeping and the building blocks wired into the network.

use rand::Rng;

use super::ModelError;
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

/// Collects named parameter tensors and hands out their slot indices.
pub(crate) struct ParamBuilder<'r, F, R> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<F>>,
    rng: &'r mut R,
}

impl<'r, F: Scalar, R: Rng> ParamBuilder<'r, F, R> {
    pub fn new(rng: &'r mut R) -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            rng,
        }
    }

    /// Uniform He-style initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| F::from_f64(self.rng.random_range(-bound..bound))).collect();
        self.push(name, Tensor::from_vec(shape, data).expect("non-empty shape"))
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) -> usize {
        self.push(name, Tensor::zeros(shape))
    }

    fn push(&mut self, name: String, t: Tensor<F>) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }
}

/// Slots of a convolution's kernel and bias.
#[derive(Debug, Clone)]
pub(crate) struct ConvSlots {
    pub kernel: usize,
    pub bias: usize,
    pub stride: usize,
}

impl ConvSlots {
    pub fn create<F: Scalar, R: Rng>(
        b: &mut ParamBuilder<F, R>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        Self {
            kernel: b.weight(format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel),
            bias: b.zeros(format!("{name}.bias"), &[out_ch]),
            stride,
        }
    }

    pub fn apply<F: Scalar>(&self, g: &mut Graph<F>, p: &[NodeId], x: NodeId) -> Result<NodeId, ModelError> {
        Ok(g.conv2d(x, p[self.kernel], p[self.bias], self.stride)?)
    }
}

/// One downsampling block: 2x2 stride-2 conv then 1x1 conv, each followed by
/// leaky ReLU. A dense block concatenates the downsampled features with the
/// 1x1 conv output instead of replacing them.
#[derive(Debug, Clone)]
pub(crate) struct DownBlock {
    down: ConvSlots,
    mix: ConvSlots,
    dense: bool,
}

impl DownBlock {
    pub fn create<F: Scalar, R: Rng>(
        b: &mut ParamBuilder<F, R>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        dense: bool,
    ) -> Self {
        if dense {
            let first = out_ch / 2;
            Self {
                down: ConvSlots::create(b, &format!("{name}.down"), in_ch, first, 2, 2),
                mix: ConvSlots::create(b, &format!("{name}.mix"), first, out_ch - first, 1, 1),
                dense,
            }
        } else {
            Self {
                down: ConvSlots::create(b, &format!("{name}.down"), in_ch, out_ch, 2, 2),
                mix: ConvSlots::create(b, &format!("{name}.mix"), out_ch, out_ch, 1, 1),
                dense,
            }
        }
    }

    pub fn apply<F: Scalar>(&self, g: &mut Graph<F>, p: &[NodeId], x: NodeId, slope: F) -> Result<NodeId, ModelError> {
        let d = self.down.apply(g, p, x)?;
        let d = g.leaky_relu(d, slope);
        let m = self.mix.apply(g, p, d)?;
        let m = g.leaky_relu(m, slope);
        if self.dense {
            Ok(g.concat_channels(d, m)?)
        } else {
            Ok(m)
        }
    }
}

/// Geometry of a map module: which features it reads and how big the map is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapModuleSpec {
    pub in_channels: usize,
    /// Kernel size and stride of the transposed convolution.
    pub stride: usize,
    /// Side length of the predicted map.
    pub patch: usize,
    /// Output channels of the 2x2 stride-2 convolutions after the map.
    pub stack: Vec<usize>,
}

impl MapModuleSpec {
    /// Side length left after the stride-2 stack; the final convolution
    /// uses a kernel of this size to reduce the map to one value.
    pub fn final_kernel(&self) -> usize {
        self.patch >> self.stack.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.in_channels == 0 || self.stride == 0 || self.patch == 0 {
            return bad(format!("degenerate map module {self:?}"));
        }
        if self.patch % self.stride != 0 {
            return bad(format!("stride {} does not divide patch {}", self.stride, self.patch));
        }
        if self.patch % (1 << self.stack.len()) != 0 || self.final_kernel() == 0 {
            return bad(format!("patch {} not divisible through a {}-layer stride-2 stack", self.patch, self.stack.len()));
        }
        if self.stack.contains(&0) {
            return bad("zero-width map module layer".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MapModuleSlots {
    pub spec: MapModuleSpec,
    transpose: usize,
    stack: Vec<ConvSlots>,
    head: ConvSlots,
}

impl MapModuleSlots {
    pub fn create<F: Scalar, R: Rng>(b: &mut ParamBuilder<F, R>, name: &str, spec: MapModuleSpec) -> Self {
        let s = spec.stride;
        let transpose = b.weight(format!("{name}.upsample.weight"), &[spec.in_channels, 1, s, s], spec.in_channels);
        let mut stack = Vec::with_capacity(spec.stack.len());
        let mut ch = 1;
        for (i, &w) in spec.stack.iter().enumerate() {
            stack.push(ConvSlots::create(b, &format!("{name}.conv{i}"), ch, w, 2, 2));
            ch = w;
        }
        let head = ConvSlots::create(b, &format!("{name}.count"), ch, 1, spec.final_kernel(), 1);
        Self {
            spec,
            transpose,
            stack,
            head,
        }
    }

    pub fn count_bias_slot(&self) -> usize {
        self.head.bias
    }

    /// Returns the predicted map (1 x patch x patch) and count (shape `[1]`).
    pub fn apply<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &[NodeId],
        features: NodeId,
        slope: F,
    ) -> Result<(NodeId, NodeId), ModelError> {
        let (map, _, count) = self.apply_traced(g, p, features, slope)?;
        Ok((map, count))
    }

    /// [`Self::apply`] that also returns the output of every stack layer.
    pub fn apply_traced<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &[NodeId],
        features: NodeId,
        slope: F,
    ) -> Result<(NodeId, Vec<NodeId>, NodeId), ModelError> {
        let shape = g.value(features).shape().to_vec();
        let expected_side = self.spec.patch / self.spec.stride;
        if shape != [self.spec.in_channels, expected_side, expected_side] {
            return Err(ModelError::StageMismatch {
                expected: vec![self.spec.in_channels, expected_side, expected_side],
                got: shape,
            });
        }
        let map = g.transposed_conv2d(features, p[self.transpose], self.spec.stride)?;
        let mut x = map;
        let mut stages = Vec::with_capacity(self.stack.len());
        for conv in &self.stack {
            x = conv.apply(g, p, x)?;
            x = g.leaky_relu(x, slope);
            stages.push(x);
        }
        let count = self.head.apply(g, p, x)?;
        stages.push(count);
        let count = g.reshape(count, &[1])?;
        Ok((map, stages, count))
    }
}
