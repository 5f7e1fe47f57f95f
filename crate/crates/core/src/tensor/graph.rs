use super::kernels::{self, PoolMode};
use super::{Scalar, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<F> {
    Constant,
    Param(usize),
    Conv2d {
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        cols: Vec<F>,
    },
    TransposedConv2d {
        x: NodeId,
        kernel: NodeId,
        stride: usize,
    },
    LeakyRelu {
        x: NodeId,
        slope: F,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    Affine {
        x: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    Mse {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        factor: F,
    },
    Reshape {
        x: NodeId,
    },
    Pool2d {
        x: NodeId,
        factor: usize,
        mode: PoolMode,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
}

#[derive(Debug)]
struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
    needs_grad: bool,
}

/// Gradients of a scalar root with respect to every parameter leaf, indexed
/// by the parameter slot passed to [`Graph::param`].
#[derive(Debug, Clone)]
pub struct ParamGrads<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> ParamGrads<F> {
    pub fn get(&self, slot: usize) -> Option<&Tensor<F>> {
        self.grads.get(slot).and_then(Option::as_ref)
    }

    pub fn slots(&self) -> usize {
        self.grads.len()
    }

    pub fn into_vec(self) -> Vec<Option<Tensor<F>>> {
        self.grads
    }
}

/// Tape of operations. Nodes are appended in evaluation order, so reverse
/// insertion order is a valid reverse topological order.
#[derive(Debug, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    param_slots: usize,
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_slots: 0,
        }
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    /// Which side of zero each leaky-ReLU input lies on, in tape order.
    /// Two evaluations with equal patterns lie on the same linear piece.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::LeakyRelu { x, .. } = node.op {
                out.extend(self.nodes[x.0].value.data().iter().map(|&v| v > F::zero()));
            }
        }
        out
    }

    /// A leaf that never receives a gradient (inputs, targets).
    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    /// A trainable leaf. `slot` identifies it in the returned [`ParamGrads`].
    pub fn param(&mut self, slot: usize, value: Tensor<F>) -> NodeId {
        self.param_slots = self.param_slots.max(slot + 1);
        self.push(Op::Param(slot), value, true)
    }

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId, stride: usize) -> Result<NodeId, TensorError> {
        let (value, cols) = kernels::conv2d(self.value(x), self.value(kernel), self.value(bias), stride)?;
        let needs = self.needs(x) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                cols,
            },
            value,
            needs,
        ))
    }

    pub fn transposed_conv2d(&mut self, x: NodeId, kernel: NodeId, stride: usize) -> Result<NodeId, TensorError> {
        let value = kernels::transposed_conv2d(self.value(x), self.value(kernel), stride)?;
        let needs = self.needs(x) || self.needs(kernel);
        Ok(self.push(Op::TransposedConv2d { x, kernel, stride }, value, needs))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: F) -> NodeId {
        let value = kernels::leaky_relu(self.value(x), slope);
        let needs = self.needs(x);
        self.push(Op::LeakyRelu { x, slope }, value, needs)
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let value = kernels::global_avg_pool(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(Op::GlobalAvgPool { x }, value, needs))
    }

    pub fn affine(&mut self, x: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let value = kernels::affine(self.value(x), self.value(weights), self.value(bias))?;
        let needs = self.needs(x) || self.needs(weights) || self.needs(bias);
        Ok(self.push(Op::Affine { x, weights, bias }, value, needs))
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = kernels::mse(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mse { a, b }, value, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::Shape {
                op: "add",
                detail: format!("{:?} vs {:?}", va.shape(), vb.shape()),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, value, needs))
    }

    /// Sums a non-empty list of same-shaped nodes left to right.
    pub fn sum_all(&mut self, ids: &[NodeId]) -> Result<NodeId, TensorError> {
        let (&first, rest) = ids.split_first().ok_or(TensorError::Shape {
            op: "sum_all",
            detail: "empty operand list".into(),
        })?;
        rest.iter().try_fold(first, |acc, &id| self.add(acc, id))
    }

    pub fn scale(&mut self, x: NodeId, factor: F) -> NodeId {
        let value = self.value(x).map(|v| v * factor);
        let needs = self.needs(x);
        self.push(Op::Scale { x, factor }, value, needs)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let value = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(Op::Reshape { x }, value, needs))
    }

    pub fn pool2d(&mut self, x: NodeId, factor: usize, mode: PoolMode) -> Result<NodeId, TensorError> {
        let value = kernels::pool2d(self.value(x), factor, mode)?;
        let needs = self.needs(x);
        Ok(self.push(Op::Pool2d { x, factor, mode }, value, needs))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = kernels::concat_channels(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Concat { a, b }, value, needs))
    }

    /// Reverse-mode pass from a single-element root.
    pub fn backward(&self, root: NodeId) -> Result<ParamGrads<F>, TensorError> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params: Vec<Option<Tensor<F>>> = (0..self.param_slots).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_value.shape(), F::one()));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut send = |target: NodeId, grad: Tensor<F>| {
                if self.nodes[target.0].needs_grad {
                    accumulate(&mut grads[target.0], grad);
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(slot) => accumulate(&mut params[*slot], g),
                Op::Conv2d {
                    x,
                    kernel,
                    bias,
                    stride,
                    cols,
                } => {
                    let xs = self.value(*x).chw()?;
                    let (dx, dk, db) =
                        kernels::conv2d_backward(&g, xs, self.value(*kernel), cols, *stride, self.needs(*x));
                    if let Some(dx) = dx {
                        send(*x, dx);
                    }
                    send(*kernel, dk);
                    send(*bias, db);
                }
                Op::TransposedConv2d { x, kernel, stride } => {
                    let (dx, dk) = kernels::transposed_conv2d_backward(
                        &g,
                        self.value(*x),
                        self.value(*kernel),
                        *stride,
                        self.needs(*x),
                    );
                    if let Some(dx) = dx {
                        send(*x, dx);
                    }
                    send(*kernel, dk);
                }
                Op::LeakyRelu { x, slope } => send(*x, kernels::leaky_relu_backward(&g, self.value(*x), *slope)),
                Op::GlobalAvgPool { x } => send(*x, kernels::global_avg_pool_backward(&g, self.value(*x).chw()?)),
                Op::Affine { x, weights, bias } => {
                    let (dx, dw, db) = kernels::affine_backward(&g, self.value(*x), self.value(*weights));
                    send(*x, dx);
                    send(*weights, dw);
                    send(*bias, db);
                }
                Op::Mse { a, b } => {
                    let da = kernels::mse_backward(g.data()[0], self.value(*a), self.value(*b));
                    if self.needs(*b) {
                        send(*b, da.map(|v| -v));
                    }
                    send(*a, da);
                }
                Op::Add { a, b } => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Scale { x, factor } => send(*x, g.map(|v| v * *factor)),
                Op::Reshape { x } => {
                    let shape = self.value(*x).shape().to_vec();
                    send(*x, g.reshape(&shape)?);
                }
                Op::Pool2d { x, factor, mode } => {
                    send(*x, kernels::pool2d_backward(&g, self.value(*x).chw()?, *factor, *mode))
                }
                Op::Concat { a, b } => {
                    let split = self.value(*a).len();
                    let mut data = g.into_data();
                    let tail = data.split_off(split);
                    send(*a, Tensor::from_vec(self.value(*a).shape(), data)?);
                    send(*b, Tensor::from_vec(self.value(*b).shape(), tail)?);
                }
            }
        }
        Ok(ParamGrads { grads: params })
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<Tensor<F>>, grad: Tensor<F>) {
    match slot {
        Some(existing) => {
            for (a, &b) in existing.data_mut().iter_mut().zip(grad.data()) {
                *a += b;
            }
        }
        None => *slot = Some(grad),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_scalar_root() {
        let mut g = Graph::<f64>::new();
        let p = g.param(0, Tensor::zeros(&[2]));
        assert_eq!(g.backward(p).unwrap_err(), TensorError::NonScalarRoot(vec![2]));
    }

    #[test]
    fn shared_parameter_accumulates() {
        // f(w) = mse(w, 0) + mse(w, 0) = 2 * mean(w^2)
        let mut g = Graph::<f64>::new();
        let w = g.param(0, Tensor::from_vec(&[2], vec![1.0, 3.0]).unwrap());
        let zero = g.constant(Tensor::zeros(&[2]));
        let a = g.mse(w, zero).unwrap();
        let b = g.mse(w, zero).unwrap();
        let root = g.add(a, b).unwrap();
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(0).unwrap().data(), &[2.0, 6.0]);
    }

    #[test]
    fn constants_get_no_gradient_work() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 4, 4], 1.0));
        let k = g.param(0, Tensor::full(&[1, 1, 2, 2], 0.5));
        let b = g.param(1, Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b, 2).unwrap();
        let t = g.constant(Tensor::zeros(&[1, 2, 2]));
        let l = g.mse(y, t).unwrap();
        let grads = g.backward(l).unwrap();
        // y = 2 everywhere, dL/dy = 2*2/4 = 1, dL/dk = sum over outputs of x = 4
        assert_eq!(grads.get(0).unwrap().data(), &[4.0; 4]);
        assert_eq!(grads.get(1).unwrap().data(), &[4.0]);
    }
}
