//! Reverse-mode differentiation over a closed set of tensor ops.
//!
//! A [`Graph`] is a Wengert list: every op is evaluated eagerly as it is
//! appended, and its inputs always precede it. Leaves hold parameters and
//! inputs; a leaf participates in differentiation when its tensor
//! `requires_grad`. [`Graph::evaluate`] replays the list with rebound leaves
//! and [`Graph::backward`] walks it in reverse.

pub mod gradcheck;
mod ops;

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) use ops::sigmoid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The closed set of differentiable ops.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `(m, k) × (k, n) → (m, n)`
    MatMul,
    /// Elementwise sum; the right operand may be a trailing-suffix broadcast.
    Add,
    Scale(f64),
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    Reshape(Vec<usize>),
    /// Rank-2 transpose.
    Transpose,
    /// Normalizes over the last axis; inputs are `(x, gain, bias)`.
    LayerNorm {
        eps: f64,
    },
    /// Exact erf form.
    Gelu,
    Softmax {
        axis: usize,
    },
    /// Zero-padded; inputs are `(x[C,H,W], w[O,C,kh,kw], bias[O]?)`.
    Conv2d {
        stride: usize,
        padding: usize,
    },
    Relu,
    Sigmoid,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Scale(_) => "scale",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Reshape(_) => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::LayerNorm { .. } => "layernorm",
            OpKind::Gelu => "gelu",
            OpKind::Softmax { .. } => "softmax",
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
        }
    }
}

#[derive(Debug)]
enum Source {
    Leaf,
    Op(OpKind),
}

#[derive(Debug)]
struct Node {
    source: Source,
    inputs: Vec<NodeId>,
    value: Tensor,
    aux: Vec<f64>,
    /// True when some trainable leaf lies upstream.
    needs_grad: bool,
    name: Option<String>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    names: HashMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a named leaf. Names are unique within a graph.
    pub fn leaf(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<NodeId> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(Error::invalid(format!("leaf `{name}` is already bound")));
        }
        let id = NodeId(self.nodes.len());
        let needs_grad = tensor.requires_grad();
        let mut value = tensor;
        value.set_grad(None);
        self.nodes.push(Node {
            source: Source::Leaf,
            inputs: Vec::new(),
            value,
            aux: Vec::new(),
            needs_grad,
            name: Some(name.clone()),
        });
        self.names.insert(name, id);
        Ok(id)
    }

    /// Adds an unnamed constant leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            source: Source::Leaf,
            inputs: Vec::new(),
            value: tensor.with_requires_grad(false),
            aux: Vec::new(),
            needs_grad: false,
            name: None,
        });
        id
    }

    /// Looks up a named node.
    pub fn get(&self, name: &str) -> Option<NodeId> {
        self.names.get(name).copied()
    }

    /// Names an op output so [`Graph::evaluate`] reports it.
    pub fn set_name(&mut self, id: NodeId, name: impl Into<String>) -> Result<()> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(Error::invalid(format!("name `{name}` is already bound")));
        }
        self.nodes[id.0].name = Some(name.clone());
        self.names.insert(name, id);
        Ok(())
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Appends an op application and evaluates it immediately.
    pub fn apply(&mut self, op: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let fwd = {
            let values: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            ops::forward(&op, &values)?
        };
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            source: Source::Op(op),
            inputs: inputs.to_vec(),
            value: fwd.value,
            aux: fwd.aux,
            needs_grad,
            name: None,
        });
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.apply(OpKind::Scale(s), &[a])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(OpKind::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        self.apply(OpKind::Slice { axis, start, len }, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        self.apply(OpKind::Reshape(shape.into()), &[a])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Transpose, &[a])
    }

    pub fn layernorm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        self.apply(OpKind::LayerNorm { eps }, &[x, gain, bias])
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Gelu, &[a])
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(OpKind::Softmax { axis }, &[a])
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let op = OpKind::Conv2d { stride, padding };
        match bias {
            Some(b) => self.apply(op, &[x, w, b]),
            None => self.apply(op, &[x, w]),
        }
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Relu, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    /// `x · w + b` for token rows `x[t, in]`, `w[in, out]`, `b[out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Sum of all elements as a `(1, 1)` node, built as a product with a
    /// constant ones vector.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.nodes[a.0].value.numel();
        let ones = self.constant(Tensor::filled([n, 1], 1.0));
        self.dot_const(a, ones)
    }

    /// Inner product of `a` with a constant `weights` tensor of equal size,
    /// as a `(1, 1)` node.
    pub fn dot(&mut self, a: NodeId, weights: &Tensor) -> Result<NodeId> {
        let n = self.nodes[a.0].value.numel();
        if weights.numel() != n {
            return Err(Error::Shape {
                op: "dot",
                shapes: vec![self.shape(a).to_vec(), weights.shape().to_vec()],
            });
        }
        let w = self.constant(weights.reshaped([n, 1])?);
        self.dot_const(a, w)
    }

    fn dot_const(&mut self, a: NodeId, column: NodeId) -> Result<NodeId> {
        let n = self.nodes[a.0].value.numel();
        let row = self.reshape(a, [1, n])?;
        self.matmul(row, column)
    }

    /// Rebinds the named leaves and replays every op in order. Returns the
    /// values of all named op outputs.
    pub fn evaluate(&mut self, inputs: &[(&str, Tensor)]) -> Result<BTreeMap<String, Tensor>> {
        for (name, tensor) in inputs {
            let id = self.get(name).ok_or_else(|| Error::UnknownName(name.to_string()))?;
            self.rebind(id, tensor.clone())?;
        }
        self.replay()?;
        Ok(self
            .nodes
            .iter()
            .filter(|n| matches!(n.source, Source::Op(_)))
            .filter_map(|n| n.name.clone().map(|name| (name, n.value.clone())))
            .collect())
    }

    fn rebind(&mut self, id: NodeId, tensor: Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.source, Source::Leaf) {
            return Err(Error::invalid(format!("node {} is not a leaf", id.0)));
        }
        if node.value.shape() != tensor.shape() {
            return Err(Error::Shape {
                op: "bind",
                shapes: vec![node.value.shape().to_vec(), tensor.shape().to_vec()],
            });
        }
        let requires_grad = node.value.requires_grad();
        node.value = tensor.with_requires_grad(requires_grad);
        Ok(())
    }

    fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            let Source::Op(op) = &self.nodes[i].source else {
                continue;
            };
            let fwd = {
                let values: Vec<&Tensor> = self.nodes[i].inputs.iter().map(|j| &self.nodes[j.0].value).collect();
                ops::forward(op, &values)?
            };
            self.nodes[i].value = fwd.value;
            self.nodes[i].aux = fwd.aux;
        }
        Ok(())
    }

    /// Back-propagates from a scalar output. Afterwards every trainable leaf
    /// holds `d(output)/d(leaf)` in its gradient slot; unreachable trainable
    /// leaves hold zeros.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        let shape = self.shape(output).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarOutput(shape));
        }
        self.backward_seeded(vec![(output, vec![1.0])])
    }

    /// Back-propagates explicit output cotangents, one per seeded node.
    /// Seeds on the same node add.
    pub fn backward_seeded(&mut self, seeds: Vec<(NodeId, Vec<f64>)>) -> Result<()> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (id, seed) in seeds {
            if seed.len() != self.nodes[id.0].value.numel() {
                return Err(Error::Shape {
                    op: "backward",
                    shapes: vec![self.shape(id).to_vec(), vec![seed.len()]],
                });
            }
            accumulate(&mut grads[id.0], seed);
        }
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            let Source::Op(op) = &node.source else {
                continue;
            };
            if !node.needs_grad {
                continue;
            }
            let Some(dout) = grads[i].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|j| &self.nodes[j.0].value).collect();
            let wants: Vec<bool> = node.inputs.iter().map(|j| self.nodes[j.0].needs_grad).collect();
            let contributions = ops::backward(op, &inputs, &node.value, &node.aux, &dout, &wants);
            for (j, g) in node.inputs.iter().zip(contributions) {
                if let Some(g) = g {
                    accumulate(&mut grads[j.0], g);
                }
            }
        }
        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            if matches!(node.source, Source::Leaf) && node.value.requires_grad() {
                let n = node.value.numel();
                node.value.set_grad(Some(grad.unwrap_or_else(|| vec![0.0; n])));
            }
        }
        Ok(())
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad()
    }

    /// Named trainable leaves with their gradients, in creation order.
    pub fn leaf_grads(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.nodes
            .iter()
            .filter_map(|n| match (&n.source, &n.name, n.value.grad()) {
                (Source::Leaf, Some(name), Some(g)) => Some((name.as_str(), g)),
                _ => None,
            })
    }

    /// Maximum relative discrepancy between autodiff and central differences
    /// of the scalar `output` with respect to every element of `leaf`:
    /// `max |ad − fd| / max(1, |fd|)`.
    ///
    /// The graph is left evaluated at the original leaf value.
    pub fn finite_diff_check(&mut self, output: NodeId, leaf: NodeId, h: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(Error::invalid(format!(
                "finite-difference step must be positive, got {h}"
            )));
        }
        let shape = self.shape(output).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarOutput(shape));
        }
        if !matches!(self.nodes[leaf.0].source, Source::Leaf) {
            return Err(Error::invalid("finite-difference target must be a leaf"));
        }
        let original = self.nodes[leaf.0].value.clone();
        let was_trainable = original.requires_grad();

        // Autodiff with the leaf temporarily marked trainable so the gradient
        // reaches it even when it is a frozen input.
        self.set_trainable(leaf, true);
        self.backward(output)?;
        let ad = self.grad(leaf).map(<[f64]>::to_vec).unwrap_or_default();
        self.set_trainable(leaf, was_trainable);
        if ad.len() != original.numel() {
            return Err(Error::invalid("finite-difference target received no gradient"));
        }

        let mut worst: f64 = 0.0;
        for (k, &ad_k) in ad.iter().enumerate() {
            let mut plus = original.clone();
            plus.data_mut()[k] += h;
            self.nodes[leaf.0].value = plus;
            self.replay()?;
            let f_plus = self.value(output).data()[0];

            let mut minus = original.clone();
            minus.data_mut()[k] -= h;
            self.nodes[leaf.0].value = minus;
            self.replay()?;
            let f_minus = self.value(output).data()[0];

            let fd = (f_plus - f_minus) / (2.0 * h);
            worst = worst.max((ad_k - fd).abs() / fd.abs().max(1.0));
        }
        self.nodes[leaf.0].value = original;
        self.replay()?;
        Ok(worst)
    }

    /// Flips a leaf's trainable flag and recomputes downstream reachability.
    fn set_trainable(&mut self, leaf: NodeId, trainable: bool) {
        self.nodes[leaf.0].value.set_requires_grad(trainable);
        for i in 0..self.nodes.len() {
            let needs = match self.nodes[i].source {
                Source::Leaf => self.nodes[i].value.requires_grad(),
                Source::Op(_) => self.nodes[i].inputs.iter().any(|j| self.nodes[j.0].needs_grad),
            };
            self.nodes[i].needs_grad = needs;
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}
